#pragma once

// Long-term (average) power-constraint machinery.
//
// Under a long-term constraint the transmitter may spend a different total
// power on every fading draw as long as the average stays below the budget.
// The optimal strategy has a two-part structure:
//
//   1. a per-draw minimum-power allocation: the cheapest power vector that
//      delivers the target rate R on this draw's gains, for a given
//      allocation family (exact input-optimized, truncated, refined, or the
//      closed-form surrogate variants of the latter two);
//   2. a transmission policy: transmit when that minimum cost u is below a
//      threshold s*, stay silent otherwise, with a randomized tie-break w*
//      on the threshold itself so the average power meets the budget with
//      equality.
//
// Calibration estimates (s*, w*) from a Monte Carlo sample of u; evaluation
// then reduces to comparing fresh draws of u against the threshold.

#include <cstdint>
#include <string>
#include <vector>

#include "bfpa/alloc_short.hpp"
#include "bfpa/awgn_metrics.hpp"
#include "bfpa/common.hpp"
#include "bfpa/fading.hpp"
#include "bfpa/rng.hpp"

namespace bfpa {

// Substream ids used by the samplers in this module.  They sit in the upper
// half of the stream space so they can never collide with the small
// point-indexed streams the short-term sweeps use; calibration and
// evaluation never share random numbers even under the same seed.
inline constexpr std::uint64_t kCalibrationStream = 0x8000000000000001ull;
inline constexpr std::uint64_t kEvaluationStream = 0x8000000000000002ull;

// ---------------------------------------------------------------------------
// Minimum-power rules
// ---------------------------------------------------------------------------

enum class MinPowerKind {
  kOptimal,          // exact MMSE-inverse shape, rate from the metric table
  kTruncated,        // truncated-waterfilling shape, rate from the table
  kRefined,          // refined-truncation shape, rate from the table
  kTruncatedApprox,  // truncated shape, rate from the fitted surrogate
  kRefinedApprox,    // refined shape, rate from the fitted surrogate
};

std::string min_power_kind_id(MinPowerKind kind);
MinPowerKind min_power_kind_from_id(const std::string& id);

// A minimum-power rule: an allocation shape (how per-block SNR grows with
// the threshold) plus a rate functional the threshold is calibrated against.
// Exact kinds solve sum_b I_X(p_b gamma_b) = B R with the table's mutual
// information; approx kinds solve it with the fitted surrogate at the
// inflated target R + delta_r, which restores the rate guarantee.
//
// The referenced table / fit must outlive the rule.
struct MinPowerRule {
  MinPowerKind kind = MinPowerKind::kOptimal;
  double rate = 0.0;                // target rate R, bits per block use
  const MetricTable* table = nullptr;  // exact kinds
  const MiFit* fit = nullptr;          // approx kinds
  double beta = 0.0;                   // truncated kinds
  RefinedParams refined;               // refined kinds

  // Per-block rate target the threshold equation is solved against
  // (R for exact kinds, R + delta_r for approx kinds).
  double rate_target() const;
  void validate() const;  // throws ValidationError
};

MinPowerRule make_min_power_rule_opt(const MetricTable& table, double rate);
MinPowerRule make_min_power_rule_tw(const MetricTable& table, double rate,
                                    double beta);
MinPowerRule make_min_power_rule_ref(const MetricTable& table, double rate,
                                     const RefinedParams& params);
MinPowerRule make_min_power_rule_tw_approx(const MiFit& fit, double rate,
                                           double beta);
MinPowerRule make_min_power_rule_ref_approx(const MiFit& fit, double rate,
                                            const RefinedParams& params);

struct MinPowerResult {
  Array powers;            // per-block powers achieving the rate target
  double level = 0.0;      // threshold eta solving the rate equation
  double mean_power = 0.0; // u = sum(powers) / blocks, the draw's cost
};

// Cheapest allocation of the rule's shape delivering the rate target on
// `gains`.  Throws NumericRangeError when the draw cannot support the rate
// (e.g. blocks with exactly zero gain under a capped shape).
MinPowerResult min_power_alloc(const MinPowerRule& rule, ArrayRef gains);

// ---------------------------------------------------------------------------
// Threshold calibration
// ---------------------------------------------------------------------------

// Sorted Monte Carlo sample of the per-draw cost u, with prefix sums
// (prefix_sum[j] = sum of the j smallest costs) so thresholds and transmit
// powers for any budget can be read off without re-simulation.
struct CalibrationSample {
  std::vector<double> sorted_u;
  std::vector<double> prefix_sum;  // size n + 1, prefix_sum[0] = 0
  std::int64_t n = 0;
  std::uint64_t seed = 0;
};

CalibrationSample draw_min_power_sample(
    const MinPowerRule& rule, const FadingSpec& fading, std::int64_t n,
    std::uint64_t seed, std::uint64_t stream = kCalibrationStream);

// Transmission policy: transmit when u < s_star; on the boundary u == s_star
// transmit with probability w_star.  When the empirical boundary mass is
// below 1e-9 the tie-break degenerates to the deterministic rule
// "transmit iff u <= s_star".  s_star may be +infinity (budget never binds).
struct LongTermPolicy {
  std::string rule_id;  // min_power_kind_id of the calibrated rule
  double rate = 0.0;
  double budget_p = 0.0;  // per-block average power budget P
  FadingSpec fading;
  double s_star = 0.0;
  double w_star = 1.0;
  double boundary_mass = 0.0;  // empirical P(u == s_star) at calibration
  std::int64_t calibration_n = 0;
  std::uint64_t seed = 0;
};

// Reads the threshold pair off a calibration sample:
//   s* = value of the j*-th smallest cost, j* = min{ j : prefix_sum[j] >= n P }
//   w* chosen so the empirical average transmitted power equals P exactly;
// s* = +infinity when the sample mean is already below P.
LongTermPolicy policy_from_sample(const CalibrationSample& sample,
                                  const MinPowerRule& rule,
                                  const FadingSpec& fading, double budget_p);

// draw_min_power_sample + policy_from_sample in one step.
LongTermPolicy calibrate_policy(const MinPowerRule& rule,
                                const FadingSpec& fading, double budget_p,
                                std::int64_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Applying a policy
// ---------------------------------------------------------------------------

struct LongTermDecision {
  bool transmit = false;
  Array powers;             // zeros when not transmitting
  double mean_power = 0.0;  // the draw's cost u (computed either way)
};

// Decides one draw.  `coin` in [0, 1) resolves the boundary tie-break; it is
// ignored off the boundary but must still be supplied so callers consume
// randomness at a draw-independent rate.
LongTermDecision apply_policy(const MinPowerRule& rule,
                              const LongTermPolicy& policy, ArrayRef gains,
                              double coin);

// Same, drawing the coin from `coins` (always exactly one draw).
LongTermDecision apply_policy(const MinPowerRule& rule,
                              const LongTermPolicy& policy, ArrayRef gains,
                              Substream& coins);

// ---------------------------------------------------------------------------
// Long-term outage evaluation
// ---------------------------------------------------------------------------

struct LongTermOutageResult {
  double outage = 0.0;
  double ci_low = 0.0;   // Wilson 95% interval on the outage probability
  double ci_high = 0.0;
  double avg_power = 0.0;         // average transmitted power per block
  double transmit_fraction = 0.0;
  std::int64_t n = 0;
  std::uint64_t seed = 0;
};

// Evaluates a policy against an already-drawn cost sample.  A transmitted
// draw meets the rate target by construction, so outage reduces to
// P(u > s*) plus the expected silent share (1 - w*) of the boundary; on
// continuous fading the boundary has probability zero and the estimate is a
// plain count.  Sweeps over many budgets reuse one evaluation sample this
// way.
LongTermOutageResult outage_from_sample(const CalibrationSample& eval_sample,
                                        const LongTermPolicy& policy);

// Draws a fresh evaluation sample (evaluation substream, independent of
// calibration) and evaluates the policy on it.
LongTermOutageResult long_term_outage(const MinPowerRule& rule,
                                      const LongTermPolicy& policy,
                                      std::int64_t n, std::uint64_t seed);

std::string to_json(const LongTermPolicy& policy);
LongTermPolicy policy_from_json(const std::string& text);

}  // namespace bfpa
