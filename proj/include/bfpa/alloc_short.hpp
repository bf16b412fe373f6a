#pragma once

// Short-term (per-codeword) power allocation over a block-fading realization.
//
// Every allocator here receives the per-block power gains of one fading draw
// plus a per-block budget P, and returns per-block powers summing to
// blocks * P (the truncated rules spend less when every block already sits at
// its truncation level).  Rules:
//
//   * uniform_alloc            p_b = P                     (gain-oblivious)
//   * waterfill                classical waterfilling, Gaussian-optimal
//   * truncated_waterfill      waterfilling truncated at rho = beta
//   * refined_truncated_waterfill
//                              truncation refined by a tangent surrogate of
//                              the discrete-input mutual information
//   * optimal_short            exact mercury/waterfilling for the table's
//                              input (maximizes sum mutual information)
//
// The diversity-order helpers (singleton_bound, diversity_beta_threshold)
// expose the combinatorial quantities the truncated rules are calibrated
// against.

#include <optional>
#include <string>

#include "bfpa/awgn_metrics.hpp"
#include "bfpa/common.hpp"

namespace bfpa {

// ---------------------------------------------------------------------------
// Scheme identifiers
// ---------------------------------------------------------------------------

enum class Scheme {
  kUniform,
  kWaterfill,
  kTruncated,
  kRefined,
  kOptimal,
};

// Stable short ids used in CSV output and CLI arguments.
std::string scheme_id(Scheme scheme);
Scheme scheme_from_id(const std::string& id);

// Result of a short-term allocation.  `powers` has one entry per block and
// sums to blocks * budget_p (exactly, up to the documented certificates).
struct PowerAllocation {
  Array powers;
  Scheme scheme = Scheme::kUniform;
  double budget_p = 0.0;  // per-block budget P
  double level = 0.0;     // water level / threshold / slack variable nu|eta
};

// ---------------------------------------------------------------------------
// Diversity-order combinatorics
// ---------------------------------------------------------------------------

// Block-diversity (Singleton) bound d_B(R) = 1 + floor(B (1 - R / M)) for a
// rate R in (0, M] and modulation of M bits.  Arguments within 1e-9 (relative)
// of an integer are snapped before the floor so grid rates land on the
// mathematically intended step.
int singleton_bound(int blocks, double rate, int bits);

// True when B (1 - R / M) sits on (within 1e-9 of) an integer, i.e. R is a
// discontinuity point of the Singleton bound.
bool singleton_bound_discontinuous(int blocks, double rate, int bits);

// Threshold beta_R: smallest truncation level whose truncated rule provably
// achieves the Singleton-bound diversity, beta_R = I_X^{-1}(B R / (B - K))
// with K = floor(B (1 - R / M)).  Returns nullopt when the required
// per-block rate reaches M (the inverse diverges), which happens exactly at
// the discontinuity points of d_B(R).  Requires a discrete-input table.
std::optional<double> diversity_beta_threshold(const MetricTable& table,
                                               int blocks, double rate);

// ---------------------------------------------------------------------------
// Allocation rules
// ---------------------------------------------------------------------------

// Uniform: p_b = P for every block, independent of the gains.
PowerAllocation uniform_alloc(int blocks, double power);

// Classical waterfilling: p_b = (eta - 1/gamma_b)_+ with eta chosen so the
// powers sum to blocks * power (exactly, via the active-set closed form).
// Blocks with zero gain receive zero power.
PowerAllocation waterfill(ArrayRef gains, double power);

// Truncated waterfilling: p_b = min{ beta / gamma_b, (eta - 1/gamma_b)_+ }.
// When sum_b beta / gamma_b <= blocks * power the budget is not binding and
// every active block is driven to rho = beta; otherwise eta is chosen so the
// budget holds exactly.  beta > 0 required.
PowerAllocation truncated_waterfill(ArrayRef gains, double power, double beta);

// Tangent-surrogate parameters for the refined truncation rule, built from a
// discrete-input metric table at anchor SNR rho0:
//   kappa  — slope of the tangent to I_X (bits) on the log2-rho axis at rho0,
//   intercept (a) — its value at rho = 1,
//   alpha  — SNR where the tangent re-crosses log2(1 + rho) below rho0,
//   beta   — truncation level the rule is run with (beta > alpha required).
struct RefinedParams {
  double kappa = 0.0;
  double intercept = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double rho0 = 0.0;

  void validate() const;  // throws ValidationError
};

// Computes kappa / intercept / alpha for `table` at anchor rho0, leaving
// `beta` for the caller to fill in.  Throws ValidationError for Gaussian
// tables (the crossover does not exist) or when rho0 is out of table range.
RefinedParams tangent_params(const MetricTable& table, double rho0,
                             double beta);

// Per-block SNR of the refined rule as a function of w = eta * gamma:
// the five sectors listed at refined_truncated_waterfill.  Continuous and
// nondecreasing in w when params.validate() holds.
double refined_sector_rho(double w, const RefinedParams& params);

// Refined truncated waterfilling (five-branch rule in the threshold eta):
//   rho_b = 0                          eta gamma_b <  1
//   rho_b = eta gamma_b - 1            1 <= eta gamma_b < alpha + 1
//   rho_b = alpha                      alpha + 1 <= eta gamma_b < alpha/kappa
//   rho_b = kappa eta gamma_b          alpha/kappa <= eta gamma_b < beta/kappa
//   rho_b = beta                       beta/kappa <= eta gamma_b
// with p_b = rho_b / gamma_b and eta chosen so the powers sum to
// blocks * power exactly.  Requires kappa (alpha + 1) <= alpha, which makes
// the per-block power continuous and nondecreasing in eta.
PowerAllocation refined_truncated_waterfill(ArrayRef gains, double power,
                                            const RefinedParams& params);

// Exact mercury/waterfilling for the table's input:
//   p_b = (1/gamma_b) MMSE^{-1}( min{1, nu / gamma_b} )
// with nu > 0 chosen so the powers sum to blocks * power.  The budget
// certificate |sum p - B P| <= 1e-9 * B P is checked; if the table's SNR
// ceiling prevents it (budget drives blocks beyond the grid) a
// NumericRangeError is thrown rather than silently clipping.
PowerAllocation optimal_short(ArrayRef gains, double power,
                              const MetricTable& table);

namespace detail {

// Bisection + exact-snap solver for the truncated rule; the public
// truncated_waterfill prefers the sorted active/capped-set enumeration and
// falls back to this.  Exposed so tests can cross-check the two.
PowerAllocation truncated_waterfill_bisect(ArrayRef gains, double power,
                                           double beta);

}  // namespace detail

}  // namespace bfpa
