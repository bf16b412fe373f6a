#pragma once

// Monte Carlo outage estimation and curve handling.
//
// Outage of a fixed-rate-R codeword spanning B fading blocks is the event
//   (1/B) sum_b I_X(p_b gamma_b) < R   (strict),
// i.e. the realized average mutual information falls below the code rate.
// Short-term schemes allocate {p_b} per draw from the per-block budget P;
// long-term policies transmit the minimum-power allocation or stay silent.
//
// Determinism: estimates depend only on (seed, stream, n), never on the
// worker count.  Sweeps key the stream by the grid index, so different
// schemes evaluated at the same grid point see identical fading draws
// (common random numbers), which makes paired comparisons sharp.

#include <cstdint>
#include <string>
#include <vector>

#include "bfpa/alloc_long.hpp"
#include "bfpa/alloc_short.hpp"
#include "bfpa/awgn_metrics.hpp"
#include "bfpa/common.hpp"
#include "bfpa/fading.hpp"

namespace bfpa {

// Short-term scheme selector: `beta` feeds the truncated rule, `refined`
// the refined one; both are ignored by the other schemes.
struct ShortScheme {
  Scheme scheme = Scheme::kUniform;
  double beta = 0.0;
  RefinedParams refined;

  void validate() const;  // throws ValidationError
};

struct OutagePoint {
  double power_p = 0.0;  // per-block budget P (linear scale)
  double outage = 0.0;
  double ci_low = 0.0;   // Wilson 95% interval
  double ci_high = 0.0;
  std::int64_t n = 0;
  std::uint64_t seed = 0;
};

struct OutageCurve {
  std::string scheme;         // scheme_id(), or "lt-" + min_power_kind_id()
  std::string constellation;  // input_label of the table's input
  int blocks = 1;
  double nakagami_m = 1.0;
  double rate = 0.0;
  std::vector<OutagePoint> points;
};

// One short-term Monte Carlo point: n fading draws on substream `stream`,
// allocation per `scheme`, outage counted with the strict-inequality event.
// A discrete-input rate R >= M short-circuits to outage 1 (the event is
// sure).
OutagePoint short_term_outage_point(const MetricTable& table,
                                    const ShortScheme& scheme,
                                    const FadingSpec& fading, double rate,
                                    double power, std::int64_t n,
                                    std::uint64_t seed, std::uint64_t stream);

// Sweeps the budget grid; point i uses stream i, so curves for different
// schemes over the same grid share fading draws.
OutageCurve short_term_sweep(const MetricTable& table,
                             const ShortScheme& scheme,
                             const FadingSpec& fading, double rate,
                             const std::vector<double>& power_grid,
                             std::int64_t n, std::uint64_t seed);

// Long-term sweep: calibrates a policy per budget from one calibration
// sample and evaluates all of them against one evaluation sample (the
// per-draw cost u does not depend on the budget).
OutageCurve long_term_sweep(const MinPowerRule& rule, const FadingSpec& fading,
                            const std::vector<double>& power_grid,
                            std::int64_t calibration_n,
                            std::int64_t evaluation_n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// SNR exponent (diversity slope)
// ---------------------------------------------------------------------------

struct SlopeFit {
  double exponent = 0.0;   // negated least-squares slope of
                           // log10(outage) vs log10(P)
  double intercept = 0.0;  // fitted log10(outage) at log10(P) = 0
  int points_used = 0;
};

// Fits the high-SNR slope over the points whose outage estimate lies in
// [outage_min, outage_max] and is statistically reliable (estimate above
// 10x its binomial standard error).  Throws ValidationError when fewer than
// four points qualify.
SlopeFit fit_snr_exponent(const OutageCurve& curve, double outage_min,
                          double outage_max);

// ---------------------------------------------------------------------------
// Curve I/O
// ---------------------------------------------------------------------------

// CSV with '#' metadata lines, a header row
//   scheme,constellation,B,m,R,P_dB,outage,ci_low,ci_high,n,seed
// and one row per point; P_dB = 10 log10(P).  Numeric fields are written
// with 17 significant digits so read-back is lossless.
std::string curve_to_csv(const OutageCurve& curve);
OutageCurve curve_from_csv(const std::string& text);

std::string curve_to_json(const OutageCurve& curve);
OutageCurve curve_from_json(const std::string& text);

}  // namespace bfpa
