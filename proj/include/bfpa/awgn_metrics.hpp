#pragma once

#include <cstdint>
#include <string>

#include "bfpa/common.hpp"
#include "bfpa/constellation.hpp"

namespace bfpa {

// Physicists' Gauss-Hermite rule (weight e^{-x^2}), nodes ascending. Computed
// by Golub-Welsch on the Jacobi matrix (off-diagonal sqrt(k/2)).
struct GaussHermite {
  Array nodes;
  Array weights;
};
GaussHermite gauss_hermite(int order);

// Gauss-Laguerre rule (weight e^{-x} on [0, inf)), nodes ascending. Same
// Golub-Welsch construction (diagonal 2k+1, off-diagonal k). Used for the
// boundary-layer integrals behind the deep-tail MMSE evaluation.
struct GaussLaguerre {
  Array nodes;
  Array weights;
};
GaussLaguerre gauss_laguerre(int order);

struct Metrics {
  double mi;    // bits per symbol
  double mmse;  // E|X - E[X|Y]|^2 at unit noise power
};

// Direct quadrature evaluation of mutual information and MMSE of Y = sqrt(rho) X + Z,
// Z ~ CN(0,1), X uniform on the signal set (or Gaussian: closed forms). Both
// metrics come from one pass over the tensorized rule. rho >= 0 required.
//
// The tensorized Hermite rule can only see the symbol-pair decision
// boundaries while they lie inside its node range; once rho d_min^2 / 4
// exceeds roughly half the squared extreme node the quadrature stops
// sampling the crossover regions that dominate the true MMSE tail and its
// output decays far too fast. Deep in that regime the MMSE is therefore
// evaluated instead by an exact pair decomposition: every symbol pair at
// squared distance d^2 contributes (2/M)(d^2/4) S(rho d^2/4), where S is the
// binary-antipodal MMSE computed from its two-sided boundary-layer integral
// representation (Gauss-Laguerre, carried in logs so it underflows gracefully
// instead of collapsing orders of magnitude early). Cross-pair interactions
// are exponentially subdominant at the switch point. Mutual information
// needs no such treatment: its tail deficit is below double rounding long
// before the Hermite rule gives out.
Metrics awgn_metrics_at(const InputModel& input, double rho, int order = 32);
double mutual_information(const InputModel& input, double rho, int order = 32);
double mmse(const InputModel& input, double rho, int order = 32);

struct TableSpec {
  double rho_min = 1e-4;
  double rho_max = 1e5;
  int points = 512;
  int quadrature_order = 32;
};

// Tabulated mi/mmse on a log-uniform SNR grid. mi interpolates linearly in
// (log rho, value); mmse interpolates geometrically (linearly in log value)
// between positive knots, since it spans hundreds of orders of magnitude and
// is locally exponential — a straight chord in value would overshoot the
// lower knot by large relative factors deep in the tail. Cells with a
// non-positive endpoint (the underflowed suffix) fall back to linear.
// Forward evaluation below rho_min bridges linearly in rho to the exact
// anchors mi(0) = 0, mmse(0) = 1; above rho_max it clamps to the top knot
// (the default grid top is deep in saturation, where the clamp is exact to
// double precision). Inverse lookups are closed-form inversions of the
// interpolant inside the bracketing cell found by binary search — exact
// inverses of the forward maps, which is what makes downstream KKT and rate
// certificates self-consistent — and they throw NumericRangeError for targets
// outside the tabulated value range rather than extrapolating.
//
// A Gaussian-input table bypasses interpolation entirely: every operation
// uses the closed forms log2(1+rho), 1/(1+rho) and their exact inverses (the
// knot arrays are still populated for serialization and validation).
class MetricTable {
 public:
  static MetricTable build(const InputModel& input, const TableSpec& spec = {});

  double mi(double rho) const;
  double mmse(double rho) const;
  double mi_inv(double target_bits) const;
  double mmse_inv(double target) const;

  // Fused lookup for min-power solvers: inverts mmse and evaluates the rate
  // at the same interpolation cell, saving the second search and log.
  double mmse_inv_with_rate(double target, double* rate_bits) const;

  const InputModel& input() const { return input_; }
  const TableSpec& spec() const { return spec_; }
  const Array& rho_grid() const { return rho_; }
  const Array& mi_values() const { return mi_; }
  const Array& mmse_values() const { return mmse_; }
  bool gaussian() const { return gaussian_; }
  int bits() const { return bits_; }
  // Supremum of representable rates: top-knot mi (== bits at saturation).
  double max_rate() const;

  std::uint64_t hash() const;  // == table_identity_hash(input(), spec())
  std::string to_json() const;
  static MetricTable from_json(const std::string& text);

 private:
  MetricTable() = default;
  void validate_tables() const;

  InputModel input_{GaussianInput{}};
  TableSpec spec_;
  bool gaussian_ = true;
  int bits_ = 0;
  Array rho_, log_rho_, mi_, mmse_;
  double dlog_ = 0.0;
};

// Identity of the table a given (input, spec) pair would build: lets callers
// locate a cache entry without building anything.
std::uint64_t table_identity_hash(const InputModel& input,
                                  const TableSpec& spec);

// High-precision inverses: bracket with the table, then bisect against the
// quadrature forward map. Slow path, for callers that need the inverse of the
// true metric rather than of the interpolant.
double refined_mmse_inv(const MetricTable& table, double target);
double refined_mi_inv(const MetricTable& table, double target_bits);

// Closed-form approximation I~(rho) = M (1 - e^{-c1 rho^c2})^c3 with the rate
// margin delta_r = max over the fit grid of (I~ - I)+, the inflation needed so
// a rate certificate against I~ implies one against I.
struct MiFit {
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
  double delta_r = 0.0;
  int bits = 0;
  std::string input_name;
};

double fitted_mi(const MiFit& fit, double rho);

// Damped Gauss-Newton in log-parameter space with analytic Jacobian and a
// deterministic multi-start ladder. Throws NumericRangeError if no start
// converges. GaussianInput is rejected (the model form needs finite M).
MiFit fit_mi_approx(const InputModel& input, const ArrayRef& rho_grid,
                    int quad_order = 32);

}  // namespace bfpa
