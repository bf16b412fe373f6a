#include "bfpa/fading.hpp"

#include <cmath>
#include <limits>

namespace bfpa {
namespace {

// Marsaglia-Tsang (2000) for shape a >= 1, scale 1.
double gamma_shape_ge1(Substream& rng, double a) {
  const double d = a - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform01();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

}  // namespace

void validate(const FadingSpec& spec) {
  if (!(spec.nakagami_m >= 0.5) || !(spec.nakagami_m <= 1e6))
    throw ValidationError("fading: nakagami m must be in [0.5, 1e6]");
  if (spec.blocks < 1 || spec.blocks > 1024)
    throw ValidationError("fading: blocks must be in [1, 1024]");
}

double rician_to_nakagami_m(double k_factor) {
  if (!(k_factor >= 0.0) || !std::isfinite(k_factor))
    throw ValidationError("rician_to_nakagami_m: K must be finite and >= 0");
  return (k_factor + 1.0) * (k_factor + 1.0) / (2.0 * k_factor + 1.0);
}

double sample_gain(Substream& rng, double m) {
  if (m >= 1.0) return gamma_shape_ge1(rng, m) / m;
  // Shape < 1: draw shape m+1 and multiply by U^{1/m}.
  const double g = gamma_shape_ge1(rng, m + 1.0);
  const double u = rng.uniform01();
  return g * std::pow(u, 1.0 / m) / m;
}

void sample_gains(const FadingSpec& spec, Substream& rng, Array& out) {
  for (int b = 0; b < spec.blocks; ++b) out[b] = sample_gain(rng, spec.nakagami_m);
}

Array sample_gains(const FadingSpec& spec, Substream& rng) {
  Array out(spec.blocks);
  sample_gains(spec, rng, out);
  return out;
}

double gain_pdf(const FadingSpec& spec, double g) {
  if (g < 0.0) return 0.0;
  const double m = spec.nakagami_m;
  if (g == 0.0) return m > 1.0 ? 0.0 : (m == 1.0 ? 1.0 : std::numeric_limits<double>::infinity());
  return std::exp(m * std::log(m) + (m - 1.0) * std::log(g) - m * g -
                  std::lgamma(m));
}

}  // namespace bfpa
