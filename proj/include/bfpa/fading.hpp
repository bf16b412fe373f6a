#pragma once

#include "bfpa/common.hpp"
#include "bfpa/rng.hpp"

namespace bfpa {

// Per-codeword fading model: `blocks` i.i.d. unit-mean Gamma power gains with
// Nakagami shape m (m = 1 is Rayleigh; half-integers >= 0.5 allowed down to
// the one-sided Gaussian m = 0.5).
struct FadingSpec {
  double nakagami_m = 1.0;
  int blocks = 1;
};

void validate(const FadingSpec& spec);

// Shape equivalent of a Rician K-factor: m = (K+1)^2 / (2K+1).
double rician_to_nakagami_m(double k_factor);

// One unit-mean Gamma(m) draw. Marsaglia-Tsang squeeze for m >= 1, boosted
// shape + power-of-uniform transform for 0.5 <= m < 1.
double sample_gain(Substream& rng, double m);

// Fills out[0..blocks) with one codeword's gains.
void sample_gains(const FadingSpec& spec, Substream& rng, Array& out);
Array sample_gains(const FadingSpec& spec, Substream& rng);

// Density of the unit-mean gain: m^m g^{m-1} e^{-m g} / Gamma(m).
double gain_pdf(const FadingSpec& spec, double g);

}  // namespace bfpa
