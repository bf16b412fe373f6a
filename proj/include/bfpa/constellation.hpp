#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "bfpa/common.hpp"

namespace bfpa {

// A discrete unit-energy signal set. Points are kept in canonical order
// (ascending real part, then imaginary part, with a small tie tolerance) so
// that two constructions of the same set compare and hash identically;
// `labels` carries the Gray bit pattern assigned to each point, permuted
// along with the points. Labels never enter the information metrics — they
// are carried for completeness of the signal-set description.
struct Constellation {
  ComplexArray points;
  std::vector<std::uint32_t> labels;
  int bits = 0;  // M = log2(points.size())
  std::string name;

  int size() const { return static_cast<int>(points.size()); }
};

// Marker for the Gaussian-codebook reference input (capacity/MMSE in closed
// form, no finite signal set).
struct GaussianInput {};

using InputModel = std::variant<GaussianInput, Constellation>;

// 2^bits-PSK. bits == 1 is BPSK on the real axis; bits == 2 follows the QPSK
// convention (±1 ± j)/sqrt(2), i.e. the pi/4-rotated 4-PSK, which coincides
// with 4-QAM.
Constellation make_psk(int bits);

// Square 2^bits-QAM, bits even, per-axis Gray labeling.
Constellation make_qam(int bits);

// Throws ValidationError unless: size == 2^bits, points pairwise distinct,
// average energy 1 within 1e-12, labels a permutation of 0..2^bits-1, and the
// canonical ordering holds.
void validate(const Constellation& c);

double average_energy(const Constellation& c);

// Stable fingerprint of the point set (canonical order, raw double bytes).
std::uint64_t constellation_hash(const Constellation& c);

std::string to_json(const Constellation& c);
Constellation constellation_from_json(const std::string& text);

std::string input_label(const InputModel& input);
// Bits per symbol; GaussianInput has no finite alphabet and returns 0.
int input_bits(const InputModel& input);

// Canonicalize in place: sort points (with labels attached) by (Re, Im) using
// a 1e-9 tie tolerance on the real part.
void canonical_sort(Constellation& c);

}  // namespace bfpa
