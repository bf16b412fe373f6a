#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace bfpa {

// Counter-based substream derivation. Every Monte Carlo draw gets its own
// generator seeded from (seed, stream, draw index) through a SplitMix64-style
// finalizer, so results do not depend on how draws are split across threads
// and paired experiments can share randomness by sharing (seed, stream, draw).
inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t draw) {
  std::uint64_t x = mix64(seed + 0x9e3779b97f4a7c15ull);
  x = mix64(x ^ (stream + 0x9e3779b97f4a7c15ull));
  x = mix64(x ^ (draw + 0x9e3779b97f4a7c15ull));
  return x;
}

// Thin wrapper over mt19937_64 with hand-rolled uniform/normal conversions.
// The standard distributions are implementation-defined; these are pinned so
// streams are bit-stable across platforms.
class Substream {
 public:
  explicit Substream(std::uint64_t s) : eng_(s) {}

  static Substream for_draw(std::uint64_t seed, std::uint64_t stream,
                            std::uint64_t draw) {
    return Substream(derive_seed(seed, stream, draw));
  }

  // Uniform on [0, 1): 53 random mantissa bits.
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the spare is cached, so a substream's
  // sequence depends only on the calls made on it.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform01();  // (0, 1]: log safe
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace bfpa
