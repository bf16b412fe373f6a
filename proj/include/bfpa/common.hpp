#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace bfpa {

inline constexpr std::string_view kVersion = "1.0.0";

// Dense working types. Double precision throughout: the numeric contracts in
// this library (budget/rate certificates, round-trip inverses) are stated as
// absolute tolerances that assume it.
using Array = Eigen::ArrayXd;
using ComplexArray = Eigen::ArrayXcd;
using ArrayRef = Eigen::Ref<const Eigen::ArrayXd>;

// Bad arguments, malformed configs, inconsistent parameters. CLI maps this to
// exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A lookup left the tabulated range (or an iterative solver was pushed outside
// its bracket). Deliberately distinct from ValidationError: the input was
// well-formed, the numeric domain was not. CLI maps this to exit code 3.
class NumericRangeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// FNV-1a over bytes; used to fingerprint configs and constellations in output
// files so a result can be traced back to exactly what produced it.
inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(s.data(), s.size());
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

// A cached artifact written by an incompatible tool version. Unlike plain
// corruption (which callers may repair by rebuilding), this is surfaced as a
// hard error so stale caches are never silently regenerated over.
class CacheVersionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Wilson 95% score interval for a binomial proportion; well-behaved at
// zero and full counts, unlike the normal approximation.
inline std::pair<double, double> wilson_interval(std::int64_t successes,
                                                 std::int64_t trials) {
  if (trials <= 0 || successes < 0 || successes > trials)
    throw ValidationError("wilson_interval: need 0 <= successes <= trials");
  constexpr double z = 1.959963984540054;  // 97.5% normal quantile
  const double n = static_cast<double>(trials);
  const double phat = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (phat + z2 / (2.0 * n)) / denom;
  const double half =
      z * std::sqrt(phat * (1.0 - phat) / n + z2 / (4.0 * n * n)) / denom;
  // At the boundary counts the score interval endpoints are exactly 0 or 1;
  // compute them as such instead of leaving cancellation residue.
  const double lo = successes == 0 ? 0.0 : std::max(0.0, center - half);
  const double hi = successes == trials ? 1.0 : std::min(1.0, center + half);
  return {lo, hi};
}

}  // namespace bfpa
