#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <set>

#include "bfpa/constellation.hpp"

using namespace bfpa;

namespace {

double min_pairwise_distance(const Constellation& c) {
  double best = 1e300;
  for (int i = 0; i < c.size(); ++i)
    for (int j = i + 1; j < c.size(); ++j)
      best = std::min(best, std::abs(c.points[i] - c.points[j]));
  return best;
}

}  // namespace

TEST_CASE("BPSK is the antipodal pair on the real axis") {
  const Constellation c = make_psk(1);
  REQUIRE(c.size() == 2);
  CHECK(c.bits == 1);
  CHECK(c.points[0] == std::complex<double>(-1.0, 0.0));
  CHECK(c.points[1] == std::complex<double>(1.0, 0.0));
  CHECK(average_energy(c) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("QPSK matches the rotated-square convention and equals 4-QAM") {
  const Constellation psk = make_psk(2);
  const Constellation qam = make_qam(2);
  REQUIRE(psk.size() == 4);
  const double h = M_SQRT1_2;
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(std::abs(psk.points[i].real()) - h) < 1e-15);
    CHECK(std::abs(std::abs(psk.points[i].imag()) - h) < 1e-15);
  }
  REQUIRE(qam.size() == 4);
  for (int i = 0; i < 4; ++i)
    CHECK(std::abs(psk.points[i] - qam.points[i]) < 1e-15);
}

TEST_CASE("PSK points lie on the unit circle with uniform angular spacing") {
  for (int bits : {1, 2, 3, 4}) {
    const Constellation c = make_psk(bits);
    REQUIRE(c.size() == (1 << bits));
    for (int i = 0; i < c.size(); ++i)
      CHECK(std::abs(std::abs(c.points[i]) - 1.0) < 1e-12);
    // Sorted angles should be an arithmetic progression of step 2pi/2^bits.
    std::vector<double> ang;
    for (int i = 0; i < c.size(); ++i)
      ang.push_back(std::arg(c.points[i]));
    std::sort(ang.begin(), ang.end());
    const double step = 2.0 * M_PI / c.size();
    for (std::size_t i = 1; i < ang.size(); ++i)
      CHECK(ang[i] - ang[i - 1] == doctest::Approx(step).epsilon(1e-9));
  }
}

TEST_CASE("square QAM has unit energy and the expected lattice geometry") {
  for (int bits : {2, 4, 6}) {
    CAPTURE(bits);
    const Constellation c = make_qam(bits);
    REQUIRE(c.size() == (1 << bits));
    CHECK(average_energy(c) == doctest::Approx(1.0).epsilon(1e-13));
    // All points share the same minimum distance 2d, where the per-axis
    // levels are odd multiples of d and the average energy is one.
    const int side = 1 << (bits / 2);
    const double d =
        std::sqrt(3.0 / (2.0 * (static_cast<double>(side) * side - 1.0)));
    CHECK(min_pairwise_distance(c) == doctest::Approx(2.0 * d).epsilon(1e-12));
    validate(c);  // must not throw
  }
}

TEST_CASE("make_qam rejects odd bit counts, make_psk rejects bad sizes") {
  CHECK_THROWS_AS(make_qam(3), ValidationError);
  CHECK_THROWS_AS(make_psk(0), ValidationError);
  CHECK_THROWS_AS(make_psk(-1), ValidationError);
}

TEST_CASE("labels are a Gray-coded permutation") {
  for (int bits : {1, 2, 3, 4, 6}) {
    CAPTURE(bits);
    const Constellation c =
        (bits % 2 == 0) ? make_qam(bits) : make_psk(bits);
    std::set<std::uint32_t> seen(c.labels.begin(), c.labels.end());
    CHECK(seen.size() == static_cast<std::size_t>(c.size()));
    CHECK(*seen.rbegin() == static_cast<std::uint32_t>(c.size() - 1));
  }
  // PSK neighbors around the circle differ in exactly one bit.
  const Constellation c = make_psk(3);
  std::vector<int> order(static_cast<std::size_t>(c.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return std::arg(c.points[a]) < std::arg(c.points[b]);
  });
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::uint32_t a = c.labels[static_cast<std::size_t>(order[i])];
    const std::uint32_t b =
        c.labels[static_cast<std::size_t>(order[(i + 1) % order.size()])];
    CHECK(__builtin_popcount(a ^ b) == 1);
  }
}

TEST_CASE("canonical order is stable under shuffling") {
  Constellation c = make_qam(4);
  Constellation shuffled = c;
  // Reverse the points, then restore canonical order.
  std::reverse(shuffled.points.begin(), shuffled.points.end());
  std::reverse(shuffled.labels.begin(), shuffled.labels.end());
  canonical_sort(shuffled);
  for (int i = 0; i < c.size(); ++i) {
    CHECK(shuffled.points[i] == c.points[i]);
    CHECK(shuffled.labels[static_cast<std::size_t>(i)] ==
          c.labels[static_cast<std::size_t>(i)]);
  }
  CHECK(constellation_hash(shuffled) == constellation_hash(c));
}

TEST_CASE("validate rejects broken signal sets") {
  Constellation c = make_psk(2);
  SUBCASE("energy off") {
    c.points *= 1.01;
    CHECK_THROWS_AS(validate(c), ValidationError);
  }
  SUBCASE("duplicate point") {
    c.points[0] = c.points[1];
    CHECK_THROWS_AS(validate(c), ValidationError);
  }
  SUBCASE("bad label multiset") {
    c.labels[0] = c.labels[1];
    CHECK_THROWS_AS(validate(c), ValidationError);
  }
  SUBCASE("size / bits mismatch") {
    c.bits = 3;
    CHECK_THROWS_AS(validate(c), ValidationError);
  }
}

TEST_CASE("constellation JSON round trip is exact") {
  for (int bits : {1, 2, 4}) {
    const Constellation c = bits == 4 ? make_qam(4) : make_psk(bits);
    const Constellation back = constellation_from_json(to_json(c));
    REQUIRE(back.size() == c.size());
    for (int i = 0; i < c.size(); ++i)
      CHECK(back.points[i] == c.points[i]);  // bit-exact doubles
    CHECK(back.labels == c.labels);
    CHECK(back.bits == c.bits);
    CHECK(back.name == c.name);
    CHECK(constellation_hash(back) == constellation_hash(c));
  }
  CHECK_THROWS_AS(constellation_from_json("{]"), ValidationError);
  CHECK_THROWS_AS(constellation_from_json("{}"), ValidationError);
}

TEST_CASE("input helpers: labels, bits, distinct hashes") {
  CHECK(input_label(GaussianInput{}) == "gaussian");
  CHECK(input_bits(GaussianInput{}) == 0);
  const InputModel qpsk = make_psk(2);
  CHECK(input_label(qpsk) == "qpsk");
  CHECK(input_bits(qpsk) == 2);
  CHECK(input_label(make_qam(4)) == "16qam");
  CHECK(constellation_hash(make_psk(2)) != constellation_hash(make_qam(4)));
  CHECK(constellation_hash(make_psk(2)) != constellation_hash(make_psk(3)));
}
