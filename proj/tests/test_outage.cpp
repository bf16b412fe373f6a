#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "bfpa/outage.hpp"
#include "bfpa/parallel.hpp"
#include "test_support.hpp"

using namespace bfpa;

namespace {

const MetricTable& qpsk_table() {
  static const MetricTable t = MetricTable::build(make_psk(2));
  return t;
}

ShortScheme uniform_scheme() {
  ShortScheme s;
  s.scheme = Scheme::kUniform;
  return s;
}

OutageCurve synthetic_curve(double exponent, double scale, int npoints,
                            std::int64_t n) {
  OutageCurve c;
  c.scheme = "uniform";
  c.constellation = "qpsk";
  c.blocks = 2;
  c.nakagami_m = 1.0;
  c.rate = 1.0;
  for (int i = 0; i < npoints; ++i) {
    OutagePoint p;
    p.power_p = std::pow(10.0, 0.3 * i);
    p.outage = scale * std::pow(p.power_p, -exponent);
    p.ci_low = p.outage * 0.9;
    p.ci_high = p.outage * 1.1;
    p.n = n;
    p.seed = 1;
    c.points.push_back(p);
  }
  return c;
}

}  // namespace

TEST_CASE("wilson interval: sanity and closed-form spot checks") {
  const auto [lo_mid, hi_mid] = wilson_interval(50, 100);
  CHECK(lo_mid < 0.5);
  CHECK(hi_mid > 0.5);
  CHECK(lo_mid == doctest::Approx(0.4038315).epsilon(1e-5));
  CHECK(hi_mid == doctest::Approx(0.5961685).epsilon(1e-5));
  const auto [lo0, hi0] = wilson_interval(0, 1000);
  CHECK(lo0 == 0.0);
  CHECK(hi0 > 0.0);
  CHECK(hi0 < 0.005);
  const auto [lof, hif] = wilson_interval(1000, 1000);
  CHECK(lof < 1.0);
  CHECK(hif == 1.0);
  CHECK_THROWS_AS(wilson_interval(5, 4), ValidationError);
  CHECK_THROWS_AS(wilson_interval(-1, 4), ValidationError);
  CHECK_THROWS_AS(wilson_interval(0, 0), ValidationError);
}

TEST_CASE("single-block outage matches the closed-form fading CDF") {
  // B = 1, uniform: outage iff I(P gamma) < R iff gamma < mi_inv(R) / P.
  const MetricTable& t = qpsk_table();
  const FadingSpec fading{1.0, 1};
  const double rate = 1.2, power = 3.0;
  const std::int64_t n = 200000;
  const OutagePoint p = short_term_outage_point(t, uniform_scheme(), fading,
                                                rate, power, n, 77, 0);
  const double exact =
      testing::gain_cdf(1.0, t.mi_inv(rate) / power);
  // Five standard errors.
  const double se = std::sqrt(exact * (1.0 - exact) / static_cast<double>(n));
  CHECK(std::abs(p.outage - exact) < 5.0 * se);
  CHECK(p.ci_low <= p.outage);
  CHECK(p.ci_high >= p.outage);
  CHECK(p.n == n);
  // Nakagami m = 2 as well.
  const OutagePoint p2 = short_term_outage_point(t, uniform_scheme(),
                                                 FadingSpec{2.0, 1}, rate,
                                                 power, n, 78, 0);
  const double exact2 = testing::gain_cdf(2.0, t.mi_inv(rate) / power);
  const double se2 =
      std::sqrt(exact2 * (1.0 - exact2) / static_cast<double>(n));
  CHECK(std::abs(p2.outage - exact2) < 5.0 * se2);
}

TEST_CASE("rate at or beyond the modulation size is a sure outage") {
  const OutagePoint p = short_term_outage_point(
      qpsk_table(), uniform_scheme(), FadingSpec{1.0, 4}, 2.0, 100.0, 5000, 1, 0);
  CHECK(p.outage == 1.0);
  CHECK(p.n == 5000);
  CHECK(p.ci_high == 1.0);
}

TEST_CASE("common random numbers make outage monotone in the budget") {
  // With shared draws, more power can only help the uniform scheme, so the
  // estimates must be exactly nonincreasing, not just statistically so.
  const MetricTable& t = qpsk_table();
  const std::vector<double> grid{0.5, 1.0, 2.0, 4.0, 8.0};
  OutageCurve curve;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    // All points on stream 0: identical draws across budgets.
    curve.points.push_back(short_term_outage_point(
        t, uniform_scheme(), FadingSpec{1.0, 4}, 1.0, grid[i], 20000, 9, 0));
  }
  for (std::size_t i = 1; i < curve.points.size(); ++i)
    CHECK(curve.points[i].outage <= curve.points[i - 1].outage);
}

TEST_CASE("per-point streams pair schemes, not budgets") {
  const MetricTable& t = qpsk_table();
  const std::vector<double> grid{1.0, 3.0};
  const FadingSpec fading{1.0, 4};
  const OutageCurve u =
      short_term_sweep(t, uniform_scheme(), fading, 1.0, grid, 8000, 5);
  ShortScheme wf;
  wf.scheme = Scheme::kWaterfill;
  const OutageCurve w = short_term_sweep(t, wf, fading, 1.0, grid, 8000, 5);
  REQUIRE(u.points.size() == 2);
  REQUIRE(w.points.size() == 2);
  CHECK(u.scheme == "uniform");
  CHECK(w.scheme == "wf");
  CHECK(u.constellation == "qpsk");
  // Same seed and stream: waterfilling maximizes Gaussian capacity, not
  // discrete sum rate, but at these budgets it still dominates uniform on
  // every shared draw often enough to show up as <=.
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(u.points[i].power_p == grid[i]);
    CHECK(u.points[i].seed == 5);
  }
}

TEST_CASE("long-term sweep reuses one sample across budgets") {
  const MinPowerRule rule = make_min_power_rule_opt(qpsk_table(), 1.0);
  const FadingSpec fading{1.0, 4};
  const std::vector<double> grid{0.3, 0.6, 1.2, 2.4};
  const OutageCurve c = long_term_sweep(rule, fading, grid, 20000, 20000, 13);
  CHECK(c.scheme == "lt-opt");
  CHECK(c.constellation == "qpsk");
  REQUIRE(c.points.size() == 4);
  // Monotone: a bigger budget can only widen the transmit set on the shared
  // evaluation sample.
  for (std::size_t i = 1; i < 4; ++i)
    CHECK(c.points[i].outage <= c.points[i - 1].outage);
  // Per-budget result equals a standalone calibration + evaluation.
  const LongTermPolicy pol = calibrate_policy(rule, fading, grid[1], 20000, 13);
  const LongTermOutageResult res = long_term_outage(rule, pol, 20000, 13);
  CHECK(c.points[1].outage == res.outage);
}

TEST_CASE("slope fitting recovers a synthetic power law") {
  const OutageCurve c = synthetic_curve(2.0, 1.0, 12, 100000000);
  const SlopeFit fit = fit_snr_exponent(c, 1e-7, 1.0);
  CHECK(fit.exponent == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(fit.intercept == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(fit.points_used >= 4);

  // The outage window trims points outside [min, max].
  const SlopeFit windowed = fit_snr_exponent(c, 1e-5, 1e-1);
  CHECK(windowed.points_used == 7);
  CHECK(windowed.points_used < fit.points_used);
  CHECK(windowed.exponent == doctest::Approx(2.0).epsilon(1e-9));

  // The reliability filter drops points whose estimate is within 10x its
  // standard error: tiny n makes every point unreliable.
  const OutageCurve noisy = synthetic_curve(2.0, 1e-4, 12, 100);
  CHECK_THROWS_AS(fit_snr_exponent(noisy, 1e-9, 1.0), ValidationError);
  // Fewer than four usable points is an error, not a fit.
  const OutageCurve short_curve = synthetic_curve(2.0, 1.0, 3, 100000000);
  CHECK_THROWS_AS(fit_snr_exponent(short_curve, 1e-7, 1.0), ValidationError);
}

TEST_CASE("CSV round trip is lossless and tolerant of comments") {
  const MetricTable& t = qpsk_table();
  const OutageCurve c = short_term_sweep(t, uniform_scheme(), FadingSpec{1.5, 2},
                                         0.8, {0.7, 1.9, 4.3}, 3000, 17);
  const std::string csv = curve_to_csv(c);
  const OutageCurve back = curve_from_csv("# extra leading comment\n" + csv);
  CHECK(back.scheme == c.scheme);
  CHECK(back.constellation == c.constellation);
  CHECK(back.blocks == c.blocks);
  CHECK(back.nakagami_m == c.nakagami_m);
  CHECK(back.rate == c.rate);
  REQUIRE(back.points.size() == c.points.size());
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    CHECK(back.points[i].power_p == c.points[i].power_p);  // bit-exact
    CHECK(back.points[i].outage == c.points[i].outage);
    CHECK(back.points[i].ci_low == c.points[i].ci_low);
    CHECK(back.points[i].ci_high == c.points[i].ci_high);
    CHECK(back.points[i].n == c.points[i].n);
    CHECK(back.points[i].seed == c.points[i].seed);
  }
  CHECK_THROWS_AS(curve_from_csv("a,b,c\n1,2,3\n"), ValidationError);
  CHECK_THROWS_AS(curve_from_csv(""), ValidationError);
  // Metadata must be consistent across rows.
  std::string forged = csv;
  const auto last = forged.rfind("\nuniform,");
  REQUIRE(last != std::string::npos);
  forged.replace(last + 1, 7, "uniparm");
  CHECK_THROWS_AS(curve_from_csv(forged), ValidationError);
}

TEST_CASE("JSON round trip preserves the curve exactly") {
  const MetricTable& t = qpsk_table();
  const OutageCurve c = short_term_sweep(t, uniform_scheme(), FadingSpec{1.0, 4},
                                         1.0, {1.0, 2.0}, 2000, 23);
  const OutageCurve back = curve_from_json(curve_to_json(c));
  REQUIRE(back.points.size() == c.points.size());
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    CHECK(back.points[i].power_p == c.points[i].power_p);
    CHECK(back.points[i].outage == c.points[i].outage);
  }
  CHECK(back.scheme == c.scheme);
  CHECK_THROWS_AS(curve_from_json("{}"), ValidationError);
}

TEST_CASE("estimates are identical across worker counts") {
  // The chunked reduction keeps partial counts in fixed slots, so forcing a
  // different thread count must not move a single bit.
  const MetricTable& t = qpsk_table();
  ShortScheme opt;
  opt.scheme = Scheme::kOptimal;
  const auto run_with_threads = [&](const char* threads) {
    setenv("BFPA_THREADS", threads, 1);
    const OutagePoint p = short_term_outage_point(
        t, opt, FadingSpec{1.0, 4}, 1.0, 4.0, 50000, 3, 2);
    unsetenv("BFPA_THREADS");
    return p;
  };
  const OutagePoint one = run_with_threads("1");
  const OutagePoint four = run_with_threads("4");
  CHECK(one.outage == four.outage);
  CHECK(one.ci_low == four.ci_low);
  CHECK(one.ci_high == four.ci_high);
}

TEST_CASE("short-term sweep rejects bad grids and schemes") {
  const MetricTable& t = qpsk_table();
  CHECK_THROWS_AS(short_term_sweep(t, uniform_scheme(), FadingSpec{1.0, 4}, 1.0,
                                   {1.0, -2.0}, 100, 1),
                  ValidationError);
  ShortScheme tw;
  tw.scheme = Scheme::kTruncated;
  tw.beta = 0.0;  // missing truncation level
  CHECK_THROWS_AS(tw.validate(), ValidationError);
}
