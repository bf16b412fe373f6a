#include <doctest.h>

#include <cmath>
#include <limits>

#include "bfpa/alloc_long.hpp"

using namespace bfpa;

namespace {

const MetricTable& qpsk_table() {
  static const MetricTable t = MetricTable::build(make_psk(2));
  return t;
}

const MiFit& qpsk_fit() {
  static const MiFit f = [] {
    Array grid(40);
    const double a = std::log(0.01), b = std::log(100.0);
    for (int i = 0; i < 40; ++i)
      grid[i] = std::exp(a + (b - a) * i / 39.0);
    return fit_mi_approx(make_psk(2), grid);
  }();
  return f;
}

Array random_gains(int blocks, std::uint64_t draw, double m = 1.0) {
  Substream rng = Substream::for_draw(31337, 5, draw);
  return sample_gains(FadingSpec{m, blocks}, rng);
}

double rule_rate(const MinPowerRule& rule, double rho) {
  return rule.fit ? fitted_mi(*rule.fit, rho) : rule.table->mi(rho);
}

}  // namespace

TEST_CASE("min-power kind ids round trip") {
  for (MinPowerKind k :
       {MinPowerKind::kOptimal, MinPowerKind::kTruncated, MinPowerKind::kRefined,
        MinPowerKind::kTruncatedApprox, MinPowerKind::kRefinedApprox})
    CHECK(min_power_kind_from_id(min_power_kind_id(k)) == k);
  CHECK(min_power_kind_id(MinPowerKind::kOptimal) == "opt");
  CHECK(min_power_kind_id(MinPowerKind::kTruncatedApprox) == "tw-approx");
  CHECK_THROWS_AS(min_power_kind_from_id("bogus"), ValidationError);
}

TEST_CASE("rule validation catches infeasible caps and missing pieces") {
  const MetricTable& t = qpsk_table();
  CHECK_NOTHROW(make_min_power_rule_opt(t, 1.0).validate());
  // Rate at or above the modulation size can never be delivered.
  CHECK_THROWS_AS(make_min_power_rule_opt(t, 2.0).validate(), ValidationError);
  // A truncated rule whose cap cannot carry the per-block rate target.
  const double beta_low = t.mi_inv(0.8);
  CHECK_THROWS_AS(make_min_power_rule_tw(t, 1.0, beta_low * 0.9).validate(),
                  ValidationError);
  CHECK_NOTHROW(make_min_power_rule_tw(t, 1.0, 3.0).validate());
  // Approx rules need the fit's saturation level above the inflated target.
  const MiFit& fit = qpsk_fit();
  CHECK_NOTHROW(make_min_power_rule_tw_approx(fit, 1.0, 3.0).validate());
  CHECK_THROWS_AS(make_min_power_rule_tw_approx(fit, 2.0, 3.0).validate(),
                  ValidationError);
}

TEST_CASE("minimum-power allocation delivers the rate at stationary cost") {
  const MetricTable& t = qpsk_table();
  const RefinedParams rp = tangent_params(t, 3.0, 5.5);
  const MiFit& fit = qpsk_fit();
  const MinPowerRule rules[] = {
      make_min_power_rule_opt(t, 1.0),
      make_min_power_rule_tw(t, 1.0, 3.0),
      make_min_power_rule_ref(t, 1.0, rp),
      make_min_power_rule_tw_approx(fit, 1.0, 3.0),
      make_min_power_rule_ref_approx(fit, 1.0, rp),
  };
  for (const MinPowerRule& rule : rules) {
    CAPTURE(min_power_kind_id(rule.kind));
    for (std::uint64_t d = 0; d < 200; ++d) {
      const Array gains = random_gains(4, d);
      const MinPowerResult r = min_power_alloc(rule, gains);
      REQUIRE(r.powers.size() == 4);
      CHECK((r.powers >= 0.0).all());
      CHECK(r.mean_power ==
            doctest::Approx(r.powers.sum() / 4.0).epsilon(1e-12));
      // Rate certificate: the allocation achieves the (inflated) target.
      double bits = 0.0;
      for (int b = 0; b < 4; ++b) bits += rule_rate(rule, gains[b] * r.powers[b]);
      const double target = 4.0 * rule.rate_target();
      CHECK(bits >= target - 1e-8);
      CHECK(bits <= target + 1e-6 * target + 1e-7);
    }
  }
}

TEST_CASE("optimal min-power shape satisfies the MMSE stationarity") {
  const MetricTable& t = qpsk_table();
  const MinPowerRule rule = make_min_power_rule_opt(t, 1.0);
  for (std::uint64_t d = 0; d < 200; ++d) {
    const Array gains = random_gains(4, 3000 + d);
    const MinPowerResult r = min_power_alloc(rule, gains);
    for (int b = 0; b < 4; ++b) {
      const double w = r.level * gains[b];
      if (r.powers[b] > 0.0)
        // Active block: mmse(rho_b) = 1 / (eta gamma_b).
        CHECK(t.mmse(gains[b] * r.powers[b]) ==
              doctest::Approx(1.0 / w).epsilon(1e-8));
      else
        CHECK(w <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("capped min-power shapes respect their caps") {
  const MetricTable& t = qpsk_table();
  const RefinedParams rp = tangent_params(t, 3.0, 5.5);
  const MinPowerRule tw = make_min_power_rule_tw(t, 1.0, 3.0);
  const MinPowerRule ref = make_min_power_rule_ref(t, 1.0, rp);
  for (std::uint64_t d = 0; d < 200; ++d) {
    const Array gains = random_gains(4, 6000 + d);
    const MinPowerResult a = min_power_alloc(tw, gains);
    for (int b = 0; b < 4; ++b)
      CHECK(gains[b] * a.powers[b] <= 3.0 * (1.0 + 1e-9));
    const MinPowerResult r = min_power_alloc(ref, gains);
    for (int b = 0; b < 4; ++b) {
      CHECK(gains[b] * r.powers[b] <= rp.beta * (1.0 + 1e-9));
      // Shape consistency with the short-term sector map.
      CHECK(gains[b] * r.powers[b] ==
            doctest::Approx(refined_sector_rho(r.level * gains[b], rp))
                .epsilon(5e-7));
    }
  }
}

TEST_CASE("zero-gain draws that cannot carry the rate are rejected") {
  const MetricTable& t = qpsk_table();
  const MinPowerRule tw = make_min_power_rule_tw(t, 1.9, t.mi_inv(1.95));
  Array gains(4);
  gains << 1.0, 0.0, 0.0, 0.0;
  // One live block capped at mi 1.95 < 4 * 1.9 total bits: infeasible draw.
  CHECK_THROWS_AS(min_power_alloc(tw, gains), NumericRangeError);
}

TEST_CASE("calibration sample: sorted order and prefix sums") {
  const MinPowerRule rule = make_min_power_rule_opt(qpsk_table(), 1.0);
  const FadingSpec fading{1.0, 4};
  const CalibrationSample s = draw_min_power_sample(rule, fading, 4000, 11);
  REQUIRE(s.n == 4000);
  REQUIRE(s.sorted_u.size() == 4000);
  REQUIRE(s.prefix_sum.size() == 4001);
  CHECK(s.prefix_sum[0] == 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < s.sorted_u.size(); ++i) {
    if (i > 0) CHECK(s.sorted_u[i] >= s.sorted_u[i - 1]);
    CHECK(s.sorted_u[i] > 0.0);
    acc += s.sorted_u[i];
    CHECK(s.prefix_sum[i + 1] == doctest::Approx(acc).epsilon(1e-12));
  }
  // Spot-check one entry against a direct recomputation of the draw.
  Substream rng = Substream::for_draw(11, kCalibrationStream, 123);
  const Array gains = sample_gains(fading, rng);
  const double u = min_power_alloc(rule, gains).mean_power;
  CHECK(std::binary_search(
      s.sorted_u.begin(), s.sorted_u.end(), u,
      [](double a, double b) { return a < b - 1e-15; }));
}

TEST_CASE("policy calibration meets the budget exactly on its own sample") {
  const MinPowerRule rule = make_min_power_rule_opt(qpsk_table(), 1.0);
  const FadingSpec fading{1.0, 4};
  const CalibrationSample s = draw_min_power_sample(rule, fading, 20000, 21);
  const double mean_u = s.prefix_sum.back() / static_cast<double>(s.n);

  SUBCASE("binding budget: threshold finite, identity exact") {
    for (double frac : {0.3, 0.7, 0.95}) {
      const double budget = frac * mean_u;
      const LongTermPolicy pol = policy_from_sample(s, rule, fading, budget);
      CHECK(std::isfinite(pol.s_star));
      CHECK(pol.w_star >= 0.0);
      CHECK(pol.w_star <= 1.0);
      // Average transmitted power on the calibration sample equals P.
      const auto below = std::lower_bound(s.sorted_u.begin(), s.sorted_u.end(),
                                          pol.s_star) -
                         s.sorted_u.begin();
      const auto above = std::upper_bound(s.sorted_u.begin(), s.sorted_u.end(),
                                          pol.s_star) -
                         s.sorted_u.begin();
      const double ties = static_cast<double>(above - below);
      const double spent =
          s.prefix_sum[static_cast<std::size_t>(below)] +
          pol.w_star * pol.s_star * ties;
      CHECK(spent == doctest::Approx(static_cast<double>(s.n) * budget)
                         .epsilon(1e-9));
      CHECK(pol.boundary_mass ==
            doctest::Approx(ties / static_cast<double>(s.n)).epsilon(1e-12));
    }
  }
  SUBCASE("loose budget: infinite threshold") {
    const LongTermPolicy pol =
        policy_from_sample(s, rule, fading, mean_u * 1.01);
    CHECK(std::isinf(pol.s_star));
    CHECK(pol.w_star == 1.0);
  }
  CHECK_THROWS_AS(policy_from_sample(s, rule, fading, 0.0), ValidationError);
}

TEST_CASE("apply_policy: threshold rule, boundary coin, and guards") {
  const MinPowerRule rule = make_min_power_rule_opt(qpsk_table(), 1.0);
  const FadingSpec fading{1.0, 4};
  const LongTermPolicy pol = calibrate_policy(rule, fading, 0.8, 5000, 31);
  REQUIRE(std::isfinite(pol.s_star));

  int transmitted = 0, agreed = 0;
  for (std::uint64_t d = 0; d < 500; ++d) {
    const Array gains = random_gains(4, 100000 + d);
    const LongTermDecision dec = apply_policy(rule, pol, gains, 0.5);
    const double u = min_power_alloc(rule, gains).mean_power;
    CHECK(dec.mean_power == doctest::Approx(u).epsilon(1e-12));
    const bool want = u < pol.s_star ||
                      (u == pol.s_star && pol.boundary_mass >= 1e-9 &&
                       0.5 < pol.w_star) ||
                      (u == pol.s_star && pol.boundary_mass < 1e-9);
    if (dec.transmit == want) ++agreed;
    if (dec.transmit) {
      ++transmitted;
      CHECK((dec.powers > 0.0).any());
    } else {
      CHECK((dec.powers == 0.0).all());
    }
  }
  CHECK(agreed == 500);
  CHECK(transmitted > 0);
  CHECK(transmitted < 500);

  // Mismatched rule id is refused.
  const MinPowerRule other = make_min_power_rule_tw(qpsk_table(), 1.0, 3.0);
  CHECK_THROWS_AS(apply_policy(other, pol, random_gains(4, 1), 0.5),
                  ValidationError);
  // Bad coin and bad gains length are refused.
  CHECK_THROWS_AS(apply_policy(rule, pol, random_gains(4, 1), 1.5),
                  ValidationError);
  CHECK_THROWS_AS(apply_policy(rule, pol, random_gains(3, 1), 0.5),
                  ValidationError);
}

TEST_CASE("outage evaluation agrees with per-draw counting") {
  const MinPowerRule rule = make_min_power_rule_opt(qpsk_table(), 1.0);
  const FadingSpec fading{1.0, 4};
  const LongTermPolicy pol = calibrate_policy(rule, fading, 0.6, 8000, 41);
  const std::int64_t n = 4000;
  const LongTermOutageResult res = long_term_outage(rule, pol, n, 41);
  REQUIRE(res.n == n);

  // Brute force: same evaluation stream, draw by draw.
  std::int64_t out = 0;
  double spent = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    Substream rng = Substream::for_draw(41, kEvaluationStream, static_cast<std::uint64_t>(i));
    const Array gains = sample_gains(fading, rng);
    const double u = min_power_alloc(rule, gains).mean_power;
    if (u < pol.s_star)
      spent += u;
    else
      ++out;
  }
  CHECK(res.outage == doctest::Approx(static_cast<double>(out) /
                                      static_cast<double>(n))
                          .epsilon(1e-12));
  CHECK(res.avg_power ==
        doctest::Approx(spent / static_cast<double>(n)).epsilon(1e-10));
  CHECK(res.transmit_fraction ==
        doctest::Approx(1.0 - res.outage).epsilon(1e-12));
  CHECK(res.ci_low <= res.outage);
  CHECK(res.ci_high >= res.outage);
  // Evaluation must not reuse calibration randomness.
  const CalibrationSample cal = draw_min_power_sample(rule, fading, 100, 41);
  const CalibrationSample eval =
      draw_min_power_sample(rule, fading, 100, 41, kEvaluationStream);
  CHECK(cal.sorted_u != eval.sorted_u);
}

TEST_CASE("policy JSON round trip, including the infinite threshold") {
  const MinPowerRule rule = make_min_power_rule_tw(qpsk_table(), 0.9, 4.0);
  const FadingSpec fading{2.0, 4};
  for (double budget : {0.4, 100.0}) {
    const LongTermPolicy pol = calibrate_policy(rule, fading, budget, 3000, 51);
    const LongTermPolicy back = policy_from_json(to_json(pol));
    CHECK(back.rule_id == pol.rule_id);
    CHECK(back.rate == pol.rate);
    CHECK(back.budget_p == pol.budget_p);
    CHECK(back.fading.nakagami_m == pol.fading.nakagami_m);
    CHECK(back.fading.blocks == pol.fading.blocks);
    if (std::isinf(pol.s_star))
      CHECK(std::isinf(back.s_star));
    else
      CHECK(back.s_star == pol.s_star);
    CHECK(back.w_star == pol.w_star);
    CHECK(back.boundary_mass == pol.boundary_mass);
    CHECK(back.calibration_n == pol.calibration_n);
    CHECK(back.seed == pol.seed);
  }
  CHECK_THROWS_AS(policy_from_json("{\"format\": \"wrong\"}"), ValidationError);
  CHECK_THROWS_AS(policy_from_json("nope"), ValidationError);
}

TEST_CASE("long-term evaluation is bit-reproducible") {
  const MinPowerRule rule = make_min_power_rule_ref(
      qpsk_table(), 1.0, tangent_params(qpsk_table(), 3.0, 5.5));
  const FadingSpec fading{1.0, 4};
  const LongTermPolicy pol = calibrate_policy(rule, fading, 0.7, 4000, 61);
  const LongTermOutageResult a = long_term_outage(rule, pol, 3000, 61);
  const LongTermOutageResult b = long_term_outage(rule, pol, 3000, 61);
  CHECK(a.outage == b.outage);
  CHECK(a.avg_power == b.avg_power);
  CHECK(a.ci_low == b.ci_low);
  CHECK(a.ci_high == b.ci_high);
}
