#include "bfpa/alloc_long.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "bfpa/parallel.hpp"

namespace bfpa {
namespace {

constexpr double kEtaRelTol = 1e-13;      // bisection interval width
constexpr double kRateCertTol = 1e-9;     // bits, on sum I vs B * target
constexpr double kBoundaryDegenerate = 1e-9;  // boundary mass treated as zero

const double kInf = std::numeric_limits<double>::infinity();

void check_gains(ArrayRef gains) {
  if (gains.size() < 1) throw ValidationError("gains must be non-empty");
  for (Eigen::Index i = 0; i < gains.size(); ++i)
    if (!std::isfinite(gains[i]) || gains[i] < 0.0)
      throw ValidationError("gains must be finite and non-negative");
}

bool rule_uses_table(MinPowerKind kind) {
  return kind == MinPowerKind::kOptimal || kind == MinPowerKind::kTruncated ||
         kind == MinPowerKind::kRefined;
}

bool rule_is_truncated(MinPowerKind kind) {
  return kind == MinPowerKind::kTruncated ||
         kind == MinPowerKind::kTruncatedApprox;
}

bool rule_is_refined(MinPowerKind kind) {
  return kind == MinPowerKind::kRefined || kind == MinPowerKind::kRefinedApprox;
}

// Rate (bits) the rule credits to one block at SNR rho.
double rule_rate_at(const MinPowerRule& rule, double rho) {
  if (rho <= 0.0) return 0.0;
  return rule_uses_table(rule.kind) ? rule.table->mi(rho)
                                    : fitted_mi(*rule.fit, rho);
}

// Per-block SNR of the rule's shape at w = eta * gamma (capped kinds only;
// the optimal kind inverts the MMSE instead).
double rule_shape_rho(const MinPowerRule& rule, double w) {
  if (rule_is_truncated(rule.kind)) {
    if (w <= 1.0) return 0.0;
    return std::min(w - 1.0, rule.beta);
  }
  return refined_sector_rho(w, rule.refined);
}

// Total rate sum_b I(rho_b(eta)) in bits over all blocks.
double total_rate(const MinPowerRule& rule, ArrayRef gains, double eta) {
  double total = 0.0;
  if (rule.kind == MinPowerKind::kOptimal) {
    for (Eigen::Index i = 0; i < gains.size(); ++i) {
      const double w = eta * gains[i];
      if (w <= 1.0) continue;
      double r = 0.0;
      rule.table->mmse_inv_with_rate(1.0 / w, &r);
      total += r;
    }
    return total;
  }
  for (Eigen::Index i = 0; i < gains.size(); ++i) {
    const double g = gains[i];
    if (g <= 0.0) continue;
    total += rule_rate_at(rule, rule_shape_rho(rule, eta * g));
  }
  return total;
}

}  // namespace

// ---------------------------------------------------------------------------
// Rule construction
// ---------------------------------------------------------------------------

std::string min_power_kind_id(MinPowerKind kind) {
  switch (kind) {
    case MinPowerKind::kOptimal: return "opt";
    case MinPowerKind::kTruncated: return "tw";
    case MinPowerKind::kRefined: return "ref";
    case MinPowerKind::kTruncatedApprox: return "tw-approx";
    case MinPowerKind::kRefinedApprox: return "ref-approx";
  }
  throw ValidationError("unknown min-power kind enumerator");
}

MinPowerKind min_power_kind_from_id(const std::string& id) {
  if (id == "opt") return MinPowerKind::kOptimal;
  if (id == "tw") return MinPowerKind::kTruncated;
  if (id == "ref") return MinPowerKind::kRefined;
  if (id == "tw-approx") return MinPowerKind::kTruncatedApprox;
  if (id == "ref-approx") return MinPowerKind::kRefinedApprox;
  throw ValidationError("unknown min-power rule id: " + id);
}

double MinPowerRule::rate_target() const {
  if (rule_uses_table(kind)) return rate;
  return rate + fit->delta_r;
}

void MinPowerRule::validate() const {
  if (!(std::isfinite(rate) && rate > 0.0))
    throw ValidationError("min-power rule: rate must be positive");
  if (rule_uses_table(kind)) {
    if (table == nullptr)
      throw ValidationError("min-power rule: exact kinds need a metric table");
    if (!table->gaussian() && rate >= static_cast<double>(table->bits()))
      throw ValidationError(
          "min-power rule: rate must be strictly below the modulation size");
    if (rate >= table->max_rate())
      throw ValidationError(
          "min-power rule: rate exceeds the table's representable range");
  } else {
    if (fit == nullptr)
      throw ValidationError(
          "min-power rule: surrogate kinds need a fitted model");
    if (rate_target() >= static_cast<double>(fit->bits))
      throw ValidationError(
          "min-power rule: inflated rate target R + delta_r must stay below "
          "the modulation size");
  }
  if (rule_is_truncated(kind)) {
    if (!(std::isfinite(beta) && beta > 0.0))
      throw ValidationError("min-power rule: beta must be positive");
    const double cap_rate = rule_rate_at(*this, beta);
    if (cap_rate < rate_target())
      throw ValidationError(
          "min-power rule: truncation level beta cannot support the rate "
          "target (I(beta) < R); raise beta or lower the rate");
  }
  if (rule_is_refined(kind)) {
    refined.validate();
    const double cap_rate = rule_rate_at(*this, refined.beta);
    if (cap_rate < rate_target())
      throw ValidationError(
          "min-power rule: refined cap beta cannot support the rate target "
          "(I(beta) < R); raise beta or lower the rate");
  }
}

MinPowerRule make_min_power_rule_opt(const MetricTable& table, double rate) {
  MinPowerRule rule;
  rule.kind = MinPowerKind::kOptimal;
  rule.rate = rate;
  rule.table = &table;
  rule.validate();
  return rule;
}

MinPowerRule make_min_power_rule_tw(const MetricTable& table, double rate,
                                    double beta) {
  MinPowerRule rule;
  rule.kind = MinPowerKind::kTruncated;
  rule.rate = rate;
  rule.table = &table;
  rule.beta = beta;
  rule.validate();
  return rule;
}

MinPowerRule make_min_power_rule_ref(const MetricTable& table, double rate,
                                     const RefinedParams& params) {
  MinPowerRule rule;
  rule.kind = MinPowerKind::kRefined;
  rule.rate = rate;
  rule.table = &table;
  rule.refined = params;
  rule.beta = params.beta;
  rule.validate();
  return rule;
}

MinPowerRule make_min_power_rule_tw_approx(const MiFit& fit, double rate,
                                           double beta) {
  MinPowerRule rule;
  rule.kind = MinPowerKind::kTruncatedApprox;
  rule.rate = rate;
  rule.fit = &fit;
  rule.beta = beta;
  rule.validate();
  return rule;
}

MinPowerRule make_min_power_rule_ref_approx(const MiFit& fit, double rate,
                                            const RefinedParams& params) {
  MinPowerRule rule;
  rule.kind = MinPowerKind::kRefinedApprox;
  rule.rate = rate;
  rule.fit = &fit;
  rule.refined = params;
  rule.beta = params.beta;
  rule.validate();
  return rule;
}

// ---------------------------------------------------------------------------
// Per-draw minimum-power solve
// ---------------------------------------------------------------------------

MinPowerResult min_power_alloc(const MinPowerRule& rule, ArrayRef gains) {
  rule.validate();
  check_gains(gains);

  const Eigen::Index n = gains.size();
  const double target_total = static_cast<double>(n) * rule.rate_target();

  double gamma_max = 0.0, gamma_min_active = kInf;
  Eigen::Index n_active = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (gains[i] <= 0.0) continue;
    ++n_active;
    gamma_max = std::max(gamma_max, gains[i]);
    gamma_min_active = std::min(gamma_min_active, gains[i]);
  }
  if (n_active == 0)
    throw NumericRangeError(
        "min-power allocation: no block has positive gain, the rate target "
        "is unreachable");

  // Ceiling of the achievable total rate on this draw.
  double per_block_cap;
  if (rule.kind == MinPowerKind::kOptimal) {
    per_block_cap = rule.table->max_rate();
  } else {
    per_block_cap = rule_rate_at(
        rule, rule_is_truncated(rule.kind) ? rule.beta : rule.refined.beta);
  }
  if (static_cast<double>(n_active) * per_block_cap <
      target_total * (1.0 - 1e-12))
    throw NumericRangeError(
        "min-power allocation: blocks with zero gain leave the rate target "
        "unreachable on this draw");

  // Bracket the threshold.
  double lo = 0.0, hi;
  if (rule.kind == MinPowerKind::kOptimal) {
    hi = 2.0 / gamma_max;
    bool bracketed = false;
    try {
      for (int j = 0; j < 200; ++j) {
        if (total_rate(rule, gains, hi) >= target_total) {
          bracketed = true;
          break;
        }
        lo = hi;
        hi *= 2.0;
      }
    } catch (const NumericRangeError&) {
      throw NumericRangeError(
          "min-power allocation drives blocks past the table's SNR ceiling; "
          "rebuild the table with a wider range");
    }
    if (!bracketed)
      throw NumericRangeError(
          "min-power allocation could not bracket the rate target inside "
          "the table's SNR range");
  } else if (rule_is_truncated(rule.kind)) {
    hi = (rule.beta + 1.0) / gamma_min_active;
  } else {
    hi = rule.refined.beta / (rule.refined.kappa * gamma_min_active);
  }

  while (hi - lo > kEtaRelTol * hi) {
    const double mid = 0.5 * (lo + hi);
    (total_rate(rule, gains, mid) < target_total ? lo : hi) = mid;
  }
  const double eta = hi;  // the side certifying sum I >= B * target

  MinPowerResult out;
  out.powers = Array::Zero(n);
  out.level = eta;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double g = gains[i];
    if (g <= 0.0) continue;
    if (rule.kind == MinPowerKind::kOptimal) {
      const double w = eta * g;
      if (w <= 1.0) continue;
      out.powers[i] = rule.table->mmse_inv(1.0 / w) / g;
    } else {
      out.powers[i] = rule_shape_rho(rule, eta * g) / g;
    }
  }
  out.mean_power = out.powers.sum() / static_cast<double>(n);

  const double achieved = total_rate(rule, gains, eta);
  if (achieved < target_total - kRateCertTol)
    throw NumericRangeError(
        "min-power allocation failed its rate certificate");
  return out;
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

CalibrationSample draw_min_power_sample(const MinPowerRule& rule,
                                        const FadingSpec& fading,
                                        std::int64_t n, std::uint64_t seed,
                                        std::uint64_t stream) {
  rule.validate();
  validate(fading);
  if (n < 1) throw ValidationError("sample size must be >= 1");

  CalibrationSample sample;
  sample.n = n;
  sample.seed = seed;
  sample.sorted_u.resize(static_cast<std::size_t>(n));
  double* u = sample.sorted_u.data();
  for_each_chunk(n, [&](std::int64_t, std::int64_t b, std::int64_t e) {
    Array gains(fading.blocks);
    for (std::int64_t t = b; t < e; ++t) {
      Substream rng = Substream::for_draw(seed, stream, t);
      sample_gains(fading, rng, gains);
      u[t] = min_power_alloc(rule, gains).mean_power;
    }
  });

  std::sort(sample.sorted_u.begin(), sample.sorted_u.end());
  sample.prefix_sum.resize(static_cast<std::size_t>(n) + 1, 0.0);
  for (std::int64_t j = 0; j < n; ++j)
    sample.prefix_sum[static_cast<std::size_t>(j) + 1] =
        sample.prefix_sum[static_cast<std::size_t>(j)] +
        sample.sorted_u[static_cast<std::size_t>(j)];
  return sample;
}

LongTermPolicy policy_from_sample(const CalibrationSample& sample,
                                  const MinPowerRule& rule,
                                  const FadingSpec& fading, double budget_p) {
  rule.validate();
  validate(fading);
  if (!(std::isfinite(budget_p) && budget_p > 0.0))
    throw ValidationError("average power budget must be positive");
  if (sample.n < 1 ||
      sample.sorted_u.size() != static_cast<std::size_t>(sample.n) ||
      sample.prefix_sum.size() != static_cast<std::size_t>(sample.n) + 1)
    throw ValidationError("calibration sample is empty or inconsistent");

  LongTermPolicy policy;
  policy.rule_id = min_power_kind_id(rule.kind);
  policy.rate = rule.rate;
  policy.budget_p = budget_p;
  policy.fading = fading;
  policy.calibration_n = sample.n;
  policy.seed = sample.seed;

  const std::size_t n = static_cast<std::size_t>(sample.n);
  const double need = budget_p * static_cast<double>(sample.n);
  if (sample.prefix_sum[n] < need) {
    // Transmitting on every draw stays below the budget.
    policy.s_star = kInf;
    policy.w_star = 1.0;
    policy.boundary_mass = 0.0;
    return policy;
  }

  // j* = first rank whose cumulative cost reaches the budget.
  const auto it = std::lower_bound(sample.prefix_sum.begin() + 1,
                                   sample.prefix_sum.end(), need);
  const std::size_t j_star =
      static_cast<std::size_t>(it - sample.prefix_sum.begin());
  const double s_star = sample.sorted_u[j_star - 1];

  // Tie group of draws whose cost equals s* exactly.
  const auto lo = std::lower_bound(sample.sorted_u.begin(),
                                   sample.sorted_u.end(), s_star);
  const auto hi_it = std::upper_bound(sample.sorted_u.begin(),
                                      sample.sorted_u.end(), s_star);
  const std::size_t below = static_cast<std::size_t>(lo - sample.sorted_u.begin());
  const std::size_t ties = static_cast<std::size_t>(hi_it - lo);

  policy.s_star = s_star;
  policy.boundary_mass =
      static_cast<double>(ties) / static_cast<double>(sample.n);
  if (s_star > 0.0 && ties > 0) {
    const double spent_below = sample.prefix_sum[below];
    policy.w_star = std::clamp(
        (need - spent_below) / (static_cast<double>(ties) * s_star), 0.0, 1.0);
  } else {
    policy.w_star = 1.0;
  }
  return policy;
}

LongTermPolicy calibrate_policy(const MinPowerRule& rule,
                                const FadingSpec& fading, double budget_p,
                                std::int64_t n, std::uint64_t seed) {
  const CalibrationSample sample =
      draw_min_power_sample(rule, fading, n, seed, kCalibrationStream);
  return policy_from_sample(sample, rule, fading, budget_p);
}

// ---------------------------------------------------------------------------
// Applying a policy
// ---------------------------------------------------------------------------

LongTermDecision apply_policy(const MinPowerRule& rule,
                              const LongTermPolicy& policy, ArrayRef gains,
                              double coin) {
  if (!(coin >= 0.0 && coin < 1.0))
    throw ValidationError("tie-break coin must lie in [0, 1)");
  if (gains.size() != policy.fading.blocks)
    throw ValidationError(
        "gains length does not match the policy's block count");
  if (min_power_kind_id(rule.kind) != policy.rule_id)
    throw ValidationError(
        "rule kind does not match the one the policy was calibrated for");

  MinPowerResult alloc = min_power_alloc(rule, gains);
  LongTermDecision decision;
  decision.mean_power = alloc.mean_power;
  if (alloc.mean_power < policy.s_star) {
    decision.transmit = true;
  } else if (alloc.mean_power == policy.s_star) {
    decision.transmit = policy.boundary_mass < kBoundaryDegenerate
                            ? true
                            : coin < policy.w_star;
  } else {
    decision.transmit = false;
  }
  decision.powers =
      decision.transmit ? std::move(alloc.powers) : Array::Zero(gains.size());
  return decision;
}

LongTermDecision apply_policy(const MinPowerRule& rule,
                              const LongTermPolicy& policy, ArrayRef gains,
                              Substream& coins) {
  const double coin = coins.uniform01();  // consumed on every call
  return apply_policy(rule, policy, gains, coin);
}

// ---------------------------------------------------------------------------
// Outage evaluation
// ---------------------------------------------------------------------------

LongTermOutageResult outage_from_sample(const CalibrationSample& eval,
                                        const LongTermPolicy& policy) {
  const std::int64_t n = eval.n;
  if (n < 1 || eval.sorted_u.size() != static_cast<std::size_t>(n))
    throw ValidationError("evaluation sample is empty or inconsistent");

  LongTermOutageResult result;
  result.n = n;
  result.seed = eval.seed;

  const std::size_t un = static_cast<std::size_t>(n);
  std::size_t below, ties;
  if (std::isinf(policy.s_star)) {
    below = un;
    ties = 0;
  } else {
    const auto lo = std::lower_bound(eval.sorted_u.begin(),
                                     eval.sorted_u.end(), policy.s_star);
    const auto hi = std::upper_bound(eval.sorted_u.begin(),
                                     eval.sorted_u.end(), policy.s_star);
    below = static_cast<std::size_t>(lo - eval.sorted_u.begin());
    ties = static_cast<std::size_t>(hi - lo);
  }
  const std::size_t above = un - below - ties;

  // Boundary draws transmit with probability w*; with negligible boundary
  // mass the deterministic "transmit iff u <= s*" rule applies.  On fresh
  // continuous draws ties are a probability-zero event either way, so the
  // expected contribution is used directly instead of per-draw coins.
  const double w_eff =
      policy.boundary_mass < kBoundaryDegenerate ? 1.0 : policy.w_star;
  const double nd = static_cast<double>(n);
  result.outage =
      (static_cast<double>(above) + (1.0 - w_eff) * static_cast<double>(ties)) /
      nd;
  result.transmit_fraction =
      (static_cast<double>(below) + w_eff * static_cast<double>(ties)) / nd;
  const double boundary_power =
      std::isinf(policy.s_star)
          ? 0.0
          : w_eff * policy.s_star * static_cast<double>(ties);
  result.avg_power = (eval.prefix_sum[below] + boundary_power) / nd;

  const std::int64_t k_out =
      static_cast<std::int64_t>(above) +
      static_cast<std::int64_t>(
          std::llround((1.0 - w_eff) * static_cast<double>(ties)));
  const auto ci = wilson_interval(k_out, n);
  result.ci_low = ci.first;
  result.ci_high = ci.second;
  return result;
}

LongTermOutageResult long_term_outage(const MinPowerRule& rule,
                                      const LongTermPolicy& policy,
                                      std::int64_t n, std::uint64_t seed) {
  if (min_power_kind_id(rule.kind) != policy.rule_id)
    throw ValidationError(
        "rule kind does not match the one the policy was calibrated for");
  const CalibrationSample eval =
      draw_min_power_sample(rule, policy.fading, n, seed, kEvaluationStream);
  return outage_from_sample(eval, policy);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string to_json(const LongTermPolicy& policy) {
  nlohmann::json j;
  j["format"] = "bfpa-policy-v1";
  j["version"] = std::string(kVersion);
  j["rule_id"] = policy.rule_id;
  j["rate"] = policy.rate;
  j["budget_p"] = policy.budget_p;
  j["fading"] = {{"nakagami_m", policy.fading.nakagami_m},
                 {"blocks", policy.fading.blocks}};
  if (std::isinf(policy.s_star))
    j["s_star"] = "inf";
  else
    j["s_star"] = policy.s_star;
  j["w_star"] = policy.w_star;
  j["boundary_mass"] = policy.boundary_mass;
  j["calibration_n"] = policy.calibration_n;
  j["seed"] = hex64(policy.seed);
  return j.dump(2);
}

LongTermPolicy policy_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("policy JSON malformed: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "bfpa-policy-v1")
      throw ValidationError("unrecognized policy format tag");
    LongTermPolicy policy;
    policy.rule_id = j.at("rule_id").get<std::string>();
    min_power_kind_from_id(policy.rule_id);  // must be a known id
    policy.rate = j.at("rate").get<double>();
    policy.budget_p = j.at("budget_p").get<double>();
    policy.fading.nakagami_m = j.at("fading").at("nakagami_m").get<double>();
    policy.fading.blocks = j.at("fading").at("blocks").get<int>();
    validate(policy.fading);
    const auto& s = j.at("s_star");
    if (s.is_string()) {
      if (s.get<std::string>() != "inf")
        throw ValidationError("s_star must be a number or \"inf\"");
      policy.s_star = kInf;
    } else {
      policy.s_star = s.get<double>();
    }
    policy.w_star = j.at("w_star").get<double>();
    policy.boundary_mass = j.at("boundary_mass").get<double>();
    policy.calibration_n = j.at("calibration_n").get<std::int64_t>();
    try {
      policy.seed = std::stoull(j.at("seed").get<std::string>(), nullptr, 16);
    } catch (const std::logic_error&) {
      throw ValidationError("policy seed must be a hexadecimal string");
    }
    if (!(policy.w_star >= 0.0 && policy.w_star <= 1.0))
      throw ValidationError("w_star must lie in [0, 1]");
    if (!(policy.budget_p > 0.0))
      throw ValidationError("budget_p must be positive");
    return policy;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("policy JSON invalid: ") + e.what());
  }
}

}  // namespace bfpa
