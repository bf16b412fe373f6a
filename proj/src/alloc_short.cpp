#include "bfpa/alloc_short.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace bfpa {
namespace {

constexpr double kFloorSnapTol = 1e-9;
constexpr double kBudgetCertTol = 1e-9;   // relative, on sum(p) vs B*P
constexpr double kBisectRelTol = 5e-14;   // relative interval width

void check_gains(ArrayRef gains) {
  if (gains.size() < 1) throw ValidationError("gains must be non-empty");
  for (Eigen::Index i = 0; i < gains.size(); ++i) {
    const double g = gains[i];
    if (!std::isfinite(g) || g < 0.0)
      throw ValidationError("gains must be finite and non-negative");
  }
}

void check_power(double power) {
  if (!std::isfinite(power) || power <= 0.0)
    throw ValidationError("per-block power budget must be positive");
}

// floor(x) with arguments within 1e-9 (relative) of an integer snapped first,
// so rates sitting on a grid land on the intended step of the bound.
long snapped_floor(double x) {
  const double nearest = std::nearbyint(x);
  if (std::abs(x - nearest) <= kFloorSnapTol * std::max(1.0, std::abs(x)))
    return static_cast<long>(nearest);
  return static_cast<long>(std::floor(x));
}

}  // namespace

std::string scheme_id(Scheme scheme) {
  switch (scheme) {
    case Scheme::kUniform: return "uniform";
    case Scheme::kWaterfill: return "wf";
    case Scheme::kTruncated: return "tw";
    case Scheme::kRefined: return "ref";
    case Scheme::kOptimal: return "opt";
  }
  throw ValidationError("unknown scheme enumerator");
}

Scheme scheme_from_id(const std::string& id) {
  if (id == "uniform") return Scheme::kUniform;
  if (id == "wf") return Scheme::kWaterfill;
  if (id == "tw") return Scheme::kTruncated;
  if (id == "ref") return Scheme::kRefined;
  if (id == "opt") return Scheme::kOptimal;
  throw ValidationError("unknown scheme id: " + id);
}

// ---------------------------------------------------------------------------
// Diversity-order combinatorics
// ---------------------------------------------------------------------------

static void check_bound_args(int blocks, double rate, int bits) {
  if (blocks < 1) throw ValidationError("blocks must be >= 1");
  if (bits < 1) throw ValidationError("bits must be >= 1");
  if (!std::isfinite(rate) || rate <= 0.0 || rate > static_cast<double>(bits))
    throw ValidationError("rate must lie in (0, bits]");
}

int singleton_bound(int blocks, double rate, int bits) {
  check_bound_args(blocks, rate, bits);
  const double x = blocks * (1.0 - rate / bits);
  return static_cast<int>(1 + snapped_floor(x));
}

bool singleton_bound_discontinuous(int blocks, double rate, int bits) {
  check_bound_args(blocks, rate, bits);
  const double x = blocks * (1.0 - rate / bits);
  const double nearest = std::nearbyint(x);
  return std::abs(x - nearest) <= kFloorSnapTol * std::max(1.0, std::abs(x));
}

std::optional<double> diversity_beta_threshold(const MetricTable& table,
                                               int blocks, double rate) {
  if (table.gaussian())
    throw ValidationError(
        "diversity threshold requires a discrete-input table");
  const int bits = table.bits();
  check_bound_args(blocks, rate, bits);
  if (rate >= static_cast<double>(bits))
    throw ValidationError("rate must be strictly below the modulation size");
  const long k = snapped_floor(blocks * (1.0 - rate / bits));
  const long denom = blocks - k;
  const double required = blocks * rate / static_cast<double>(denom);
  // At a discontinuity of the Singleton bound the required per-block rate
  // equals the modulation size and the inverse diverges.
  if (required >= bits * (1.0 - 1e-12)) return std::nullopt;
  return table.mi_inv(required);
}

// ---------------------------------------------------------------------------
// Uniform and classical waterfilling
// ---------------------------------------------------------------------------

PowerAllocation uniform_alloc(int blocks, double power) {
  if (blocks < 1) throw ValidationError("blocks must be >= 1");
  check_power(power);
  PowerAllocation out;
  out.powers = Array::Constant(blocks, power);
  out.scheme = Scheme::kUniform;
  out.budget_p = power;
  out.level = power;
  return out;
}

PowerAllocation waterfill(ArrayRef gains, double power) {
  check_gains(gains);
  check_power(power);
  const Eigen::Index n = gains.size();
  const double total = power * static_cast<double>(n);

  PowerAllocation out;
  out.powers = Array::Zero(n);
  out.scheme = Scheme::kWaterfill;
  out.budget_p = power;

  // Inverse gains of the active (positive-gain) blocks, ascending.
  std::vector<double> inv;
  inv.reserve(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    if (gains[i] > 0.0) inv.push_back(1.0 / gains[i]);
  if (inv.empty()) return out;
  std::sort(inv.begin(), inv.end());

  // Water level for k active blocks: eta_k = (total + sum_{i<k} inv_i) / k.
  // The solution is the largest k keeping every active power positive.
  double prefix = 0.0;
  double eta = 0.0;
  for (size_t k = 1; k <= inv.size(); ++k) {
    prefix += inv[k - 1];
    const double trial = (total + prefix) / static_cast<double>(k);
    if (trial <= inv[k - 1]) break;  // block k-1 would get non-positive power
    eta = trial;
  }
  for (Eigen::Index i = 0; i < n; ++i)
    if (gains[i] > 0.0) out.powers[i] = std::max(0.0, eta - 1.0 / gains[i]);
  out.level = eta;
  return out;
}

// ---------------------------------------------------------------------------
// Truncated waterfilling
// ---------------------------------------------------------------------------

static double tw_power(double eta, double gain, double beta) {
  const double linear = eta - 1.0 / gain;
  if (linear <= 0.0) return 0.0;
  return std::min(beta / gain, linear);
}

PowerAllocation detail::truncated_waterfill_bisect(ArrayRef gains,
                                                   double power, double beta) {
  check_gains(gains);
  check_power(power);
  if (!std::isfinite(beta) || beta <= 0.0)
    throw ValidationError("truncation level beta must be positive");

  const Eigen::Index n = gains.size();
  const double total = power * static_cast<double>(n);
  PowerAllocation out;
  out.powers = Array::Zero(n);
  out.scheme = Scheme::kTruncated;
  out.budget_p = power;

  double cap_sum = 0.0;
  double eta_all_capped = 0.0;
  bool any_active = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (gains[i] <= 0.0) continue;
    any_active = true;
    cap_sum += beta / gains[i];
    eta_all_capped = std::max(eta_all_capped, (beta + 1.0) / gains[i]);
  }
  if (!any_active) return out;

  if (cap_sum <= total) {
    // Budget not binding: every active block is driven to rho = beta.
    for (Eigen::Index i = 0; i < n; ++i)
      if (gains[i] > 0.0) out.powers[i] = beta / gains[i];
    out.level = eta_all_capped;
    return out;
  }

  const auto spent = [&](double eta) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (gains[i] > 0.0) s += tw_power(eta, gains[i], beta);
    return s;
  };

  double lo = 0.0, hi = eta_all_capped;
  while (hi - lo > kBisectRelTol * hi) {
    const double mid = 0.5 * (lo + hi);
    (spent(mid) < total ? lo : hi) = mid;
  }
  double eta = 0.5 * (lo + hi);

  // Exact snap: classify blocks at eta, then solve the linear budget
  // equation for the active set; iterate until the classification is stable.
  for (int pass = 0; pass < 8; ++pass) {
    double inv_sum = 0.0, capped_sum = 0.0;
    long n_linear = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (gains[i] <= 0.0) continue;
      if ((beta + 1.0) / gains[i] <= eta) {
        capped_sum += beta / gains[i];
      } else if (1.0 / gains[i] < eta) {
        inv_sum += 1.0 / gains[i];
        ++n_linear;
      }
    }
    if (n_linear == 0) break;  // boundary corner; bisected eta stands
    const double snapped =
        (total - capped_sum + inv_sum) / static_cast<double>(n_linear);
    if (snapped == eta) break;
    eta = snapped;
  }

  for (Eigen::Index i = 0; i < n; ++i)
    if (gains[i] > 0.0) out.powers[i] = tw_power(eta, gains[i], beta);
  out.level = eta;

  if (std::abs(out.powers.sum() - total) > kBudgetCertTol * total)
    throw NumericRangeError(
        "truncated waterfilling failed its budget certificate");
  return out;
}

PowerAllocation truncated_waterfill(ArrayRef gains, double power,
                                    double beta) {
  check_gains(gains);
  check_power(power);
  if (!std::isfinite(beta) || beta <= 0.0)
    throw ValidationError("truncation level beta must be positive");

  const Eigen::Index n = gains.size();
  const double total = power * static_cast<double>(n);

  // Active blocks sorted by descending gain; index 0 caps first as the
  // threshold rises.
  std::vector<Eigen::Index> order;
  order.reserve(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    if (gains[i] > 0.0) order.push_back(i);
  if (order.empty()) {
    PowerAllocation out;
    out.powers = Array::Zero(n);
    out.scheme = Scheme::kTruncated;
    out.budget_p = power;
    return out;
  }
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return gains[a] > gains[b];
  });
  const size_t na = order.size();

  double cap_sum = 0.0;
  for (Eigen::Index i : order) cap_sum += beta / gains[i];
  if (cap_sum <= total) {
    PowerAllocation out;
    out.powers = Array::Zero(n);
    out.scheme = Scheme::kTruncated;
    out.budget_p = power;
    for (Eigen::Index i : order) out.powers[i] = beta / gains[i];
    double eta = 0.0;
    for (Eigen::Index i : order)
      eta = std::max(eta, (beta + 1.0) / gains[i]);
    out.level = eta;
    return out;
  }

  // prefix_cap[l] = sum of beta/gamma over the l strongest blocks;
  // prefix_inv[k] = sum of 1/gamma over the k strongest blocks.
  std::vector<double> prefix_cap(na + 1, 0.0), prefix_inv(na + 1, 0.0);
  for (size_t j = 0; j < na; ++j) {
    prefix_cap[j + 1] = prefix_cap[j] + beta / gains[order[j]];
    prefix_inv[j + 1] = prefix_inv[j] + 1.0 / gains[order[j]];
  }
  const double inf = std::numeric_limits<double>::infinity();
  const auto inv_gain = [&](size_t j) {  // 1-based rank, inf past the end
    return j <= na ? 1.0 / gains[order[j - 1]] : inf;
  };

  // Enumerate (l capped, k powered) splits of the sorted gains.  For each
  // candidate the budget fixes eta in closed form; accept when eta is
  // consistent with the split's bracket.  Measure-zero boundary draws may
  // miss every bracket by roundoff, in which case the bisection solver takes
  // over.
  const double slack = 1e-12;
  for (size_t l = 0; l < na; ++l) {
    for (size_t k = l + 1; k <= na; ++k) {
      const double eta = (total - prefix_cap[l] + prefix_inv[k] -
                          prefix_inv[l]) /
                         static_cast<double>(k - l);
      const double lo_active = inv_gain(k);            // weakest powered block
      const double hi_active = inv_gain(k + 1);        // strongest silent one
      if (!(eta > lo_active * (1.0 - slack) && eta <= hi_active * (1.0 + slack)))
        continue;
      const double lo_cap = l > 0 ? (beta + 1.0) * inv_gain(l) : 0.0;
      const double hi_cap = (beta + 1.0) * inv_gain(l + 1);
      if (!(eta >= lo_cap * (1.0 - slack) && eta < hi_cap * (1.0 + slack)))
        continue;

      PowerAllocation out;
      out.powers = Array::Zero(n);
      out.scheme = Scheme::kTruncated;
      out.budget_p = power;
      for (size_t j = 0; j < l; ++j)
        out.powers[order[j]] = beta / gains[order[j]];
      for (size_t j = l; j < k; ++j)
        out.powers[order[j]] =
            std::clamp(eta - 1.0 / gains[order[j]], 0.0, beta / gains[order[j]]);
      out.level = eta;
      if (std::abs(out.powers.sum() - total) <= kBudgetCertTol * total)
        return out;
      break;  // inconsistent split; try the next l
    }
  }
  return detail::truncated_waterfill_bisect(gains, power, beta);
}

// ---------------------------------------------------------------------------
// Refined truncation
// ---------------------------------------------------------------------------

void RefinedParams::validate() const {
  if (!(std::isfinite(kappa) && kappa > 0.0 && kappa < 1.0))
    throw ValidationError("refined rule: kappa must lie in (0, 1)");
  if (!std::isfinite(intercept))
    throw ValidationError("refined rule: intercept must be finite");
  if (!(std::isfinite(alpha) && alpha > 0.0))
    throw ValidationError("refined rule: alpha must be positive");
  if (!(std::isfinite(beta) && beta > alpha))
    throw ValidationError("refined rule: beta must exceed alpha");
  if (!(std::isfinite(rho0) && rho0 > 0.0))
    throw ValidationError("refined rule: rho0 must be positive");
  // Continuity of the per-block power in eta requires the tangent sector to
  // start no earlier than the linear sector ends.
  if (kappa * (alpha + 1.0) > alpha * (1.0 + 1e-12))
    throw ValidationError(
        "refined rule: kappa * (alpha + 1) <= alpha violated; "
        "surrogate sectors would overlap");
}

RefinedParams tangent_params(const MetricTable& table, double rho0,
                             double beta) {
  if (table.gaussian())
    throw ValidationError(
        "tangent parameters require a discrete-input table: the tangent to "
        "log2(1 + rho) never re-crosses it");
  if (!(std::isfinite(rho0) && rho0 > 0.0))
    throw ValidationError("rho0 must be positive");
  const TableSpec& spec = table.spec();
  if (rho0 < spec.rho_min || rho0 > spec.rho_max)
    throw ValidationError("rho0 must lie inside the table's SNR range");

  // Exact metrics at the anchor; d I_bits / d log2(rho) = rho * MMSE(rho).
  const Metrics at0 =
      awgn_metrics_at(table.input(), rho0, spec.quadrature_order);
  RefinedParams params;
  params.rho0 = rho0;
  params.kappa = rho0 * at0.mmse;
  params.intercept = at0.mi - params.kappa * std::log2(rho0);
  params.beta = beta;

  // Crossover alpha: upper root below rho0 of
  //   g(x) = kappa x + a - log2(1 + 2^x),  x = log2(rho).
  // g is concave in x with g(log2 rho0) < 0 (discrete input below capacity),
  // so the first sign change found while stepping down brackets the root.
  const auto g = [&](double x) {
    return params.kappa * x + params.intercept - std::log2(1.0 + std::exp2(x));
  };
  const double x0 = std::log2(rho0);
  double hi = x0, lo = x0;
  bool bracketed = false;
  for (int j = 1; j <= 200; ++j) {
    lo = x0 - j;
    if (g(lo) > 0.0) {
      bracketed = true;
      break;
    }
    hi = lo;
  }
  if (!bracketed)
    throw ValidationError(
        "tangent line never rises above log2(1 + rho) below rho0; "
        "no crossover alpha exists for this anchor");
  // g(lo) > 0 >= g(hi); bisect for the upper root.
  for (int it = 0; it < 200 && hi - lo > 1e-14 * std::max(1.0, std::abs(hi));
       ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) > 0.0 ? lo : hi) = mid;
  }
  params.alpha = std::exp2(0.5 * (lo + hi));
  params.validate();
  return params;
}

double refined_sector_rho(double w, const RefinedParams& q) {
  // w = eta * gamma; five sectors, continuous and nondecreasing in w.
  if (w < 1.0) return 0.0;
  if (w < q.alpha + 1.0) return w - 1.0;
  if (q.kappa * w < q.alpha) return q.alpha;
  if (q.kappa * w < q.beta) return q.kappa * w;
  return q.beta;
}

PowerAllocation refined_truncated_waterfill(ArrayRef gains, double power,
                                            const RefinedParams& params) {
  check_gains(gains);
  check_power(power);
  params.validate();

  const Eigen::Index n = gains.size();
  const double total = power * static_cast<double>(n);
  PowerAllocation out;
  out.powers = Array::Zero(n);
  out.scheme = Scheme::kRefined;
  out.budget_p = power;

  double cap_sum = 0.0, eta_all_capped = 0.0;
  bool any_active = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (gains[i] <= 0.0) continue;
    any_active = true;
    cap_sum += params.beta / gains[i];
    eta_all_capped =
        std::max(eta_all_capped, params.beta / (params.kappa * gains[i]));
  }
  if (!any_active) return out;

  if (cap_sum <= total) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (gains[i] > 0.0) out.powers[i] = params.beta / gains[i];
    out.level = eta_all_capped;
    return out;
  }

  const auto spent = [&](double eta) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (gains[i] > 0.0) s += refined_sector_rho(eta * gains[i], params) / gains[i];
    return s;
  };

  double lo = 0.0, hi = eta_all_capped;
  while (hi - lo > kBisectRelTol * hi) {
    const double mid = 0.5 * (lo + hi);
    (spent(mid) < total ? lo : hi) = mid;
  }
  double eta = 0.5 * (lo + hi);

  // Exact snap on the linear sectors: sum(p) = eta * (n_lin + kappa n_kap)
  // + constants; iterate the classification to a fixed point.
  for (int pass = 0; pass < 8; ++pass) {
    double inv_sum = 0.0, const_sum = 0.0;
    double slope = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double g = gains[i];
      if (g <= 0.0) continue;
      const double w = eta * g;
      if (w < 1.0) continue;
      if (w < params.alpha + 1.0) {
        slope += 1.0;
        inv_sum += 1.0 / g;
      } else if (params.kappa * w < params.alpha) {
        const_sum += params.alpha / g;
      } else if (params.kappa * w < params.beta) {
        slope += params.kappa;
      } else {
        const_sum += params.beta / g;
      }
    }
    if (slope == 0.0) break;
    const double snapped = (total - const_sum + inv_sum) / slope;
    if (snapped == eta) break;
    eta = snapped;
  }

  for (Eigen::Index i = 0; i < n; ++i)
    if (gains[i] > 0.0)
      out.powers[i] = refined_sector_rho(eta * gains[i], params) / gains[i];
  out.level = eta;

  if (std::abs(out.powers.sum() - total) > kBudgetCertTol * total)
    throw NumericRangeError(
        "refined truncated waterfilling failed its budget certificate");
  return out;
}

// ---------------------------------------------------------------------------
// Exact mercury/waterfilling
// ---------------------------------------------------------------------------

PowerAllocation optimal_short(ArrayRef gains, double power,
                              const MetricTable& table) {
  check_gains(gains);
  check_power(power);

  const Eigen::Index n = gains.size();
  const double total = power * static_cast<double>(n);
  PowerAllocation out;
  out.powers = Array::Zero(n);
  out.scheme = Scheme::kOptimal;
  out.budget_p = power;

  double gamma_max = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) gamma_max = std::max(gamma_max, gains[i]);
  if (gamma_max <= 0.0) return out;

  // Transient bisection probes can ask for inversions below the table's
  // resolvable MMSE floor; substituting the table top overestimates the
  // spend, which steers the bracket back toward representable levels.  If
  // the *solution* itself needs such a block, the final evaluation still
  // reports the range error honestly.
  const auto inv_or_top = [&](double target) {
    try {
      return table.mmse_inv(target);
    } catch (const NumericRangeError&) {
      return table.spec().rho_max;
    }
  };
  const auto spent = [&](double nu) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double g = gains[i];
      if (g <= 0.0) continue;
      const double target = nu / g;
      if (target >= 1.0) continue;  // silent block
      s += inv_or_top(target) / g;
    }
    return s;
  };

  // spent() is nonincreasing in nu; spent(gamma_max) = 0.  Halve downward
  // until the budget is bracketed.  The water level scales like the MMSE
  // values themselves (~exp(-rho/4) for QPSK), so a tight draw at a large
  // budget legitimately needs nu many hundreds of octaves below gamma_max;
  // halve all the way to underflow before giving up.
  double hi = gamma_max;
  double lo = gamma_max;
  bool bracketed = false;
  for (int j = 0; j < 1200; ++j) {
    lo *= 0.5;
    if (lo <= 0.0) break;
    if (spent(lo) >= total) {
      bracketed = true;
      break;
    }
    hi = lo;
  }
  if (!bracketed)
    throw NumericRangeError(
        "short-term budget drives blocks past the top of the table's SNR "
        "grid; rebuild the table with a larger rho_max");

  // Bisect until lo and hi are adjacent doubles.  A block whose gain sits at
  // its activation edge makes spent() as steep as rho_min / ((1 - mmse(0+))
  // gamma^2), so a fixed relative tolerance on nu cannot guarantee the budget
  // certificate; float-exact convergence plus the residual hand-off below can.
  while (true) {
    const double mid = 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) break;
    (spent(mid) >= total ? lo : hi) = mid;
  }
  const double nu = lo;  // spent(lo) >= total > spent(hi)

  const auto eval_powers = [&](double level, Array& dst) {
    try {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double g = gains[i];
        dst[i] = 0.0;
        if (g <= 0.0) continue;
        const double target = level / g;
        if (target >= 1.0) continue;
        dst[i] = table.mmse_inv(target) / g;
      }
    } catch (const NumericRangeError&) {
      throw NumericRangeError(
          "short-term budget drives blocks past the top of the table's SNR "
          "grid; rebuild the table with a larger rho_max");
    }
  };
  eval_powers(nu, out.powers);
  out.level = nu;

  // Between adjacent representable water levels the budget can still move by
  // more than the certificate tolerance (the near-activation block's power is
  // linear in nu with the slope above).  Hand the sub-ULP residual to the
  // block that moved most across the final bracket: its own KKT level shifts
  // by O(gamma^2 * residual), orders below the KKT certificate.
  const double resid = total - out.powers.sum();
  if (resid != 0.0) {
    Array at_hi(n);
    eval_powers(hi, at_hi);
    Eigen::Index j = -1;
    double jump = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = out.powers[i] - at_hi[i];
      if (d > jump) {
        jump = d;
        j = i;
      }
    }
    if (j >= 0 && out.powers[j] + resid >= 0.0) out.powers[j] += resid;
  }

  if (std::abs(out.powers.sum() - total) > kBudgetCertTol * total)
    throw NumericRangeError(
        "mercury/waterfilling failed its budget certificate; the budget "
        "likely exceeds the table's representable SNR range");
  return out;
}

}  // namespace bfpa
