#include "bfpa/outage.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "bfpa/constellation.hpp"
#include "bfpa/parallel.hpp"
#include "bfpa/rng.hpp"

namespace bfpa {
namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

constexpr const char* kCsvHeader =
    "scheme,constellation,B,m,R,P_dB,outage,ci_low,ci_high,n,seed";

void check_mc_args(double rate, std::int64_t n) {
  if (!(std::isfinite(rate) && rate > 0.0))
    throw ValidationError("rate must be positive");
  if (n < 1) throw ValidationError("draw count must be >= 1");
}

}  // namespace

void ShortScheme::validate() const {
  scheme_id(scheme);  // rejects unknown enumerators
  if (scheme == Scheme::kTruncated &&
      !(std::isfinite(beta) && beta > 0.0))
    throw ValidationError("truncated scheme needs a positive beta");
  if (scheme == Scheme::kRefined) refined.validate();
}

OutagePoint short_term_outage_point(const MetricTable& table,
                                    const ShortScheme& scheme,
                                    const FadingSpec& fading, double rate,
                                    double power, std::int64_t n,
                                    std::uint64_t seed, std::uint64_t stream) {
  scheme.validate();
  validate(fading);
  check_mc_args(rate, n);
  if (!(std::isfinite(power) && power > 0.0))
    throw ValidationError("per-block power budget must be positive");

  OutagePoint point;
  point.power_p = power;
  point.n = n;
  point.seed = seed;

  // A discrete input can never carry R >= M bits: the outage event is sure.
  if (!table.gaussian() && rate >= static_cast<double>(table.bits())) {
    point.outage = 1.0;
    const auto ci = wilson_interval(n, n);
    point.ci_low = ci.first;
    point.ci_high = ci.second;
    return point;
  }

  const int blocks = fading.blocks;
  const double target_bits = rate * static_cast<double>(blocks);
  const std::int64_t chunk = 1 << 14;
  const std::int64_t nchunks = (n + chunk - 1) / chunk;
  std::vector<std::int64_t> partial(static_cast<std::size_t>(nchunks), 0);

  for_each_chunk(
      n,
      [&](std::int64_t c, std::int64_t b, std::int64_t e) {
        Array gains(blocks);
        std::int64_t local = 0;
        for (std::int64_t t = b; t < e; ++t) {
          Substream rng = Substream::for_draw(seed, stream, t);
          sample_gains(fading, rng, gains);
          double bits = 0.0;
          switch (scheme.scheme) {
            case Scheme::kUniform:
              for (int i = 0; i < blocks; ++i)
                bits += table.mi(power * gains[i]);
              break;
            case Scheme::kWaterfill: {
              const PowerAllocation a = waterfill(gains, power);
              for (int i = 0; i < blocks; ++i)
                bits += table.mi(a.powers[i] * gains[i]);
              break;
            }
            case Scheme::kTruncated: {
              const PowerAllocation a =
                  truncated_waterfill(gains, power, scheme.beta);
              for (int i = 0; i < blocks; ++i)
                bits += table.mi(a.powers[i] * gains[i]);
              break;
            }
            case Scheme::kRefined: {
              const PowerAllocation a =
                  refined_truncated_waterfill(gains, power, scheme.refined);
              for (int i = 0; i < blocks; ++i)
                bits += table.mi(a.powers[i] * gains[i]);
              break;
            }
            case Scheme::kOptimal: {
              const PowerAllocation a = optimal_short(gains, power, table);
              for (int i = 0; i < blocks; ++i)
                bits += table.mi(a.powers[i] * gains[i]);
              break;
            }
          }
          if (bits < target_bits) ++local;
        }
        partial[static_cast<std::size_t>(c)] = local;
      },
      chunk);

  std::int64_t outage_count = 0;
  for (std::int64_t p : partial) outage_count += p;
  point.outage = static_cast<double>(outage_count) / static_cast<double>(n);
  const auto ci = wilson_interval(outage_count, n);
  point.ci_low = ci.first;
  point.ci_high = ci.second;
  return point;
}

OutageCurve short_term_sweep(const MetricTable& table,
                             const ShortScheme& scheme,
                             const FadingSpec& fading, double rate,
                             const std::vector<double>& power_grid,
                             std::int64_t n, std::uint64_t seed) {
  if (power_grid.empty())
    throw ValidationError("power grid must be non-empty");
  OutageCurve curve;
  curve.scheme = scheme_id(scheme.scheme);
  curve.constellation = input_label(table.input());
  curve.blocks = fading.blocks;
  curve.nakagami_m = fading.nakagami_m;
  curve.rate = rate;
  curve.points.reserve(power_grid.size());
  for (std::size_t i = 0; i < power_grid.size(); ++i)
    curve.points.push_back(short_term_outage_point(
        table, scheme, fading, rate, power_grid[i], n, seed,
        static_cast<std::uint64_t>(i)));
  return curve;
}

OutageCurve long_term_sweep(const MinPowerRule& rule, const FadingSpec& fading,
                            const std::vector<double>& power_grid,
                            std::int64_t calibration_n,
                            std::int64_t evaluation_n, std::uint64_t seed) {
  if (power_grid.empty())
    throw ValidationError("power grid must be non-empty");
  for (double p : power_grid)
    if (!(std::isfinite(p) && p > 0.0))
      throw ValidationError("power grid entries must be positive");

  const CalibrationSample calibration = draw_min_power_sample(
      rule, fading, calibration_n, seed, kCalibrationStream);
  const CalibrationSample evaluation = draw_min_power_sample(
      rule, fading, evaluation_n, seed, kEvaluationStream);

  OutageCurve curve;
  curve.scheme = "lt-" + min_power_kind_id(rule.kind);
  curve.constellation =
      rule.table != nullptr ? input_label(rule.table->input())
                            : rule.fit->input_name;
  curve.blocks = fading.blocks;
  curve.nakagami_m = fading.nakagami_m;
  curve.rate = rule.rate;
  curve.points.reserve(power_grid.size());
  for (double budget : power_grid) {
    const LongTermPolicy policy =
        policy_from_sample(calibration, rule, fading, budget);
    const LongTermOutageResult r = outage_from_sample(evaluation, policy);
    OutagePoint point;
    point.power_p = budget;
    point.outage = r.outage;
    point.ci_low = r.ci_low;
    point.ci_high = r.ci_high;
    point.n = r.n;
    point.seed = seed;
    curve.points.push_back(point);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// SNR exponent
// ---------------------------------------------------------------------------

SlopeFit fit_snr_exponent(const OutageCurve& curve, double outage_min,
                          double outage_max) {
  if (!(outage_min > 0.0 && outage_min < outage_max))
    throw ValidationError("need 0 < outage_min < outage_max");
  std::vector<double> x, y;
  for (const OutagePoint& p : curve.points) {
    if (p.outage < outage_min || p.outage > outage_max) continue;
    const double stderr_ =
        std::sqrt(p.outage * (1.0 - p.outage) / static_cast<double>(p.n));
    if (!(p.outage > 10.0 * stderr_)) continue;  // unreliable estimate
    x.push_back(std::log10(p.power_p));
    y.push_back(std::log10(p.outage));
  }
  if (x.size() < 4)
    throw ValidationError(
        "slope fit needs at least four reliable points inside the outage "
        "window");

  const double nd = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double denom = nd * sxx - sx * sx;
  if (denom <= 0.0)
    throw ValidationError("slope fit needs distinct budget values");
  const double slope = (nd * sxy - sx * sy) / denom;

  SlopeFit fit;
  fit.exponent = -slope;
  fit.intercept = (sy - slope * sx) / nd;
  fit.points_used = static_cast<int>(x.size());
  return fit;
}

// ---------------------------------------------------------------------------
// Curve I/O
// ---------------------------------------------------------------------------

std::string curve_to_csv(const OutageCurve& curve) {
  if (curve.points.empty())
    throw ValidationError("refusing to serialize an empty curve");
  std::ostringstream os;
  os << "# bfpa-curve-v1\n";
  os << "# version=" << kVersion << "\n";
  os << kCsvHeader << "\n";
  for (const OutagePoint& p : curve.points) {
    os << curve.scheme << ',' << curve.constellation << ',' << curve.blocks
       << ',' << fmt17(curve.nakagami_m) << ',' << fmt17(curve.rate) << ','
       << fmt17(10.0 * std::log10(p.power_p)) << ',' << fmt17(p.outage) << ','
       << fmt17(p.ci_low) << ',' << fmt17(p.ci_high) << ',' << p.n << ','
       << p.seed << '\n';
  }
  return os.str();
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

double parse_double(const std::string& s, const char* what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw ValidationError("");
    return v;
  } catch (const std::exception&) {
    throw ValidationError(std::string("curve CSV: bad ") + what + " value '" +
                          s + "'");
  }
}

}  // namespace

OutageCurve curve_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  OutageCurve curve;
  bool header_seen = false;
  bool meta_set = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != kCsvHeader)
        throw ValidationError("curve CSV: unexpected header row: " + line);
      header_seen = true;
      continue;
    }
    const std::vector<std::string> f = split_fields(line);
    if (f.size() != 11)
      throw ValidationError("curve CSV: expected 11 fields, got " +
                            std::to_string(f.size()));
    const int blocks = static_cast<int>(parse_double(f[2], "B"));
    const double m = parse_double(f[3], "m");
    const double rate = parse_double(f[4], "R");
    if (!meta_set) {
      curve.scheme = f[0];
      curve.constellation = f[1];
      curve.blocks = blocks;
      curve.nakagami_m = m;
      curve.rate = rate;
      meta_set = true;
    } else if (f[0] != curve.scheme || f[1] != curve.constellation ||
               blocks != curve.blocks || m != curve.nakagami_m ||
               rate != curve.rate) {
      throw ValidationError(
          "curve CSV: rows disagree on scheme/constellation/B/m/R");
    }
    OutagePoint p;
    p.power_p = std::pow(10.0, parse_double(f[5], "P_dB") / 10.0);
    p.outage = parse_double(f[6], "outage");
    p.ci_low = parse_double(f[7], "ci_low");
    p.ci_high = parse_double(f[8], "ci_high");
    try {
      p.n = std::stoll(f[9]);
      p.seed = std::stoull(f[10]);
    } catch (const std::exception&) {
      throw ValidationError("curve CSV: bad n or seed value");
    }
    curve.points.push_back(p);
  }
  if (!header_seen) throw ValidationError("curve CSV: missing header row");
  if (curve.points.empty()) throw ValidationError("curve CSV: no data rows");
  return curve;
}

std::string curve_to_json(const OutageCurve& curve) {
  nlohmann::json j;
  j["format"] = "bfpa-curve-v1";
  j["version"] = std::string(kVersion);
  j["scheme"] = curve.scheme;
  j["constellation"] = curve.constellation;
  j["blocks"] = curve.blocks;
  j["nakagami_m"] = curve.nakagami_m;
  j["rate"] = curve.rate;
  nlohmann::json points = nlohmann::json::array();
  for (const OutagePoint& p : curve.points) {
    points.push_back({{"power_p", p.power_p},
                      {"P_dB", 10.0 * std::log10(p.power_p)},
                      {"outage", p.outage},
                      {"ci_low", p.ci_low},
                      {"ci_high", p.ci_high},
                      {"n", p.n},
                      {"seed", hex64(p.seed)}});
  }
  j["points"] = std::move(points);
  return j.dump(2);
}

OutageCurve curve_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("curve JSON malformed: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "bfpa-curve-v1")
      throw ValidationError("unrecognized curve format tag");
    OutageCurve curve;
    curve.scheme = j.at("scheme").get<std::string>();
    curve.constellation = j.at("constellation").get<std::string>();
    curve.blocks = j.at("blocks").get<int>();
    curve.nakagami_m = j.at("nakagami_m").get<double>();
    curve.rate = j.at("rate").get<double>();
    for (const auto& pj : j.at("points")) {
      OutagePoint p;
      p.power_p = pj.at("power_p").get<double>();
      p.outage = pj.at("outage").get<double>();
      p.ci_low = pj.at("ci_low").get<double>();
      p.ci_high = pj.at("ci_high").get<double>();
      p.n = pj.at("n").get<std::int64_t>();
      try {
        p.seed = std::stoull(pj.at("seed").get<std::string>(), nullptr, 16);
      } catch (const std::logic_error&) {
        throw ValidationError("curve seed must be a hexadecimal string");
      }
      curve.points.push_back(p);
    }
    return curve;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("curve JSON invalid: ") + e.what());
  }
}

}  // namespace bfpa
