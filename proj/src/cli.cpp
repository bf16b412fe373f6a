#include "bfpa/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <variant>

#include <CLI11.hpp>
#include <json.hpp>

#include "bfpa/alloc_long.hpp"
#include "bfpa/alloc_short.hpp"
#include "bfpa/outage.hpp"

namespace bfpa {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

void check_known_fields(const json& j,
                        std::initializer_list<const char*> allowed,
                        const std::string& context) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        known = true;
        break;
      }
    if (!known)
      throw ValidationError("unknown field \"" + item.key() + "\" in " +
                            context);
  }
}

double get_finite(const json& j, const char* what) {
  if (!j.is_number())
    throw ValidationError(std::string(what) + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v))
    throw ValidationError(std::string(what) + " must be finite");
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ValidationError("cannot read file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << content;
  if (!out.good()) throw std::runtime_error("write failed: " + path);
}

bool is_long_scheme(const std::string& id) {
  return id.rfind("lt-", 0) == 0;
}

const char* const kShortSchemeIds[] = {"uniform", "wf", "tw", "ref", "opt"};
const char* const kLongSchemeIds[] = {"lt-opt", "lt-tw", "lt-ref",
                                      "lt-tw-approx", "lt-ref-approx"};

bool known_scheme_id(const std::string& id) {
  for (const char* s : kShortSchemeIds)
    if (id == s) return true;
  for (const char* s : kLongSchemeIds)
    if (id == s) return true;
  return false;
}

bool scheme_takes_beta(const std::string& id) {
  return id == "tw" || id == "ref" || id == "lt-tw" || id == "lt-ref" ||
         id == "lt-tw-approx" || id == "lt-ref-approx";
}

bool scheme_takes_rho0(const std::string& id) {
  return id == "ref" || id == "lt-ref" || id == "lt-ref-approx";
}

bool scheme_uses_fit(const std::string& id) {
  return id == "lt-tw-approx" || id == "lt-ref-approx";
}

// Per-kind truncation defaults: the short-term rules run best well into
// saturation; the long-term capped shapes favor much lower caps.
double default_beta(const std::string& id) {
  if (id == "tw" || id == "ref") return 15.0;
  if (id == "lt-tw" || id == "lt-tw-approx") return 3.0;
  return 5.5;  // lt-ref, lt-ref-approx
}

constexpr double kDefaultRho0 = 3.0;

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

std::vector<double> default_fit_grid() {
  std::vector<double> grid(40);
  const double lo = std::log(0.01), hi = std::log(100.0);
  for (std::size_t i = 0; i < grid.size(); ++i)
    grid[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) /
                                static_cast<double>(grid.size() - 1));
  return grid;
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

std::vector<double> parse_power_grid(const json& j) {
  std::vector<double> grid;
  if (j.is_array()) {
    for (const auto& v : j) grid.push_back(get_finite(v, "power_grid_db entry"));
  } else if (j.is_object()) {
    check_known_fields(j, {"start", "stop", "step"}, "power_grid_db");
    const double start = get_finite(j.at("start"), "power_grid_db.start");
    const double stop = get_finite(j.at("stop"), "power_grid_db.stop");
    const double step = get_finite(j.at("step"), "power_grid_db.step");
    if (!(step > 0.0))
      throw ValidationError("power_grid_db.step must be positive");
    if (stop < start)
      throw ValidationError("power_grid_db.stop must be >= start");
    for (double v = start; v <= stop + 1e-9 * step; v += step)
      grid.push_back(v);
  } else {
    throw ValidationError(
        "power_grid_db must be an array of dB values or {start, stop, step}");
  }
  if (grid.empty()) throw ValidationError("power_grid_db is empty");
  return grid;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config JSON malformed: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  check_known_fields(
      j,
      {"constellation", "fading", "rate", "schemes", "power_grid_db",
       "samples", "calibration_samples", "budget_db", "beta_grid",
       "reference_power_db", "seed", "output_dir", "table", "fit_grid"},
      "config");

  ExperimentConfig c;
  try {
    if (j.contains("constellation")) {
      if (!j["constellation"].is_string())
        throw ValidationError("constellation must be a string");
      c.constellation = j["constellation"].get<std::string>();
    }
    if (j.contains("fading")) {
      const json& f = j["fading"];
      if (!f.is_object()) throw ValidationError("fading must be an object");
      check_known_fields(f, {"nakagami_m", "blocks"}, "fading");
      if (f.contains("nakagami_m"))
        c.fading.nakagami_m = get_finite(f["nakagami_m"], "fading.nakagami_m");
      if (f.contains("blocks")) {
        if (!f["blocks"].is_number_integer())
          throw ValidationError("fading.blocks must be an integer");
        c.fading.blocks = f["blocks"].get<int>();
      }
      validate(c.fading);
    }
    if (j.contains("rate")) {
      c.rate = get_finite(j["rate"], "rate");
      if (c.rate <= 0.0) throw ValidationError("rate must be positive");
    }
    if (j.contains("schemes")) {
      if (!j["schemes"].is_array())
        throw ValidationError("schemes must be an array");
      for (const auto& s : j["schemes"]) {
        if (!s.is_object())
          throw ValidationError("schemes entries must be objects");
        check_known_fields(s, {"scheme", "beta", "rho0"}, "schemes entry");
        SchemeConfig sc;
        if (!s.contains("scheme") || !s["scheme"].is_string())
          throw ValidationError("schemes entry needs a \"scheme\" string");
        sc.id = s["scheme"].get<std::string>();
        if (!known_scheme_id(sc.id))
          throw ValidationError("unknown scheme id: " + sc.id);
        if (s.contains("beta")) {
          if (!scheme_takes_beta(sc.id))
            throw ValidationError("scheme '" + sc.id +
                                  "' does not take a beta parameter");
          sc.beta = get_finite(s["beta"], "scheme beta");
          if (*sc.beta <= 0.0)
            throw ValidationError("scheme beta must be positive");
        }
        if (s.contains("rho0")) {
          if (!scheme_takes_rho0(sc.id))
            throw ValidationError("scheme '" + sc.id +
                                  "' does not take a rho0 parameter");
          sc.rho0 = get_finite(s["rho0"], "scheme rho0");
          if (*sc.rho0 <= 0.0)
            throw ValidationError("scheme rho0 must be positive");
        }
        c.schemes.push_back(std::move(sc));
      }
    }
    if (j.contains("power_grid_db"))
      c.power_grid_db = parse_power_grid(j["power_grid_db"]);
    if (j.contains("samples")) {
      if (!j["samples"].is_number_integer() || j["samples"].get<std::int64_t>() < 1)
        throw ValidationError("samples must be a positive integer");
      c.samples = j["samples"].get<std::int64_t>();
    }
    if (j.contains("calibration_samples")) {
      if (!j["calibration_samples"].is_number_integer() ||
          j["calibration_samples"].get<std::int64_t>() < 1)
        throw ValidationError("calibration_samples must be a positive integer");
      c.calibration_samples = j["calibration_samples"].get<std::int64_t>();
    }
    if (j.contains("budget_db"))
      c.budget_db = get_finite(j["budget_db"], "budget_db");
    if (j.contains("beta_grid")) {
      if (!j["beta_grid"].is_array())
        throw ValidationError("beta_grid must be an array");
      for (const auto& v : j["beta_grid"]) {
        const double b = get_finite(v, "beta_grid entry");
        if (b <= 0.0)
          throw ValidationError("beta_grid entries must be positive");
        c.beta_grid.push_back(b);
      }
    }
    if (j.contains("reference_power_db"))
      c.reference_power_db =
          get_finite(j["reference_power_db"], "reference_power_db");
    if (j.contains("seed")) {
      const json& s = j["seed"];
      if (!(s.is_number_unsigned() ||
            (s.is_number_integer() && s.get<std::int64_t>() >= 0)))
        throw ValidationError("seed must be a non-negative integer");
      c.seed = s.get<std::uint64_t>();
    }
    if (j.contains("output_dir")) {
      if (!j["output_dir"].is_string() ||
          j["output_dir"].get<std::string>().empty())
        throw ValidationError("output_dir must be a non-empty string");
      c.output_dir = j["output_dir"].get<std::string>();
    }
    if (j.contains("table")) {
      const json& t = j["table"];
      if (!t.is_object()) throw ValidationError("table must be an object");
      check_known_fields(t, {"rho_min", "rho_max", "points", "quadrature_order"},
                         "table");
      if (t.contains("rho_min"))
        c.table.rho_min = get_finite(t["rho_min"], "table.rho_min");
      if (t.contains("rho_max"))
        c.table.rho_max = get_finite(t["rho_max"], "table.rho_max");
      if (t.contains("points")) {
        if (!t["points"].is_number_integer())
          throw ValidationError("table.points must be an integer");
        c.table.points = t["points"].get<int>();
      }
      if (t.contains("quadrature_order")) {
        if (!t["quadrature_order"].is_number_integer())
          throw ValidationError("table.quadrature_order must be an integer");
        c.table.quadrature_order = t["quadrature_order"].get<int>();
      }
    }
    if (j.contains("fit_grid")) {
      if (!j["fit_grid"].is_array())
        throw ValidationError("fit_grid must be an array");
      for (const auto& v : j["fit_grid"]) {
        const double r = get_finite(v, "fit_grid entry");
        if (r <= 0.0)
          throw ValidationError("fit_grid entries must be positive");
        c.fit_grid.push_back(r);
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config JSON invalid: ") + e.what());
  }

  c.canonical_json = j.dump();
  return c;
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  // The hash identifies the experiment, not where its files land: strip the
  // output directory so the same study written twice compares bit-equal.
  json j = json::parse(config.canonical_json);
  j.erase("output_dir");
  return fnv1a64(j.dump());
}

InputModel input_from_name(const std::string& name) {
  if (name == "gaussian") return GaussianInput{};
  const auto parse_size = [&](std::size_t suffix_len) -> int {
    const std::string digits = name.substr(0, name.size() - suffix_len);
    if (digits.empty() ||
        digits.find_first_not_of("0123456789") != std::string::npos)
      return -1;
    const long n = std::strtol(digits.c_str(), nullptr, 10);
    int bits = 0;
    long v = n;
    while (v > 1 && v % 2 == 0) {
      v /= 2;
      ++bits;
    }
    return v == 1 && bits >= 1 ? bits : -1;
  };
  if (name == "bpsk") return make_psk(1);
  if (name == "qpsk") return make_psk(2);
  if (name.size() > 3 && name.compare(name.size() - 3, 3, "psk") == 0) {
    const int bits = parse_size(3);
    if (bits > 0) return make_psk(bits);
  }
  if (name.size() > 3 && name.compare(name.size() - 3, 3, "qam") == 0) {
    const int bits = parse_size(3);
    if (bits > 0) return make_qam(bits);
  }
  throw ValidationError(
      "unknown constellation \"" + name +
      "\" (expected gaussian, bpsk, qpsk, <2^k>psk, or <4^k>qam)");
}

std::string resolve_cache_dir(const ExperimentConfig& config) {
  if (const char* env = std::getenv("BFPA_CACHE_DIR"))
    if (*env != '\0') return env;
  return (fs::path(config.output_dir) / "table-cache").string();
}

MetricTable load_or_build_table(const InputModel& input, const TableSpec& spec,
                                const std::string& cache_dir,
                                std::string* note) {
  std::error_code ec;
  fs::create_directories(cache_dir, ec);
  if (ec)
    throw std::runtime_error("cannot create cache directory " + cache_dir +
                             ": " + ec.message());
  const std::uint64_t id = table_identity_hash(input, spec);
  const std::string path =
      (fs::path(cache_dir) / ("table-" + hex64(id) + ".json")).string();

  bool had_entry = false;
  if (fs::exists(path)) {
    had_entry = true;
    try {
      MetricTable t = MetricTable::from_json(read_file(path));
      if (t.hash() != id)
        throw ValidationError("cache entry does not match its file name");
      if (note) *note = "hit";
      return t;
    } catch (const CacheVersionError&) {
      throw;  // incompatible format: never silently regenerate
    } catch (const ValidationError& e) {
      std::cerr << "warning: table cache entry " << path
                << " is corrupt (" << e.what() << "); rebuilding\n";
    }
  }

  MetricTable t = MetricTable::build(input, spec);
  write_file(path, t.to_json());
  if (note) *note = had_entry ? "rebuilt" : "built";
  return t;
}

namespace {

// ---------------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------------

std::string stamp_json(const std::string& doc, std::uint64_t cfg_hash) {
  json j = json::parse(doc);
  j["config_hash"] = hex64(cfg_hash);
  return j.dump(2) + "\n";
}

void write_curve_files(const fs::path& dir, const OutageCurve& curve,
                       std::uint64_t cfg_hash) {
  const std::string base = "sweep-" + curve.scheme;
  const std::string csv = "# config_hash=" + hex64(cfg_hash) + "\n" +
                          "# axis: P_dB = 10*log10(P), P = per-block average "
                          "power\n" +
                          curve_to_csv(curve);
  write_file((dir / (base + ".csv")).string(), csv);
  write_file((dir / (base + ".json")).string(),
             stamp_json(curve_to_json(curve), cfg_hash));
  std::cout << "sweep " << curve.scheme << ": wrote "
            << (dir / (base + ".csv")).string() << " ("
            << curve.points.size() << " points)\n";
}

// Resolved per-scheme plan entry, validated before any Monte Carlo work.
struct SchemePlan {
  SchemeConfig config;
  ShortScheme short_scheme;      // short ids
  MinPowerRule rule;             // long ids
};

// Builds every scheme object up front so parameter inconsistencies (refined
// beta <= alpha, infeasible caps, ...) surface before computation starts.
std::vector<SchemePlan> plan_schemes(const ExperimentConfig& c,
                                     const MetricTable& table,
                                     const std::optional<MiFit>& fit) {
  std::vector<SchemePlan> plans;
  for (const SchemeConfig& sc : c.schemes) {
    SchemePlan plan;
    plan.config = sc;
    const double beta = sc.beta.value_or(default_beta(sc.id));
    const double rho0 = sc.rho0.value_or(kDefaultRho0);
    if (!is_long_scheme(sc.id)) {
      plan.short_scheme.scheme = scheme_from_id(sc.id);
      plan.short_scheme.beta = beta;
      if (plan.short_scheme.scheme == Scheme::kRefined)
        plan.short_scheme.refined = tangent_params(table, rho0, beta);
      plan.short_scheme.validate();
    } else {
      const std::string kind_id = sc.id.substr(3);
      const MinPowerKind kind = min_power_kind_from_id(kind_id);
      switch (kind) {
        case MinPowerKind::kOptimal:
          plan.rule = make_min_power_rule_opt(table, c.rate);
          break;
        case MinPowerKind::kTruncated:
          plan.rule = make_min_power_rule_tw(table, c.rate, beta);
          break;
        case MinPowerKind::kRefined:
          plan.rule = make_min_power_rule_ref(table, c.rate,
                                              tangent_params(table, rho0, beta));
          break;
        case MinPowerKind::kTruncatedApprox:
          plan.rule = make_min_power_rule_tw_approx(*fit, c.rate, beta);
          break;
        case MinPowerKind::kRefinedApprox:
          plan.rule = make_min_power_rule_ref_approx(
              *fit, c.rate, tangent_params(table, rho0, beta));
          break;
      }
    }
    plans.push_back(std::move(plan));
  }
  return plans;
}

void require_rate_feasible(const ExperimentConfig& c, const InputModel& input) {
  if (c.rate <= 0.0)
    throw ValidationError("this command needs a positive \"rate\"");
  const int bits = input_bits(input);
  if (bits > 0 && c.rate >= static_cast<double>(bits))
    throw ValidationError(
        "infeasible configuration: rate " + std::to_string(c.rate) +
        " >= modulation size " + std::to_string(bits) + " bits");
}

std::optional<MiFit> maybe_fit(const ExperimentConfig& c,
                               const InputModel& input) {
  for (const SchemeConfig& sc : c.schemes)
    if (scheme_uses_fit(sc.id)) {
      const std::vector<double>& g =
          c.fit_grid.empty() ? default_fit_grid() : c.fit_grid;
      const Eigen::Map<const Array> grid(g.data(),
                                         static_cast<Eigen::Index>(g.size()));
      return fit_mi_approx(input, grid, c.table.quadrature_order);
    }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_table(const ExperimentConfig& c) {
  const InputModel input = input_from_name(c.constellation);
  std::string note;
  const MetricTable table =
      load_or_build_table(input, c.table, resolve_cache_dir(c), &note);
  std::cout << "table " << input_label(input) << ": " << c.table.points
            << " knots on [" << c.table.rho_min << ", " << c.table.rho_max
            << "], quadrature order " << c.table.quadrature_order
            << ", max rate " << table.max_rate() << " bits, hash "
            << hex64(table.hash()) << ", cache " << note << "\n";
  return 0;
}

int cmd_sweep(const ExperimentConfig& c) {
  const InputModel input = input_from_name(c.constellation);
  require_rate_feasible(c, input);
  if (c.schemes.empty())
    throw ValidationError("sweep needs a non-empty scheme list");
  for (std::size_t i = 0; i < c.schemes.size(); ++i)
    for (std::size_t k = i + 1; k < c.schemes.size(); ++k)
      if (c.schemes[i].id == c.schemes[k].id)
        throw ValidationError("duplicate scheme id: " + c.schemes[i].id);
  if (c.power_grid_db.empty())
    throw ValidationError("sweep needs a power_grid_db");

  const MetricTable table =
      load_or_build_table(input, c.table, resolve_cache_dir(c), nullptr);
  const std::optional<MiFit> fit = maybe_fit(c, input);
  const std::vector<SchemePlan> plans = plan_schemes(c, table, fit);

  std::vector<double> grid;
  grid.reserve(c.power_grid_db.size());
  for (double db : c.power_grid_db) grid.push_back(db_to_linear(db));

  const fs::path dir(c.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw std::runtime_error("cannot create output directory: " + ec.message());
  const std::uint64_t h = config_hash(c);

  for (const SchemePlan& plan : plans) {
    OutageCurve curve;
    if (!is_long_scheme(plan.config.id)) {
      curve = short_term_sweep(table, plan.short_scheme, c.fading, c.rate,
                               grid, c.samples, c.seed);
    } else {
      curve = long_term_sweep(plan.rule, c.fading, grid,
                              c.calibration_samples, c.samples, c.seed);
    }
    write_curve_files(dir, curve, h);
  }
  return 0;
}

int cmd_calibrate(const ExperimentConfig& c) {
  const InputModel input = input_from_name(c.constellation);
  require_rate_feasible(c, input);
  if (c.schemes.size() != 1 || !is_long_scheme(c.schemes[0].id))
    throw ValidationError(
        "calibrate needs exactly one long-term scheme (lt-...)");
  if (!c.budget_db)
    throw ValidationError("calibrate needs a \"budget_db\"");

  const MetricTable table =
      load_or_build_table(input, c.table, resolve_cache_dir(c), nullptr);
  const std::optional<MiFit> fit = maybe_fit(c, input);
  const std::vector<SchemePlan> plans = plan_schemes(c, table, fit);
  const MinPowerRule& rule = plans[0].rule;

  const double budget = db_to_linear(*c.budget_db);
  const LongTermPolicy policy = calibrate_policy(
      rule, c.fading, budget, c.calibration_samples, c.seed);

  const fs::path dir(c.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw std::runtime_error("cannot create output directory: " + ec.message());
  const std::string path =
      (dir / ("policy-" + c.schemes[0].id + ".json")).string();
  write_file(path, stamp_json(to_json(policy), config_hash(c)));

  std::cout << "calibrate " << c.schemes[0].id << ": s_star = ";
  if (std::isinf(policy.s_star))
    std::cout << "inf (zero-outage regime)";
  else
    std::cout << policy.s_star;
  std::cout << ", w_star = " << policy.w_star << ", wrote " << path << "\n";
  return 0;
}

int cmd_beta_search(const ExperimentConfig& c) {
  const InputModel input = input_from_name(c.constellation);
  require_rate_feasible(c, input);
  if (!c.reference_power_db)
    throw ValidationError("beta-search needs a \"reference_power_db\"");

  const MetricTable table =
      load_or_build_table(input, c.table, resolve_cache_dir(c), nullptr);
  const std::uint64_t h = config_hash(c);
  const fs::path dir(c.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw std::runtime_error("cannot create output directory: " + ec.message());
  const std::string path = (dir / "beta-search.json").string();

  const std::optional<double> beta_r =
      diversity_beta_threshold(table, c.fading.blocks, c.rate);
  json report;
  report["format"] = "bfpa-beta-search-v1";
  report["version"] = std::string(kVersion);
  report["config_hash"] = hex64(h);
  report["seed"] = c.seed;
  report["rate"] = c.rate;
  report["blocks"] = c.fading.blocks;

  if (!beta_r) {
    report["beta_r"] = "unbounded";
    report["message"] =
        "the rate sits on a discontinuity of the Singleton bound, where the "
        "diversity-achieving truncation level is unbounded; use the refined "
        "scheme instead";
    write_file(path, report.dump(2) + "\n");
    std::cout << "beta-search: beta_R unbounded at R = " << c.rate
              << "; use the refined scheme. Report: " << path << "\n";
    return 0;
  }

  std::vector<double> grid = c.beta_grid;
  if (grid.empty()) {
    // Default: geometric ladder from beta_R to 8 beta_R.
    const int kPoints = 8;
    for (int i = 0; i < kPoints; ++i)
      grid.push_back(*beta_r * std::pow(8.0, static_cast<double>(i) /
                                                  (kPoints - 1)));
  } else {
    for (double b : grid)
      if (b < *beta_r * (1.0 - 1e-9))
        throw ValidationError(
            "beta_grid entries must be >= beta_R = " + std::to_string(*beta_r));
  }

  const double power = db_to_linear(*c.reference_power_db);
  ShortScheme scheme;
  scheme.scheme = Scheme::kTruncated;
  json entries = json::array();
  double best_beta = grid[0], best_outage = 2.0;
  for (double beta : grid) {
    scheme.beta = beta;
    // Stream 0 for every candidate: identical fading draws make the argmin
    // a paired comparison.
    const OutagePoint p = short_term_outage_point(
        table, scheme, c.fading, c.rate, power, c.samples, c.seed, 0);
    entries.push_back({{"beta", beta},
                       {"outage", p.outage},
                       {"ci_low", p.ci_low},
                       {"ci_high", p.ci_high}});
    if (p.outage < best_outage ||
        (p.outage == best_outage && beta < best_beta)) {
      best_outage = p.outage;
      best_beta = beta;
    }
  }
  report["beta_r"] = *beta_r;
  report["reference_power_db"] = *c.reference_power_db;
  report["n"] = c.samples;
  report["paired_draws"] = true;
  report["grid"] = std::move(entries);
  report["recommended_beta"] = best_beta;
  report["recommended_outage"] = best_outage;
  write_file(path, report.dump(2) + "\n");
  std::cout << "beta-search: beta_R = " << *beta_r << ", recommended beta = "
            << best_beta << " (outage " << best_outage << " at "
            << *c.reference_power_db << " dB), report: " << path << "\n";
  return 0;
}

int cmd_fit(const ExperimentConfig& c) {
  const InputModel input = input_from_name(c.constellation);
  const std::vector<double>& g =
      c.fit_grid.empty() ? default_fit_grid() : c.fit_grid;
  const Eigen::Map<const Array> grid(g.data(),
                                     static_cast<Eigen::Index>(g.size()));
  const MiFit fit = fit_mi_approx(input, grid, c.table.quadrature_order);

  const fs::path dir(c.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw std::runtime_error("cannot create output directory: " + ec.message());
  json j;
  j["format"] = "bfpa-fit-v1";
  j["version"] = std::string(kVersion);
  j["config_hash"] = hex64(config_hash(c));
  j["input"] = fit.input_name;
  j["bits"] = fit.bits;
  j["c1"] = fit.c1;
  j["c2"] = fit.c2;
  j["c3"] = fit.c3;
  j["delta_r"] = fit.delta_r;
  j["grid_min"] = g.front();
  j["grid_max"] = g.back();
  j["grid_points"] = g.size();
  const std::string path =
      (dir / ("fit-" + fit.input_name + ".json")).string();
  write_file(path, j.dump(2) + "\n");
  std::cout << "fit " << fit.input_name << ": c1 = " << fit.c1
            << ", c2 = " << fit.c2 << ", c3 = " << fit.c3
            << ", delta_r = " << fit.delta_r << ", wrote " << path << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{
      "Power allocation and outage toolkit for discrete-input block-fading "
      "channels"};
  app.require_subcommand(1);

  std::string config_path;
  std::string opt_constellation, opt_output_dir;
  double opt_rate = 0.0, opt_m = 0.0, opt_budget_db = 0.0,
         opt_reference_db = 0.0;
  int opt_blocks = 0;
  std::int64_t opt_samples = 0, opt_calibration = 0;
  std::uint64_t opt_seed = 0;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path,
                    "JSON config file (flags override its fields)");
    sub->add_option("--constellation", opt_constellation,
                    "input: gaussian, bpsk, qpsk, 8psk, 16qam, ...");
    sub->add_option("--rate", opt_rate, "target rate R in bits per block use");
    sub->add_option("--nakagami-m", opt_m, "Nakagami fading parameter m");
    sub->add_option("--blocks", opt_blocks, "fading blocks per codeword B");
    sub->add_option("--samples", opt_samples, "Monte Carlo draws per point");
    sub->add_option("--calibration-samples", opt_calibration,
                    "draws for long-term threshold calibration");
    sub->add_option("--seed", opt_seed, "base RNG seed");
    sub->add_option("--output-dir", opt_output_dir, "output directory");
    sub->add_option("--budget-db", opt_budget_db,
                    "long-term budget P in dB (calibrate)");
    sub->add_option("--reference-power-db", opt_reference_db,
                    "operating P in dB (beta-search)");
    return sub;
  };

  CLI::App* sub_table =
      add_common(app.add_subcommand("table", "build or reuse a metric table"));
  CLI::App* sub_sweep = add_common(
      app.add_subcommand("sweep", "outage curves for the configured schemes"));
  CLI::App* sub_calibrate = add_common(app.add_subcommand(
      "calibrate", "calibrate a long-term transmission policy"));
  CLI::App* sub_beta = add_common(app.add_subcommand(
      "beta-search", "recommend a truncation level above beta_R"));
  CLI::App* sub_fit = add_common(
      app.add_subcommand("fit", "fit the closed-form rate surrogate"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    json j = json::object();
    if (!config_path.empty()) j = json::parse(read_file(config_path));
    if (!j.is_object())
      throw ValidationError("config must be a JSON object");

    const auto sub = [&]() -> CLI::App* {
      for (CLI::App* s : {sub_table, sub_sweep, sub_calibrate, sub_beta,
                          sub_fit})
        if (s->parsed()) return s;
      throw ValidationError("no subcommand parsed");
    }();

    if (sub->count("--constellation")) j["constellation"] = opt_constellation;
    if (sub->count("--rate")) j["rate"] = opt_rate;
    if (sub->count("--nakagami-m")) j["fading"]["nakagami_m"] = opt_m;
    if (sub->count("--blocks")) j["fading"]["blocks"] = opt_blocks;
    if (sub->count("--samples")) j["samples"] = opt_samples;
    if (sub->count("--calibration-samples"))
      j["calibration_samples"] = opt_calibration;
    if (sub->count("--seed")) j["seed"] = opt_seed;
    if (sub->count("--output-dir")) j["output_dir"] = opt_output_dir;
    if (sub->count("--budget-db")) j["budget_db"] = opt_budget_db;
    if (sub->count("--reference-power-db"))
      j["reference_power_db"] = opt_reference_db;

    const ExperimentConfig config = parse_experiment_config(j.dump());

    if (sub == sub_table) return cmd_table(config);
    if (sub == sub_sweep) return cmd_sweep(config);
    if (sub == sub_calibrate) return cmd_calibrate(config);
    if (sub == sub_beta) return cmd_beta_search(config);
    return cmd_fit(config);
  } catch (const nlohmann::json::parse_error& e) {
    std::cerr << "error: config JSON malformed: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericRangeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace bfpa
