#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bfpa/cli.hpp"
#include "bfpa/outage.hpp"

using namespace bfpa;
namespace fs = std::filesystem;

namespace {

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("bfpa");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("bfpa-test-" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

}  // namespace

TEST_CASE("config parsing: defaults and field validation") {
  const ExperimentConfig c = parse_experiment_config("{}");
  CHECK(c.constellation == "qpsk");
  CHECK(c.fading.nakagami_m == 1.0);
  CHECK(c.fading.blocks == 1);
  CHECK(c.samples == 100000);
  CHECK(c.seed == 1);
  CHECK(c.output_dir == ".");
  CHECK(c.table.points == 512);

  CHECK_THROWS_AS(parse_experiment_config("[1]"), ValidationError);
  CHECK_THROWS_AS(parse_experiment_config("{\"ratee\": 1}"), ValidationError);
  CHECK_THROWS_AS(parse_experiment_config("{\"fading\": {\"m\": 1}}"),
                  ValidationError);
  CHECK_THROWS_AS(parse_experiment_config("{\"table\": {\"rho\": 1}}"),
                  ValidationError);
  CHECK_THROWS_AS(parse_experiment_config("{\"rate\": -0.5}"), ValidationError);
  CHECK_THROWS_AS(parse_experiment_config("{\"seed\": -3}"), ValidationError);
  CHECK_THROWS_AS(parse_experiment_config("{\"seed\": 1.5}"), ValidationError);
  CHECK_THROWS_AS(parse_experiment_config("{\"samples\": 0}"), ValidationError);
  CHECK_THROWS_AS(parse_experiment_config("not json"), ValidationError);
}

TEST_CASE("config parsing: schemes and their parameters") {
  const ExperimentConfig c = parse_experiment_config(R"({
    "schemes": [
      {"scheme": "uniform"},
      {"scheme": "tw", "beta": 7.5},
      {"scheme": "ref", "beta": 12.0, "rho0": 2.5},
      {"scheme": "lt-ref-approx"}
    ]
  })");
  REQUIRE(c.schemes.size() == 4);
  CHECK(c.schemes[0].id == "uniform");
  CHECK(!c.schemes[0].beta.has_value());
  CHECK(c.schemes[1].beta == 7.5);
  CHECK(c.schemes[2].rho0 == 2.5);

  // Parameters a scheme cannot use are rejected, not ignored.
  CHECK_THROWS_AS(parse_experiment_config(
                      R"({"schemes": [{"scheme": "uniform", "beta": 3}]})"),
                  ValidationError);
  CHECK_THROWS_AS(parse_experiment_config(
                      R"({"schemes": [{"scheme": "tw", "rho0": 3}]})"),
                  ValidationError);
  CHECK_THROWS_AS(parse_experiment_config(
                      R"({"schemes": [{"scheme": "mercury"}]})"),
                  ValidationError);
  CHECK_THROWS_AS(parse_experiment_config(
                      R"({"schemes": [{"scheme": "tw", "beta": -1}]})"),
                  ValidationError);
}

TEST_CASE("config parsing: power grid forms") {
  const ExperimentConfig a =
      parse_experiment_config(R"({"power_grid_db": [0, 2.5, 5]})");
  REQUIRE(a.power_grid_db.size() == 3);
  CHECK(a.power_grid_db[1] == 2.5);
  const ExperimentConfig b = parse_experiment_config(
      R"({"power_grid_db": {"start": 0, "stop": 10, "step": 2}})");
  REQUIRE(b.power_grid_db.size() == 6);
  CHECK(b.power_grid_db.back() == 10.0);
  CHECK_THROWS_AS(parse_experiment_config(
                      R"({"power_grid_db": {"start": 0, "stop": 10, "step": 0}})"),
                  ValidationError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"power_grid_db": []})"),
                  ValidationError);
  CHECK_THROWS_AS(parse_experiment_config(
                      R"({"power_grid_db": {"start": 5, "stop": 0, "step": 1}})"),
                  ValidationError);
}

TEST_CASE("config hash tracks the canonical document") {
  const ExperimentConfig a = parse_experiment_config(R"({"rate": 1.0})");
  const ExperimentConfig b = parse_experiment_config(R"({"rate": 1.0})");
  const ExperimentConfig c = parse_experiment_config(R"({"rate": 1.5})");
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a) != config_hash(c));
}

TEST_CASE("constellation names") {
  CHECK(input_bits(input_from_name("gaussian")) == 0);
  CHECK(input_label(input_from_name("bpsk")) == "bpsk");
  CHECK(input_label(input_from_name("qpsk")) == "qpsk");
  CHECK(input_label(input_from_name("8psk")) == "8psk");
  CHECK(input_label(input_from_name("16qam")) == "16qam");
  CHECK(input_label(input_from_name("64qam")) == "64qam");
  CHECK_THROWS_AS(input_from_name("3psk"), ValidationError);
  CHECK_THROWS_AS(input_from_name("0psk"), ValidationError);
  CHECK_THROWS_AS(input_from_name("8qam"), ValidationError);  // odd bit count
  CHECK_THROWS_AS(input_from_name("qam"), ValidationError);
  CHECK_THROWS_AS(input_from_name("QPSK"), ValidationError);
  CHECK_THROWS_AS(input_from_name(""), ValidationError);
}

TEST_CASE("cache directory resolution honours the environment override") {
  ExperimentConfig c = parse_experiment_config(R"({"output_dir": "/tmp/x"})");
  unsetenv("BFPA_CACHE_DIR");
  CHECK(resolve_cache_dir(c) == "/tmp/x/table-cache");
  setenv("BFPA_CACHE_DIR", "/tmp/elsewhere", 1);
  CHECK(resolve_cache_dir(c) == "/tmp/elsewhere");
  unsetenv("BFPA_CACHE_DIR");
}

TEST_CASE("table cache: hit, corrupt-rebuild, and version refusal") {
  const fs::path dir = fresh_dir("cache");
  const InputModel input = input_from_name("qpsk");
  TableSpec spec;
  spec.points = 64;
  spec.rho_min = 1e-3;
  spec.rho_max = 1e4;
  spec.quadrature_order = 16;
  const fs::path entry =
      dir / ("table-" + hex64(table_identity_hash(input, spec)) + ".json");

  std::string note;
  const MetricTable t1 = load_or_build_table(input, spec, dir.string(), &note);
  CHECK(note == "built");
  CHECK(fs::exists(entry));
  const MetricTable t2 = load_or_build_table(input, spec, dir.string(), &note);
  CHECK(note == "hit");
  CHECK(t2.hash() == t1.hash());

  // Corruption is repaired with a warning.
  spit(entry, "{\"format\": \"bfpa-table-v2\", \"broken\": true}");
  const MetricTable t3 = load_or_build_table(input, spec, dir.string(), &note);
  CHECK(note == "rebuilt");
  CHECK(t3.hash() == t1.hash());
  CHECK(load_or_build_table(input, spec, dir.string(), &note).hash() ==
        t1.hash());
  CHECK(note == "hit");

  // A cache written by a different format version is a hard error.
  std::string doc = slurp(entry);
  const auto pos = doc.find("bfpa-table-v2");
  REQUIRE(pos != std::string::npos);
  doc.replace(pos, 13, "bfpa-table-v9");
  spit(entry, doc);
  CHECK_THROWS_AS(load_or_build_table(input, spec, dir.string(), nullptr),
                  CacheVersionError);
  fs::remove_all(dir);
}

TEST_CASE("cli: help and argument errors") {
  CHECK(run({"--help"}) == 0);
  CHECK(run({"table", "--no-such-flag"}) == 2);
  CHECK(run({}) == 2);  // missing subcommand
}

TEST_CASE("cli: sweep end to end, deterministic reruns, overrides") {
  const fs::path dir = fresh_dir("sweep");
  const fs::path cfg = dir / "config.json";
  spit(cfg, R"({
    "constellation": "qpsk",
    "fading": {"nakagami_m": 1.0, "blocks": 2},
    "rate": 0.8,
    "schemes": [{"scheme": "uniform"}, {"scheme": "wf"}],
    "power_grid_db": [0, 6],
    "samples": 2000,
    "seed": 3
  })");

  const fs::path out1 = dir / "run1";
  const fs::path out2 = dir / "run2";
  REQUIRE(run({"sweep", "-c", cfg.string(), "--output-dir", out1.string()}) ==
          0);
  REQUIRE(run({"sweep", "-c", cfg.string(), "--output-dir", out2.string()}) ==
          0);
  for (const char* f : {"sweep-uniform.csv", "sweep-wf.csv",
                        "sweep-uniform.json", "sweep-wf.json"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(out1 / f));
    CHECK(slurp(out1 / f) == slurp(out2 / f));
  }
  const OutageCurve c = curve_from_csv(slurp(out1 / "sweep-uniform.csv"));
  CHECK(c.rate == 0.8);
  CHECK(c.blocks == 2);
  REQUIRE(c.points.size() == 2);
  CHECK(c.points[0].power_p == 1.0);  // 0 dB

  // A flag override must change both the result and the embedded hash.
  const fs::path out3 = dir / "run3";
  REQUIRE(run({"sweep", "-c", cfg.string(), "--output-dir", out3.string(),
               "--rate", "1.2"}) == 0);
  const OutageCurve c3 = curve_from_csv(slurp(out3 / "sweep-uniform.csv"));
  CHECK(c3.rate == 1.2);
  const std::string run1_head =
      slurp(out1 / "sweep-uniform.csv").substr(0, 40);
  const std::string run3_head =
      slurp(out3 / "sweep-uniform.csv").substr(0, 40);
  CHECK(run1_head != run3_head);  // config_hash comment line differs

  // Infeasible rate is rejected up front.
  CHECK(run({"sweep", "-c", cfg.string(), "--output-dir", out3.string(),
             "--rate", "2.0"}) == 2);
  // Duplicate schemes are rejected.
  const fs::path dup = dir / "dup.json";
  spit(dup, R"({
    "rate": 0.8, "power_grid_db": [0], "samples": 100,
    "schemes": [{"scheme": "uniform"}, {"scheme": "uniform"}]
  })");
  CHECK(run({"sweep", "-c", dup.string(), "--output-dir", out3.string()}) == 2);
  fs::remove_all(dir);
}

TEST_CASE("cli: calibrate and beta-search produce their reports") {
  const fs::path dir = fresh_dir("cal");
  const fs::path cfg = dir / "config.json";
  spit(cfg, R"({
    "constellation": "qpsk",
    "fading": {"nakagami_m": 1.0, "blocks": 4},
    "rate": 0.9,
    "schemes": [{"scheme": "lt-opt"}],
    "samples": 2000,
    "calibration_samples": 2000,
    "seed": 5
  })");
  REQUIRE(run({"calibrate", "-c", cfg.string(), "--output-dir", dir.string(),
               "--budget-db", "-2"}) == 0);
  CHECK(fs::exists(dir / "policy-lt-opt.json"));
  const LongTermPolicy pol =
      policy_from_json(slurp(dir / "policy-lt-opt.json"));
  CHECK(pol.rule_id == "opt");
  CHECK(pol.budget_p == doctest::Approx(std::pow(10.0, -0.2)));

  // calibrate without a budget is an error.
  CHECK(run({"calibrate", "-c", cfg.string(), "--output-dir", dir.string()}) ==
        2);

  // beta-search at a Singleton discontinuity reports, not fails.
  REQUIRE(run({"beta-search", "-c", cfg.string(), "--output-dir", dir.string(),
               "--rate", "1.0", "--reference-power-db", "8"}) == 0);
  const std::string report = slurp(dir / "beta-search.json");
  CHECK(report.find("unbounded") != std::string::npos);
  CHECK(report.find("refined") != std::string::npos);

  // And away from it, recommends a level at least beta_R.
  REQUIRE(run({"beta-search", "-c", cfg.string(), "--output-dir", dir.string(),
               "--reference-power-db", "8", "--samples", "2000"}) == 0);
  const std::string report2 = slurp(dir / "beta-search.json");
  CHECK(report2.find("recommended_beta") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli: fit subcommand writes the surrogate coefficients") {
  const fs::path dir = fresh_dir("fit");
  REQUIRE(run({"fit", "--constellation", "qpsk", "--output-dir",
               dir.string()}) == 0);
  const std::string doc = slurp(dir / "fit-qpsk.json");
  CHECK(doc.find("\"c1\"") != std::string::npos);
  CHECK(doc.find("\"delta_r\"") != std::string::npos);
  fs::remove_all(dir);
}
