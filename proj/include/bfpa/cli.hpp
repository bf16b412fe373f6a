#pragma once

// Batch front-end: builds and caches metric tables, runs outage sweeps,
// calibrates long-term policies, searches truncation levels, and fits the
// closed-form rate surrogate.  All heavy lifting lives in the library
// modules; this layer owns config parsing, validation, caching, and file
// output.
//
// Config format: one JSON document (see parse_experiment_config for the
// schema).  CLI flags override individual config fields; the hash embedded
// in every output is computed after overrides, so a flag-tweaked run and
// the equivalent config file produce identical outputs.
//
// Exit codes: 0 success, 2 validation error (bad config, inconsistent
// parameters, incompatible cache version), 3 numeric-range error.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bfpa/awgn_metrics.hpp"
#include "bfpa/common.hpp"
#include "bfpa/constellation.hpp"
#include "bfpa/fading.hpp"

namespace bfpa {

// One scheme to evaluate.  `id` is a short-term scheme id ("uniform", "wf",
// "tw", "ref", "opt") or a long-term one ("lt-opt", "lt-tw", "lt-ref",
// "lt-tw-approx", "lt-ref-approx").  beta / rho0 fall back to per-kind
// defaults when unset.
struct SchemeConfig {
  std::string id;
  std::optional<double> beta;
  std::optional<double> rho0;
};

struct ExperimentConfig {
  std::string constellation = "qpsk";  // name, or "gaussian"
  FadingSpec fading;                   // {nakagami_m, blocks}
  double rate = 0.0;
  std::vector<SchemeConfig> schemes;
  std::vector<double> power_grid_db;   // per-block budget, dB
  std::int64_t samples = 100000;       // Monte Carlo draws per point
  std::int64_t calibration_samples = 100000;
  std::optional<double> budget_db;     // calibrate: the budget to hit
  std::vector<double> beta_grid;       // beta-search candidates (absolute)
  std::optional<double> reference_power_db;  // beta-search operating point
  std::uint64_t seed = 1;
  std::string output_dir = ".";
  TableSpec table;
  std::vector<double> fit_grid;        // fit: SNR grid (default log-spaced)

  std::string canonical_json;  // merged config, canonically serialized
};

// Parses and validates the config document; throws ValidationError on
// malformed JSON, unknown fields (at any nesting level), or out-of-range
// values.  Cross-field requirements (rate present, scheme list shape, ...)
// are checked by the subcommands, which know what they need.
ExperimentConfig parse_experiment_config(const std::string& json_text);

// FNV-1a of the canonically serialized merged config.
std::uint64_t config_hash(const ExperimentConfig& config);

// "gaussian" or a constellation name: "bpsk", "qpsk", "8psk", "16qam", ...
InputModel input_from_name(const std::string& name);

// Cache directory resolution: BFPA_CACHE_DIR if set, else
// <output_dir>/table-cache.
std::string resolve_cache_dir(const ExperimentConfig& config);

// Loads the cached table for (input, spec) or builds and caches it.
// A corrupt cache entry is rebuilt with a warning on stderr; an entry
// written by an incompatible format version is a hard error
// (CacheVersionError).  `note` (optional) receives "hit", "rebuilt", or
// "built" for logging and tests.
MetricTable load_or_build_table(const InputModel& input, const TableSpec& spec,
                                const std::string& cache_dir,
                                std::string* note = nullptr);

// Entry point behind main(); parses argv, dispatches subcommands
// (table | sweep | calibrate | beta-search | fit), maps exceptions to exit
// codes.
int run_cli(int argc, const char* const* argv);

}  // namespace bfpa
