#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spg/config.hpp"

namespace spg {

struct CliOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<int> threads;
};

/// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

/// Writes runs/<method>_seed<k>.json, aggregate.csv and blocked.csv.
int cmd_run(const CliOptions& opts, std::ostream& log);
/// Writes prune.csv.
int cmd_prune(const CliOptions& opts, std::ostream& log);
/// Writes probe.csv.
int cmd_probe(const CliOptions& opts, std::ostream& log);

/// Loads the config and applies the command-line overrides.
RunConfig resolve_config(const CliOptions& opts);

/// --threads, then SPG_THREADS, then 1.
int resolve_threads(std::optional<int> flag);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// "SPG_HARD:0.6" -> "SPG_HARD-0.6", usable in file names.
std::string file_tag(const Method& m);

/// The JSON run record. `reference` holds the ONE accuracies for the same
/// seed; forward transfer is null without it.
nlohmann::json run_record(const RunConfig& cfg, const RunResult& result, std::uint64_t seed,
                          const std::vector<double>* reference);

/// Rows of aggregate.csv from run records: method, metric, mean, sample std, n.
std::string aggregate_csv(const std::vector<nlohmann::json>& records);

}  // namespace spg
