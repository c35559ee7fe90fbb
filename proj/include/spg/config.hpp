#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spg/data.hpp"
#include "spg/trainer.hpp"

namespace spg {

/// How to build a task stream. Generator fields are ignored for IDX streams
/// and vice versa.
struct StreamSpec {
  StreamKind kind = StreamKind::dissimilar;
  int n_tasks = 5;
  int classes_per_task = 2;  ///< for similar streams: the shared class count
  Index dim = 16;
  int samples_per_class = 400;
  double drift = 0.2;
  ClusterOptions cluster{};
  std::filesystem::path images;
  std::filesystem::path labels;
  std::optional<std::uint64_t> seed;  ///< defaults to the run seed

  TaskStream build(std::uint64_t run_seed) const;
};

struct RunConfig {
  StreamSpec stream;
  std::vector<Index> hidden{8, 8};
  std::vector<Method> methods;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir = "out";
  double blocked_eps = kDefaultBlockedEps;
  bool checkpoints = false;
  std::vector<double> prune_percents{10.0, 20.0};
  std::optional<StreamSpec> probe;

  /// Parses and validates; throws ConfigError naming the offending key.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  /// Hash identifying one (config, method, seed) run; output location and
  /// the seed list are excluded.
  std::uint64_t run_hash(const Method& method, std::uint64_t seed) const;
};

nlohmann::json stream_to_json(const StreamSpec& s);
StreamSpec stream_from_json(const nlohmann::json& j, const std::string& where);

}  // namespace spg
