#pragma once

#include <cstdint>
#include <string_view>

#include "spg/importance.hpp"
#include "spg/trainer.hpp"

namespace spg {

enum class PruneStrategy { nothing, lowest, random, highest };

std::string_view to_string(PruneStrategy s);
PruneStrategy parse_prune_strategy(std::string_view s);

struct PruneResult {
  double accuracy = 0.0;
  double chance = 0.0;  ///< 1 / num_classes
  Index pruned = 0;
};

/// Zeroes `percent`% of the extractor parameters of a copy of `model`,
/// chosen by global importance rank (or uniformly at random), and returns the
/// test accuracy of `task` on the copy.
PruneResult pruning_experiment(const TILModel& model, const TaskDataset& task, const LayerVectors& importance,
                               PruneStrategy strategy, double percent, std::uint64_t seed = 0);

/// Test accuracy of a fresh head trained on `probe` over a frozen copy of
/// `extractor`.
double representation_probe(const Network& extractor, const TaskDataset& probe, const TrainConfig& config);

}  // namespace spg
