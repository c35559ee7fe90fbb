#include "spg/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "spg/errors.hpp"
#include "spg/metrics.hpp"
#include "spg/rng.hpp"

namespace spg {

std::string_view to_string(PruneStrategy s) {
  switch (s) {
    case PruneStrategy::nothing: return "nothing";
    case PruneStrategy::lowest: return "lowest";
    case PruneStrategy::random: return "random";
    case PruneStrategy::highest: return "highest";
  }
  return "?";
}

PruneStrategy parse_prune_strategy(std::string_view s) {
  for (auto v : {PruneStrategy::nothing, PruneStrategy::lowest, PruneStrategy::random, PruneStrategy::highest})
    if (to_string(v) == s) return v;
  throw InvalidArgument("unknown pruning strategy '" + std::string(s) + "'");
}

PruneResult pruning_experiment(const TILModel& model, const TaskDataset& task, const LayerVectors& importance,
                               PruneStrategy strategy, double percent, std::uint64_t seed) {
  PruneResult out;
  out.chance = 1.0 / task.num_classes;
  if (strategy == PruneStrategy::nothing) {
    out.accuracy = accuracy(model, task.task_id, task.test);
    return out;
  }
  if (!(percent > 0.0 && percent <= 100.0)) throw InvalidArgument("pruning percent must lie in (0, 100]");
  if (importance.size() != model.extractor.layers.size())
    throw DimensionError(-1, "importance does not cover the extractor layers");

  struct Slot {
    std::size_t layer;
    Index index;
    double value;
  };
  std::vector<Slot> slots;
  for (std::size_t l = 0; l < importance.size(); ++l) {
    if (importance[l].size() != model.extractor.layers[l].size())
      throw DimensionError(static_cast<int>(l), "importance shape does not match the layer");
    for (Index j = 0; j < importance[l].size(); ++j) slots.push_back({l, j, importance[l](j)});
  }
  const auto k = static_cast<std::size_t>(std::llround(percent / 100.0 * static_cast<double>(slots.size())));

  if (strategy == PruneStrategy::random) {
    Rng rng(derive_seed(seed, "prune-random"));
    rng.shuffle(std::span<Slot>(slots));
  } else {
    std::stable_sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) { return a.value < b.value; });
    if (strategy == PruneStrategy::highest) std::reverse(slots.begin(), slots.end());
  }

  TILModel pruned = model;
  std::vector<Vector> flat;
  for (const auto& l : pruned.extractor.layers) flat.push_back(flatten(l));
  for (std::size_t i = 0; i < k; ++i) flat[slots[i].layer](slots[i].index) = 0.0;
  for (std::size_t l = 0; l < flat.size(); ++l) assign_flat(pruned.extractor.layers[l], flat[l]);

  out.pruned = static_cast<Index>(k);
  out.accuracy = accuracy(pruned, task.task_id, task.test);
  return out;
}

double representation_probe(const Network& extractor, const TaskDataset& probe, const TrainConfig& config) {
  if (probe.train.dim() != extractor.in_dim())
    throw DimensionError(0, "probe data dim " + std::to_string(probe.train.dim()) + " != extractor input dim " +
                                std::to_string(extractor.in_dim()));
  TILModel model;
  model.extractor = extractor;
  Rng rng(head_seed(derive_seed(config.seed, "probe"), probe.task_id));
  add_head(model, probe.task_id, probe.num_classes, rng);
  train_head_only(model, probe, config);
  return accuracy(model, probe.task_id, probe.test);
}

}  // namespace spg
