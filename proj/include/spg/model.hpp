#pragma once

#include <map>
#include <utility>
#include <vector>

#include "spg/nn.hpp"

namespace spg {

/// Shared feature extractor plus one dense classification head per task.
/// Heads are never removed once added.
struct TILModel {
  Network extractor;  ///< every layer ReLU
  std::map<int, LayerParams> heads;

  Index input_dim() const { return extractor.in_dim(); }
  Index feature_dim() const { return extractor.out_dim(); }
  const LayerParams& head(int task_id) const;
  LayerParams& head(int task_id);
  bool has_head(int task_id) const { return heads.contains(task_id); }
};

/// `hidden` must be non-empty; the last hidden width is the feature dim.
TILModel make_til_model(Index input_dim, std::span<const Index> hidden, Rng& rng);

void add_head(TILModel& model, int task_id, Index num_classes, Rng& rng);

Matrix forward_task(const TILModel& model, int task_id, const Matrix& inputs);
Matrix extract_features(const TILModel& model, const Matrix& inputs);

/// Gradients of a task loss: extractor layers plus the routed head.
struct TaskGradients {
  double loss = 0.0;
  GradientSet extractor;
  LayerParams head;
};

TaskGradients backward_task(const TILModel& model, int task_id, const Batch& batch, LossKind kind);

/// Extractor layers followed by the task head as one gradient set, the form
/// the SGD step and transforms consume.
GradientSet joined(TaskGradients g);

struct ParamCount {
  Index extractor = 0;
  std::vector<std::pair<int, Index>> heads;
};

ParamCount param_count(const TILModel& model);

}  // namespace spg
