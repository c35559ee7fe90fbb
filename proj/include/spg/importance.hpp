#pragma once

#include <map>
#include <vector>

#include "spg/data.hpp"
#include "spg/model.hpp"

namespace spg {

/// Per-parameter values for every extractor layer, flattened as in `flatten`.
using LayerVectors = std::vector<Vector>;

/// Accumulated importance after `tasks_seen` tasks. Entries lie in [0, 1) and
/// never decrease across tasks.
struct ImportanceState {
  LayerVectors per_layer;
  int tasks_seen = 0;
  double mean_importance = 0.0;

  static ImportanceState zeros_for(const Network& extractor);
  Index param_count() const;
  bool operator==(const ImportanceState& o) const;
};

/// Importance of one task: the combined vectors and the per-head components
/// they were reduced from (keyed by head task id).
struct TaskImportance {
  LayerVectors per_layer;
  std::map<int, LayerVectors> components;
};

struct ChiStats {
  double f_each = 0.0;
  double g_each = 0.0;
  double f_total = 0.0;
  double g_total = 0.0;
  bool each_empty = true;   ///< no parameter triggered; g_each reported as 0
  bool total_empty = true;  ///< same for g_total
};

/// (x - mean) / sqrt(population variance); the zero vector when the
/// variance is below 1e-24.
Vector layer_normalize(const Vector& g);

/// |tanh(layer_normalize(g))|.
Vector raw_importance(const Vector& g);

/// Extractor gradient of the importance loss for head `head_task` on the
/// data of `current_task`: cross-entropy when they coincide, logit sum
/// otherwise. Averaged over mini-batches of `batch_size`; no update happens.
GradientSet importance_gradient(const TILModel& model, int head_task, int current_task, const Split& data,
                                Index batch_size);

/// Per-layer raw importance through head `current_task` and, when
/// `cross_head` is set, every earlier head, reduced by elementwise max.
TaskImportance compute_task_importance(const TILModel& model, int current_task, const Split& data,
                                       Index batch_size, bool cross_head);

/// Elementwise max with the accumulator; bumps the task counter.
ImportanceState accumulate(ImportanceState state, const TaskImportance& task);

/// Diagonal empirical Fisher of the extractor: mean over samples of the
/// squared per-sample cross-entropy gradient.
LayerVectors fisher_diagonal(const TILModel& model, int task_id, const Split& data);

/// Fisher diagonal squashed per layer through |tanh(Norm(.))|.
TaskImportance fisher_importance(const TILModel& model, int task_id, const Split& data);

/// Overwrite statistics of the cross-head components. `previous` holds the
/// components for heads before the current task (must be non-empty).
ChiStats chi_overwrite_stats(const LayerVectors& current, const std::vector<LayerVectors>& previous,
                             const LayerVectors& accumulated_before);

double mean_of(const LayerVectors& v);
/// Same shapes and bitwise-equal entries.
bool same_values(const LayerVectors& a, const LayerVectors& b);

}  // namespace spg
