#include "spg/importance.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spg/errors.hpp"

namespace spg {

namespace {

constexpr double kDegenerateVariance = 1e-24;

void check_congruent(const LayerVectors& a, const LayerVectors& b, const char* what) {
  if (a.size() != b.size()) throw DimensionError(-1, std::string(what) + ": layer count differs");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size())
      throw DimensionError(static_cast<int>(i), std::string(what) + ": " + std::to_string(a[i].size()) +
                                                    " vs " + std::to_string(b[i].size()) + " entries");
  }
}

LayerVectors flatten_all(const GradientSet& g) {
  LayerVectors out;
  out.reserve(g.size());
  for (const auto& l : g.layers) out.push_back(flatten(l));
  return out;
}

}  // namespace

ImportanceState ImportanceState::zeros_for(const Network& extractor) {
  ImportanceState s;
  for (const auto& l : extractor.layers) s.per_layer.push_back(Vector::Zero(l.size()));
  return s;
}

Index ImportanceState::param_count() const {
  Index n = 0;
  for (const auto& v : per_layer) n += v.size();
  return n;
}

bool same_values(const LayerVectors& a, const LayerVectors& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size() || !(a[i].array() == b[i].array()).all()) return false;
  }
  return true;
}

bool ImportanceState::operator==(const ImportanceState& o) const {
  return tasks_seen == o.tasks_seen && mean_importance == o.mean_importance && same_values(per_layer, o.per_layer);
}

double mean_of(const LayerVectors& v) {
  double sum = 0.0;
  Index n = 0;
  for (const auto& l : v) {
    sum += l.sum();
    n += l.size();
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

Vector layer_normalize(const Vector& g) {
  if (g.size() == 0) throw InvalidArgument("cannot normalize an empty vector");
  const double mean = g.mean();
  const Vector centered = g.array() - mean;
  const double var = centered.squaredNorm() / static_cast<double>(g.size());
  if (var < kDegenerateVariance) return Vector::Zero(g.size());
  return centered / std::sqrt(var);
}

Vector raw_importance(const Vector& g) { return layer_normalize(g).array().tanh().abs(); }

GradientSet importance_gradient(const TILModel& model, int head_task, int current_task, const Split& data,
                                Index batch_size) {
  if (head_task > current_task)
    throw InvalidArgument("importance head " + std::to_string(head_task) + " is after current task " +
                          std::to_string(current_task));
  if (!model.has_head(head_task)) throw InvalidArgument("no head for task " + std::to_string(head_task));
  if (batch_size <= 0) throw InvalidArgument("batch size must be positive");
  if (data.size() == 0) throw InvalidArgument("importance needs a non-empty training split");

  const LossKind kind = head_task == current_task ? LossKind::cross_entropy : LossKind::logit_sum;
  GradientSet total = GradientSet::zeros_like(model.extractor.layers);
  Index batches = 0;
  for (Index begin = 0; begin < data.size(); begin += batch_size) {
    Batch b = data.slice(begin, std::min(begin + batch_size, data.size()));
    if (kind == LossKind::logit_sum) b.labels.reset();
    total += backward_task(model, head_task, b, kind).extractor;
    ++batches;
  }
  total *= 1.0 / static_cast<double>(batches);
  return total;
}

TaskImportance compute_task_importance(const TILModel& model, int current_task, const Split& data,
                                       Index batch_size, bool cross_head) {
  TaskImportance out;
  auto component = [&](int head) {
    LayerVectors v;
    for (const auto& g : flatten_all(importance_gradient(model, head, current_task, data, batch_size)))
      v.push_back(raw_importance(g));
    return v;
  };
  out.per_layer = component(current_task);
  out.components.emplace(current_task, out.per_layer);
  if (!cross_head) return out;
  for (const auto& [head, _] : model.heads) {
    if (head >= current_task) continue;
    LayerVectors v = component(head);
    for (std::size_t i = 0; i < v.size(); ++i) out.per_layer[i] = out.per_layer[i].cwiseMax(v[i]);
    out.components.emplace(head, std::move(v));
  }
  return out;
}

ImportanceState accumulate(ImportanceState state, const TaskImportance& task) {
  check_congruent(state.per_layer, task.per_layer, "accumulate");
  for (std::size_t i = 0; i < state.per_layer.size(); ++i)
    state.per_layer[i] = state.per_layer[i].cwiseMax(task.per_layer[i]);
  ++state.tasks_seen;
  state.mean_importance = mean_of(state.per_layer);
  return state;
}

LayerVectors fisher_diagonal(const TILModel& model, int task_id, const Split& data) {
  if (!model.has_head(task_id)) throw InvalidArgument("no head for task " + std::to_string(task_id));
  if (data.size() == 0) throw InvalidArgument("Fisher information needs a non-empty split");
  LayerVectors fisher;
  for (const auto& l : model.extractor.layers) fisher.push_back(Vector::Zero(l.size()));
  for (Index r = 0; r < data.size(); ++r) {
    const auto g = backward_task(model, task_id, data.slice(r, r + 1), LossKind::cross_entropy);
    for (std::size_t i = 0; i < fisher.size(); ++i) fisher[i] += flatten(g.extractor.layers[i]).array().square().matrix();
  }
  for (auto& f : fisher) f /= static_cast<double>(data.size());
  return fisher;
}

TaskImportance fisher_importance(const TILModel& model, int task_id, const Split& data) {
  TaskImportance out;
  for (const auto& f : fisher_diagonal(model, task_id, data)) out.per_layer.push_back(raw_importance(f));
  out.components.emplace(task_id, out.per_layer);
  return out;
}

ChiStats chi_overwrite_stats(const LayerVectors& current, const std::vector<LayerVectors>& previous,
                             const LayerVectors& accumulated_before) {
  if (previous.empty()) throw InvalidArgument("overwrite statistics need at least two tasks");
  check_congruent(current, accumulated_before, "chi_overwrite_stats");
  for (const auto& p : previous) check_congruent(current, p, "chi_overwrite_stats");

  Index n = 0, each = 0, total = 0;
  double gap_each = 0.0, gap_total = 0.0;
  for (std::size_t l = 0; l < current.size(); ++l) {
    Vector cross = previous.front()[l];
    for (std::size_t k = 1; k < previous.size(); ++k) cross = cross.cwiseMax(previous[k][l]);
    for (Index j = 0; j < cross.size(); ++j) {
      ++n;
      if (cross(j) > current[l](j)) {
        ++each;
        gap_each += cross(j) - current[l](j);
      }
      if (cross(j) > accumulated_before[l](j)) {
        ++total;
        gap_total += cross(j) - accumulated_before[l](j);
      }
    }
  }
  ChiStats s;
  if (n == 0) return s;
  s.f_each = static_cast<double>(each) / static_cast<double>(n);
  s.f_total = static_cast<double>(total) / static_cast<double>(n);
  s.each_empty = each == 0;
  s.total_empty = total == 0;
  s.g_each = each ? gap_each / static_cast<double>(each) : 0.0;
  s.g_total = total ? gap_total / static_cast<double>(total) : 0.0;
  return s;
}

}  // namespace spg
