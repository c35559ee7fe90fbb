#include "spg/model.hpp"

#include <string>

#include "spg/errors.hpp"

namespace spg {

const LayerParams& TILModel::head(int task_id) const {
  auto it = heads.find(task_id);
  if (it == heads.end()) throw InvalidArgument("no head for task " + std::to_string(task_id));
  return it->second;
}

LayerParams& TILModel::head(int task_id) {
  auto it = heads.find(task_id);
  if (it == heads.end()) throw InvalidArgument("no head for task " + std::to_string(task_id));
  return it->second;
}

TILModel make_til_model(Index input_dim, std::span<const Index> hidden, Rng& rng) {
  if (hidden.empty()) throw InvalidArgument("feature extractor needs at least one hidden layer");
  std::vector<Index> dims{input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  TILModel m;
  m.extractor = make_mlp(dims, Activation::relu, rng);
  return m;
}

void add_head(TILModel& model, int task_id, Index num_classes, Rng& rng) {
  if (model.has_head(task_id)) throw InvalidArgument("head for task " + std::to_string(task_id) + " already exists");
  if (num_classes <= 0) throw InvalidArgument("a head needs at least one class");
  model.heads.emplace(task_id, init_dense(num_classes, model.feature_dim(), rng));
}

namespace {

std::vector<LayerView> task_chain(const TILModel& model, int task_id) {
  const LayerParams& head = model.head(task_id);
  std::vector<LayerView> chain;
  for (std::size_t i = 0; i < model.extractor.layers.size(); ++i)
    chain.push_back({&model.extractor.layers[i], model.extractor.activations[i]});
  chain.push_back({&head, Activation::identity});
  return chain;
}

}  // namespace

Matrix forward_task(const TILModel& model, int task_id, const Matrix& inputs) {
  const auto chain = task_chain(model, task_id);
  return std::move(forward_chain(chain, inputs).outputs.back());
}

Matrix extract_features(const TILModel& model, const Matrix& inputs) { return forward(model.extractor, inputs); }

TaskGradients backward_task(const TILModel& model, int task_id, const Batch& batch, LossKind kind) {
  const auto chain = task_chain(model, task_id);
  const ChainTrace trace = forward_chain(chain, batch.inputs);
  const Matrix& logits = trace.outputs.back();
  TaskGradients out;
  out.loss = loss_value(logits, batch.labels, kind);
  GradientSet all = backward_chain(chain, trace, loss_gradient(logits, batch.labels, kind));
  out.head = std::move(all.layers.back());
  all.layers.pop_back();
  out.extractor = std::move(all);
  return out;
}

GradientSet joined(TaskGradients g) {
  GradientSet all = std::move(g.extractor);
  all.layers.push_back(std::move(g.head));
  return all;
}

ParamCount param_count(const TILModel& model) {
  ParamCount c;
  c.extractor = model.extractor.param_count();
  for (const auto& [id, h] : model.heads) c.heads.emplace_back(id, h.size());
  return c;
}

}  // namespace spg
