#include "spg/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "spg/errors.hpp"
#include "spg/rng.hpp"

namespace spg {

namespace {

struct MethodName {
  MethodKind kind;
  std::string_view name;
};

constexpr MethodName kMethodNames[] = {
    {MethodKind::spg, "SPG"},           {MethodKind::spg_no_chi, "SPG_NO_CHI"}, {MethodKind::spg_no_smh, "SPG_NO_SMH"},
    {MethodKind::spg_hard, "SPG_HARD"}, {MethodKind::spg_fi, "SPG_FI"},         {MethodKind::ncl, "NCL"},
    {MethodKind::one, "ONE"},           {MethodKind::mtl, "MTL"},               {MethodKind::ewc_fi, "EWC_FI"},
    {MethodKind::ewc_gi, "EWC_GI"},
};

std::string short_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<LayerParams*> trainable(TILModel& model, int task_id) {
  std::vector<LayerParams*> ptrs;
  for (auto& l : model.extractor.layers) ptrs.push_back(&l);
  ptrs.push_back(&model.head(task_id));
  return ptrs;
}

double split_loss(const TILModel& model, int task_id, const Split& split) {
  return loss_cross_entropy(forward_task(model, task_id, split.inputs), split.labels);
}

/// Gradient transform for one task. The joined gradient set holds the
/// extractor layers followed by the current head.
GradientTransform make_transform(const Method& method, const ImportanceState& importance) {
  if (!method.masks_gradients()) return identity_transform;
  auto split_head = [](const GradientSet& g) {
    return std::pair{GradientSet{std::vector<LayerParams>(g.layers.begin(), g.layers.end() - 1)}, g.layers.back()};
  };
  if (method.kind == MethodKind::spg_hard) {
    return [mask = harden(importance, method.threshold), split_head](const GradientSet& g) {
      auto [extractor, head] = split_head(g);
      extractor = apply_hard_mask(extractor, mask);
      const double keep = 1.0 - mask.mean();
      head.weights *= keep;
      head.bias *= keep;
      extractor.layers.push_back(std::move(head));
      return extractor;
    };
  }
  const bool mask_head = method.kind != MethodKind::spg_no_smh;
  return [&importance, mask_head, split_head](const GradientSet& g) {
    auto [extractor, head] = split_head(g);
    extractor = soft_mask_extractor(extractor, importance);
    if (mask_head) head = soft_mask_head(head, importance.mean_importance);
    extractor.layers.push_back(std::move(head));
    return extractor;
  };
}

/// Validation-based early stopping: an epoch improves when validation
/// accuracy rises, or ties while validation loss falls.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  bool improved(double acc, double loss) {
    const bool better = acc > best_acc_ || (acc == best_acc_ && loss < best_loss_);
    if (better) {
      best_acc_ = acc;
      best_loss_ = loss;
      waited_ = 0;
    } else {
      ++waited_;
    }
    return better;
  }
  bool exhausted() const { return waited_ >= patience_; }

 private:
  int patience_;
  int waited_ = 0;
  double best_acc_ = -1.0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

std::vector<Index> iota_rows(Index n) {
  std::vector<Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Index{0});
  return rows;
}

enum class Trainable { extractor_and_head, head_only };

TrainReport train_loop(TILModel& model, const TaskDataset& task, const TrainConfig& config, const Method& method,
                       const ImportanceState& importance, const EwcState* ewc, Trainable what) {
  config.validate();
  const int id = task.task_id;
  if (!model.has_head(id)) throw InvalidArgument("no head for task " + std::to_string(id));
  if (task.train.size() == 0) throw InvalidArgument("task " + std::to_string(id) + " has no training data");

  Rng rng(derive_seed(config.seed, "train", {static_cast<std::uint64_t>(id)}));
  const GradientTransform transform = make_transform(method, importance);
  const bool use_val = task.val.size() > 0;

  TrainReport report;
  report.train_loss.push_back(split_loss(model, id, task.train));
  EarlyStopper stopper(config.patience);
  Network best_extractor = model.extractor;
  LayerParams best_head = model.head(id);
  std::vector<Index> order = iota_rows(task.train.size());

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span<Index>(order));
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const auto end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      const Batch batch = task.train.gather(std::span<const Index>(order).subspan(begin, end - begin));
      TaskGradients g = backward_task(model, id, batch, LossKind::cross_entropy);
      if (what == Trainable::head_only) {
        LayerParams* head = &model.head(id);
        sgd_step(std::span<LayerParams* const>(&head, 1), GradientSet{{std::move(g.head)}}, config.lr,
                 identity_transform);
        continue;
      }
      if (method.is_ewc() && ewc) g.extractor += ewc_penalty_grad(model.extractor.layers, ewc, method.lambda).grads;
      sgd_step(trainable(model, id), joined(std::move(g)), config.lr, transform);
    }
    report.train_loss.push_back(split_loss(model, id, task.train));
    report.epochs_run = epoch;
    if (!use_val) {
      report.best_epoch = epoch;
      continue;
    }
    const double val_acc = accuracy(model, id, task.val);
    report.val_accuracy.push_back(val_acc);
    if (stopper.improved(val_acc, split_loss(model, id, task.val))) {
      report.best_epoch = epoch;
      best_extractor = model.extractor;
      best_head = model.head(id);
    } else if (stopper.exhausted()) {
      break;
    }
  }
  if (use_val) {
    if (what == Trainable::extractor_and_head) model.extractor = std::move(best_extractor);
    model.head(id) = std::move(best_head);
  }
  return report;
}

}  // namespace

std::string Method::name() const {
  std::string base;
  for (const auto& m : kMethodNames)
    if (m.kind == kind) base = m.name;
  if (kind == MethodKind::spg_hard) return base + ":" + short_double(threshold);
  if (is_ewc()) return base + ":" + short_double(lambda);
  return base;
}

Method Method::parse(std::string_view text) {
  std::string_view head = text;
  std::string_view arg;
  if (auto colon = text.find(':'); colon != std::string_view::npos) {
    head = text.substr(0, colon);
    arg = text.substr(colon + 1);
  }
  Method m;
  bool found = false;
  for (const auto& entry : kMethodNames) {
    if (entry.name == head) {
      m.kind = entry.kind;
      found = true;
    }
  }
  if (!found) throw InvalidArgument("unknown method '" + std::string(text) + "'");
  const bool takes_arg = m.kind == MethodKind::spg_hard || m.is_ewc();
  if (takes_arg != !arg.empty())
    throw InvalidArgument("method '" + std::string(text) + (takes_arg ? "' needs a ':<value>' argument" : "' takes no argument"));
  if (takes_arg) {
    double v = 0.0;
    auto res = std::from_chars(arg.data(), arg.data() + arg.size(), v);
    if (res.ec != std::errc{} || res.ptr != arg.data() + arg.size())
      throw InvalidArgument("bad method argument in '" + std::string(text) + "'");
    (m.kind == MethodKind::spg_hard ? m.threshold : m.lambda) = v;
  }
  m.validate();
  return m;
}

bool Method::masks_gradients() const {
  switch (kind) {
    case MethodKind::spg:
    case MethodKind::spg_no_chi:
    case MethodKind::spg_no_smh:
    case MethodKind::spg_hard:
    case MethodKind::spg_fi:
      return true;
    default:
      return false;
  }
}

void Method::validate() const {
  if (kind == MethodKind::spg_hard &&
      std::find(std::begin(kHardThresholds), std::end(kHardThresholds), threshold) == std::end(kHardThresholds))
    throw InvalidArgument("hard-mask threshold must be one of 0.2, 0.4, 0.6, 0.8");
  if (is_ewc() && !(lambda > 0.0)) throw InvalidArgument("EWC strength must be positive");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw InvalidArgument("lr must be positive");
  if (epochs <= 0) throw InvalidArgument("epochs must be positive");
  if (batch_size <= 0) throw InvalidArgument("batch_size must be positive");
  if (patience <= 0) throw InvalidArgument("patience must be positive");
}

EwcPenalty ewc_penalty_grad(std::span<const LayerParams> params, const EwcState* state, double lambda) {
  EwcPenalty out;
  out.grads = GradientSet::zeros_like(params);
  if (!state) return out;
  if (state->anchor.size() != params.size() || state->omega.size() != params.size())
    throw DimensionError(-1, "EWC state does not match the extractor layer count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state->anchor[i].size() != params[i].size() || state->omega[i].size() != params[i].size())
      throw DimensionError(static_cast<int>(i), "EWC state shape does not match parameters");
    const Vector diff = flatten(params[i]) - flatten(state->anchor[i]);
    out.penalty += 0.5 * lambda * (state->omega[i].array() * diff.array().square()).sum();
    assign_flat(out.grads.layers[i], (lambda * state->omega[i].array() * diff.array()).matrix());
  }
  return out;
}

TrainReport train_task(TILModel& model, const TaskDataset& task, const TrainConfig& config, const Method& method,
                       const ImportanceState& importance, const EwcState* ewc) {
  return train_loop(model, task, config, method, importance, ewc, Trainable::extractor_and_head);
}

TrainReport train_head_only(TILModel& model, const TaskDataset& task, const TrainConfig& config) {
  return train_loop(model, task, config, Method{MethodKind::ncl}, ImportanceState{}, nullptr, Trainable::head_only);
}

TrainReport train_joint(TILModel& model, const TaskStream& stream, const TrainConfig& config) {
  config.validate();
  struct Ref {
    std::size_t task;
    Index row;
  };
  std::vector<Ref> pool;
  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    if (!model.has_head(stream.tasks[t].task_id)) throw InvalidArgument("joint training needs every head");
    for (Index r = 0; r < stream.tasks[t].train.size(); ++r) pool.push_back({t, r});
  }
  if (pool.empty()) throw InvalidArgument("joint training needs data");

  auto mean_over_tasks = [&](auto&& per_task) {
    double s = 0.0;
    for (const auto& task : stream.tasks) s += per_task(task);
    return s / static_cast<double>(stream.tasks.size());
  };
  auto train_loss = [&] { return mean_over_tasks([&](const TaskDataset& d) { return split_loss(model, d.task_id, d.train); }); };
  const bool use_val = std::all_of(stream.tasks.begin(), stream.tasks.end(), [](const auto& d) { return d.val.size() > 0; });

  Rng rng(derive_seed(config.seed, "train-joint"));
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  TrainReport report;
  report.train_loss.push_back(train_loss());
  EarlyStopper stopper(config.patience);
  TILModel best = model;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span<Ref>(pool));
    for (std::size_t begin = 0; begin < pool.size(); begin += batch_size) {
      const auto end = std::min(pool.size(), begin + batch_size);
      const double total = static_cast<double>(end - begin);
      std::vector<std::vector<Index>> rows(stream.tasks.size());
      for (std::size_t k = begin; k < end; ++k) rows[pool[k].task].push_back(pool[k].row);

      GradientSet extractor_grad = GradientSet::zeros_like(model.extractor.layers);
      std::vector<std::pair<int, LayerParams>> head_grads;
      for (std::size_t t = 0; t < rows.size(); ++t) {
        if (rows[t].empty()) continue;
        const auto& task = stream.tasks[t];
        TaskGradients g = backward_task(model, task.task_id, task.train.gather(rows[t]), LossKind::cross_entropy);
        const double w = static_cast<double>(rows[t].size()) / total;
        g.extractor *= w;
        extractor_grad += g.extractor;
        g.head.weights *= w;
        g.head.bias *= w;
        head_grads.emplace_back(task.task_id, std::move(g.head));
      }
      std::vector<LayerParams*> params;
      for (auto& l : model.extractor.layers) params.push_back(&l);
      for (auto& [id, hg] : head_grads) {
        params.push_back(&model.head(id));
        extractor_grad.layers.push_back(std::move(hg));
      }
      sgd_step(params, extractor_grad, config.lr, identity_transform);
    }
    report.train_loss.push_back(train_loss());
    report.epochs_run = epoch;
    if (!use_val) {
      report.best_epoch = epoch;
      continue;
    }
    const double val_acc = mean_over_tasks([&](const TaskDataset& d) { return accuracy(model, d.task_id, d.val); });
    const double val_loss = mean_over_tasks([&](const TaskDataset& d) { return split_loss(model, d.task_id, d.val); });
    report.val_accuracy.push_back(val_acc);
    if (stopper.improved(val_acc, val_loss)) {
      report.best_epoch = epoch;
      best = model;
    } else if (stopper.exhausted()) {
      break;
    }
  }
  if (use_val) model = std::move(best);
  return report;
}

std::uint64_t init_seed(std::uint64_t seed) { return derive_seed(seed, "init"); }

std::uint64_t head_seed(std::uint64_t seed, int task_id) {
  return derive_seed(seed, "head", {static_cast<std::uint64_t>(task_id)});
}

namespace {

TILModel fresh_model(const TaskStream& stream, const TrainConfig& config, const RunOptions& options,
                     std::uint64_t salt) {
  Rng rng(salt ? derive_seed(init_seed(config.seed), {salt}) : init_seed(config.seed));
  return make_til_model(stream.input_dim(), options.hidden, rng);
}

void attach_head(TILModel& model, const TaskDataset& task, const TrainConfig& config) {
  Rng rng(head_seed(config.seed, task.task_id));
  add_head(model, task.task_id, task.num_classes, rng);
}

RunResult run_one(const TaskStream& stream, const Method& method, const TrainConfig& config,
                  const RunOptions& options) {
  RunResult r;
  r.method = method;
  const int T = static_cast<int>(stream.tasks.size());
  r.accuracy = AccuracyMatrix(T);
  for (int t = 1; t <= T; ++t) {
    const auto& task = stream.tasks[static_cast<std::size_t>(t - 1)];
    TILModel model = fresh_model(stream, config, options, static_cast<std::uint64_t>(t));
    attach_head(model, task, config);
    r.reports.push_back(train_task(model, task, config, method, ImportanceState::zeros_for(model.extractor)));
    const double acc = accuracy(model, task.task_id, task.test);
    for (int j = t; j <= T; ++j) r.accuracy.set(t, j, acc);
    r.model = std::move(model);
  }
  r.params = param_count(r.model);
  return r;
}

RunResult run_mtl(const TaskStream& stream, const Method& method, const TrainConfig& config,
                  const RunOptions& options) {
  RunResult r;
  r.method = method;
  const int T = static_cast<int>(stream.tasks.size());
  r.accuracy = AccuracyMatrix(T);
  TILModel model = fresh_model(stream, config, options, 0);
  for (const auto& task : stream.tasks) attach_head(model, task, config);
  TrainConfig joint = config;
  joint.batch_size = config.batch_size * T;
  r.reports.push_back(train_joint(model, stream, joint));
  for (int t = 1; t <= T; ++t) {
    const auto& task = stream.tasks[static_cast<std::size_t>(t - 1)];
    const double acc = accuracy(model, task.task_id, task.test);
    for (int j = t; j <= T; ++j) r.accuracy.set(t, j, acc);
  }
  r.model = std::move(model);
  r.params = param_count(r.model);
  return r;
}

}  // namespace

RunResult run_continual(const TaskStream& stream, const Method& method, const TrainConfig& config,
                        const RunOptions& options) {
  if (stream.tasks.empty()) throw InvalidArgument("task stream is empty");
  method.validate();
  config.validate();
  if (!method.is_sequential() && options.resume) throw InvalidArgument(method.name() + " runs cannot be resumed");
  if (method.kind == MethodKind::one) return run_one(stream, method, config, options);
  if (method.kind == MethodKind::mtl) return run_mtl(stream, method, config, options);

  const int T = static_cast<int>(stream.tasks.size());
  RunResult r;
  r.method = method;
  Checkpoint state;
  if (options.resume) {
    if (options.resume->config_hash != options.config_hash)
      throw CheckpointError(CheckpointError::Kind::hash_mismatch,
                            "checkpoint was written by a different configuration; refusing to resume");
    state = *options.resume;
    if (state.accuracy.tasks() != T) throw InvalidArgument("checkpoint task count does not match the stream");
  } else {
    state.model = fresh_model(stream, config, options, 0);
    state.importance = ImportanceState::zeros_for(state.model.extractor);
    state.config_hash = options.config_hash;
    state.accuracy = AccuracyMatrix(T);
  }

  for (int t = state.tasks_done + 1; t <= T; ++t) {
    const auto& task = stream.tasks[static_cast<std::size_t>(t - 1)];
    const int id = task.task_id;
    attach_head(state.model, task, config);
    const EwcState* ewc = state.ewc ? &*state.ewc : nullptr;
    r.reports.push_back(train_task(state.model, task, config, method, state.importance, ewc));

    if (method.masks_gradients() || method.kind == MethodKind::ewc_gi) {
      const bool cross_head = method.kind != MethodKind::spg_no_chi;
      TaskImportance ti = method.kind == MethodKind::spg_fi
                              ? fisher_importance(state.model, id, task.train)
                              : compute_task_importance(state.model, id, task.train, config.batch_size, cross_head);
      std::optional<ChiStats> chi;
      if (t >= 2 && ti.components.size() > 1) {
        std::vector<LayerVectors> previous;
        for (const auto& [head, v] : ti.components)
          if (head < id) previous.push_back(v);
        chi = chi_overwrite_stats(ti.components.at(id), previous, state.importance.per_layer);
      }
      state.importance = accumulate(std::move(state.importance), ti);
      r.task_importance_history.push_back(std::move(ti));
      r.importance_history.push_back(state.importance);
      state.chi_history.push_back(chi);
      state.blocked_history.push_back(blocked_fraction(state.importance, options.blocked_eps));
      if (method.kind == MethodKind::spg_hard)
        state.hard_blocked_history.push_back(harden(state.importance, method.threshold).mean());
    }
    if (method.is_ewc()) {
      if (!state.ewc) {
        state.ewc = EwcState{};
        for (const auto& l : state.model.extractor.layers) state.ewc->omega.push_back(Vector::Zero(l.size()));
      }
      if (method.kind == MethodKind::ewc_gi) {
        state.ewc->omega = state.importance.per_layer;
      } else {
        const LayerVectors fisher = fisher_diagonal(state.model, id, task.train);
        for (std::size_t i = 0; i < fisher.size(); ++i) state.ewc->omega[i] += fisher[i];
      }
      state.ewc->anchor = state.model.extractor.layers;
    }
    for (int k = 1; k <= t; ++k) {
      const auto& seen = stream.tasks[static_cast<std::size_t>(k - 1)];
      state.accuracy.set(k, t, accuracy(state.model, seen.task_id, seen.test));
    }
    state.tasks_done = t;
    if (options.on_task_end) options.on_task_end(state);
  }

  r.accuracy = state.accuracy;
  r.blocked_history = std::move(state.blocked_history);
  r.chi_history = std::move(state.chi_history);
  r.hard_blocked_history = std::move(state.hard_blocked_history);
  r.params = param_count(state.model);
  r.model = std::move(state.model);
  return r;
}

}  // namespace spg
