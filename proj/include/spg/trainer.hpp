#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spg/data.hpp"
#include "spg/importance.hpp"
#include "spg/masking.hpp"
#include "spg/metrics.hpp"
#include "spg/model.hpp"

namespace spg {

enum class MethodKind { spg, spg_no_chi, spg_no_smh, spg_hard, spg_fi, ncl, one, mtl, ewc_fi, ewc_gi };

/// A continual-learning method with its parameter: the hard-mask threshold
/// for SPG_HARD, the penalty strength for the EWC variants.
struct Method {
  MethodKind kind = MethodKind::spg;
  double threshold = 0.0;
  double lambda = 0.0;

  /// "SPG", "SPG_HARD:0.6", "EWC_FI:100", ...; `parse` accepts the same form.
  std::string name() const;
  static Method parse(std::string_view text);

  /// Methods that soft- or hard-mask gradients with accumulated importance.
  bool masks_gradients() const;
  bool is_ewc() const { return kind == MethodKind::ewc_fi || kind == MethodKind::ewc_gi; }
  /// Methods that learn the stream one task after another in a single model.
  bool is_sequential() const { return kind != MethodKind::one && kind != MethodKind::mtl; }
  void validate() const;

  bool operator==(const Method&) const = default;
};

inline constexpr double kHardThresholds[] = {0.2, 0.4, 0.6, 0.8};

struct TrainConfig {
  double lr = 0.05;
  int epochs = 60;
  Index batch_size = 32;
  int patience = 8;  ///< epochs without validation improvement before stopping
  std::uint64_t seed = 0;

  void validate() const;
};

/// Anchor parameters and per-parameter penalty weights for the extractor.
struct EwcState {
  std::vector<LayerParams> anchor;
  LayerVectors omega;
};

struct EwcPenalty {
  double penalty = 0.0;
  GradientSet grads;
};

/// (lambda / 2) * sum omega * (theta - anchor)^2 and its gradient. A null
/// state (first task) contributes nothing.
EwcPenalty ewc_penalty_grad(std::span<const LayerParams> params, const EwcState* state, double lambda);

struct TrainReport {
  std::vector<double> train_loss;    ///< [0] before training, then after each epoch
  std::vector<double> val_accuracy;  ///< after each epoch
  int best_epoch = 0;                ///< 0 when no epoch improved on the initial model
  int epochs_run = 0;
};

/// Trains `task` with the method's gradient transform. Earlier heads are not
/// touched. Restores the parameters of the best validation epoch.
TrainReport train_task(TILModel& model, const TaskDataset& task, const TrainConfig& config, const Method& method,
                       const ImportanceState& importance, const EwcState* ewc = nullptr);

/// Trains only the head of `task` on top of a frozen extractor.
TrainReport train_head_only(TILModel& model, const TaskDataset& task, const TrainConfig& config);

/// Joint multi-task training on every task of the stream at once.
TrainReport train_joint(TILModel& model, const TaskStream& stream, const TrainConfig& config);

/// Snapshot of a sequential run between tasks.
struct Checkpoint {
  TILModel model;
  ImportanceState importance;
  std::optional<EwcState> ewc;
  int tasks_done = 0;
  std::uint64_t config_hash = 0;
  AccuracyMatrix accuracy;
  std::vector<BlockedFraction> blocked_history;
  std::vector<std::optional<ChiStats>> chi_history;
  std::vector<double> hard_blocked_history;
};

struct RunOptions {
  std::vector<Index> hidden{64, 64};
  double blocked_eps = kDefaultBlockedEps;
  std::uint64_t config_hash = 0;
  /// Called after every task of a sequential run.
  std::function<void(const Checkpoint&)> on_task_end;
  /// Continue a sequential run from this checkpoint.
  const Checkpoint* resume = nullptr;
};

struct RunResult {
  Method method;
  AccuracyMatrix accuracy;
  /// Entries from the tasks trained in this call (not those restored from a checkpoint).
  std::vector<ImportanceState> importance_history;
  std::vector<TaskImportance> task_importance_history;
  std::vector<BlockedFraction> blocked_history;
  std::vector<std::optional<ChiStats>> chi_history;
  std::vector<double> hard_blocked_history;
  std::vector<TrainReport> reports;
  TILModel model;  ///< final model (ONE: the last task's model)
  ParamCount params;
};

RunResult run_continual(const TaskStream& stream, const Method& method, const TrainConfig& config,
                        const RunOptions& options = {});

/// Seed for the feature extractor and for the head of `task_id`.
std::uint64_t init_seed(std::uint64_t seed);
std::uint64_t head_seed(std::uint64_t seed, int task_id);

}  // namespace spg
