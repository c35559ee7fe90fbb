#pragma once

#include <optional>
#include <span>
#include <vector>

#include "spg/data.hpp"
#include "spg/model.hpp"

namespace spg {

/// Lower-triangular matrix of test accuracies: at(i, j) is the accuracy on
/// task i right after learning task j (1-based, i <= j).
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(int tasks);

  int tasks() const { return tasks_; }
  double at(int task, int after) const;
  void set(int task, int after, double accuracy);
  bool has(int task, int after) const;
  /// Every entry with i <= j has been recorded.
  bool complete() const;

  bool operator==(const AccuracyMatrix& o) const;

 private:
  std::size_t offset(int task, int after) const;

  int tasks_ = 0;
  std::vector<double> values_;
  std::vector<bool> present_;
};

/// Fraction of rows whose argmax logit matches the label.
double accuracy(const TILModel& model, int task_id, const Split& split);

/// Mean of the final column.
double avg_accuracy(const AccuracyMatrix& acc);

/// Mean over t of acc(t, t) - reference[t - 1]; `reference` holds the
/// one-model-per-task accuracies.
double forward_transfer(const AccuracyMatrix& acc, std::span<const double> reference);

/// Mean over t < T of acc(t, T) - acc(t, t); absent when T == 1.
std::optional<double> backward_transfer(const AccuracyMatrix& acc);

}  // namespace spg
