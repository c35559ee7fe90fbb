#include "spg/metrics.hpp"

#include <string>

#include "spg/errors.hpp"

namespace spg {

AccuracyMatrix::AccuracyMatrix(int tasks)
    : tasks_(tasks),
      values_(static_cast<std::size_t>(tasks) * static_cast<std::size_t>(tasks), 0.0),
      present_(values_.size(), false) {
  if (tasks < 1) throw InvalidArgument("accuracy matrix needs at least one task");
}

std::size_t AccuracyMatrix::offset(int task, int after) const {
  if (task < 1 || after < 1 || task > tasks_ || after > tasks_ || task > after)
    throw InvalidArgument("accuracy entry (" + std::to_string(task) + ", " + std::to_string(after) +
                          ") outside the lower triangle of a " + std::to_string(tasks_) + "-task matrix");
  return static_cast<std::size_t>(after - 1) * static_cast<std::size_t>(tasks_) + static_cast<std::size_t>(task - 1);
}

double AccuracyMatrix::at(int task, int after) const {
  const auto k = offset(task, after);
  if (!present_[k])
    throw InvalidArgument("accuracy entry (" + std::to_string(task) + ", " + std::to_string(after) + ") not recorded");
  return values_[k];
}

void AccuracyMatrix::set(int task, int after, double accuracy) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw InvalidArgument("accuracy outside [0, 1]");
  const auto k = offset(task, after);
  values_[k] = accuracy;
  present_[k] = true;
}

bool AccuracyMatrix::has(int task, int after) const { return present_[offset(task, after)]; }

bool AccuracyMatrix::complete() const {
  for (int j = 1; j <= tasks_; ++j)
    for (int i = 1; i <= j; ++i)
      if (!has(i, j)) return false;
  return tasks_ > 0;
}

bool AccuracyMatrix::operator==(const AccuracyMatrix& o) const {
  return tasks_ == o.tasks_ && values_ == o.values_ && present_ == o.present_;
}

double accuracy(const TILModel& model, int task_id, const Split& split) {
  if (split.size() == 0) throw InvalidArgument("accuracy of an empty split");
  const Matrix logits = forward_task(model, task_id, split.inputs);
  Index correct = 0;
  for (Index r = 0; r < logits.rows(); ++r) {
    Index best;
    logits.row(r).maxCoeff(&best);
    if (best == split.labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

double avg_accuracy(const AccuracyMatrix& acc) {
  const int T = acc.tasks();
  double sum = 0.0;
  for (int t = 1; t <= T; ++t) sum += acc.at(t, T);
  return sum / T;
}

double forward_transfer(const AccuracyMatrix& acc, std::span<const double> reference) {
  const int T = acc.tasks();
  if (static_cast<int>(reference.size()) != T)
    throw InvalidArgument("reference has " + std::to_string(reference.size()) + " entries for " +
                          std::to_string(T) + " tasks");
  double sum = 0.0;
  for (int t = 1; t <= T; ++t) sum += acc.at(t, t) - reference[static_cast<std::size_t>(t - 1)];
  return sum / T;
}

std::optional<double> backward_transfer(const AccuracyMatrix& acc) {
  const int T = acc.tasks();
  if (T < 2) return std::nullopt;
  double sum = 0.0;
  for (int t = 1; t < T; ++t) sum += acc.at(t, T) - acc.at(t, t);
  return sum / (T - 1);
}

}  // namespace spg
