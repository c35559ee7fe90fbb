#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spg/nn.hpp"

namespace spg {

/// Samples as rows plus one class index per row.
struct Split {
  Matrix inputs;
  std::vector<int> labels;

  Index size() const { return inputs.rows(); }
  Index dim() const { return inputs.cols(); }
  /// Rows [begin, end) as a labelled batch.
  Batch slice(Index begin, Index end) const;
  /// Rows selected by `rows`, in that order.
  Batch gather(std::span<const Index> rows) const;
};

struct TaskDataset {
  int task_id = 0;
  int num_classes = 0;
  Split train;
  Split val;
  Split test;
};

enum class StreamKind { dissimilar, similar, split_idx };

struct TaskStream {
  StreamKind kind = StreamKind::dissimilar;
  std::vector<TaskDataset> tasks;

  Index input_dim() const { return tasks.front().train.dim(); }
};

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct ClusterOptions {
  double mean_range = 3.0;  ///< class means drawn uniform in [-range, range]^dim
  double sigma = 0.5;
  SplitFractions split{};
};

/// Every task gets `classes_per_task` fresh Gaussian clusters; no cluster is
/// shared between tasks.
TaskStream gen_dissimilar_stream(int n_tasks, int classes_per_task, Index dim, int samples_per_class,
                                 std::uint64_t seed, const ClusterOptions& opts = {});

/// One shared set of class clusters; task k sees them through a small random
/// rotation and a mean shift, both bounded by `drift`.
TaskStream gen_similar_stream(int n_tasks, int classes, Index dim, int samples_per_class, std::uint64_t seed,
                              double drift = 0.2, const ClusterOptions& opts = {});

struct IdxData {
  Matrix inputs;  ///< n x (rows*cols), values scaled to [0, 1]
  std::vector<int> labels;
  Index rows = 0;
  Index cols = 0;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

IdxData load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Partitions the classes (after a seeded shuffle of class ids) contiguously
/// into `n_tasks` groups and remaps labels to [0, classes_per_task).
TaskStream split_by_class(const Matrix& inputs, std::span<const int> labels, int n_tasks, std::uint64_t seed,
                          const SplitFractions& split = {});

}  // namespace spg
