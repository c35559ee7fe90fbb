#include "spg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>

#include "spg/errors.hpp"
#include "spg/rng.hpp"

namespace spg {

Batch Split::slice(Index begin, Index end) const {
  Batch b;
  b.inputs = inputs.middleRows(begin, end - begin);
  b.labels = std::vector<int>(labels.begin() + begin, labels.begin() + end);
  return b;
}

Batch Split::gather(std::span<const Index> rows) const {
  Batch b;
  b.inputs.resize(static_cast<Index>(rows.size()), inputs.cols());
  std::vector<int> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    b.inputs.row(static_cast<Index>(i)) = inputs.row(rows[i]);
    y[i] = labels[static_cast<std::size_t>(rows[i])];
  }
  b.labels = std::move(y);
  return b;
}

namespace {

struct Sample {
  std::vector<double> x;
  int label;
};

Split to_split(const std::vector<Sample>& samples, Index dim) {
  Split s;
  s.inputs.resize(static_cast<Index>(samples.size()), dim);
  s.labels.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (Index d = 0; d < dim; ++d) s.inputs(static_cast<Index>(i), d) = samples[i].x[static_cast<std::size_t>(d)];
    s.labels[i] = samples[i].label;
  }
  return s;
}

/// Per-class stratified split; each split is shuffled.
TaskDataset assemble_task(std::vector<std::vector<Sample>> by_class, int task_id, Index dim,
                          const SplitFractions& frac, Rng& rng) {
  if (frac.train <= 0 || frac.val < 0 || frac.test <= 0 || std::abs(frac.train + frac.val + frac.test - 1.0) > 1e-9)
    throw InvalidArgument("split fractions must be positive and sum to 1");
  std::vector<Sample> train, val, test;
  for (auto& cls : by_class) {
    rng.shuffle(std::span<Sample>(cls));
    const auto n = cls.size();
    auto n_train = static_cast<std::size_t>(std::floor(frac.train * static_cast<double>(n)));
    auto n_val = static_cast<std::size_t>(std::floor(frac.val * static_cast<double>(n)));
    if (n_train == 0 && n > 0) n_train = 1;
    if (n_train + n_val > n) n_val = n - n_train;
    for (std::size_t i = 0; i < n; ++i) {
      auto& dst = i < n_train ? train : (i < n_train + n_val ? val : test);
      dst.push_back(std::move(cls[i]));
    }
  }
  rng.shuffle(std::span<Sample>(train));
  rng.shuffle(std::span<Sample>(val));
  rng.shuffle(std::span<Sample>(test));
  TaskDataset t;
  t.task_id = task_id;
  t.num_classes = static_cast<int>(by_class.size());
  t.train = to_split(train, dim);
  t.val = to_split(val, dim);
  t.test = to_split(test, dim);
  return t;
}

std::vector<Sample> draw_cluster(const Vector& mean, double sigma, int count, int label, Rng& rng) {
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Sample s{std::vector<double>(static_cast<std::size_t>(mean.size())), label};
    for (Index d = 0; d < mean.size(); ++d) s.x[static_cast<std::size_t>(d)] = mean(d) + sigma * rng.normal();
    out.push_back(std::move(s));
  }
  return out;
}

Vector random_mean(Index dim, double range, Rng& rng) {
  Vector m(dim);
  for (Index d = 0; d < dim; ++d) m(d) = rng.uniform(-range, range);
  return m;
}

Vector random_unit(Index dim, Rng& rng) {
  Vector v(dim);
  for (Index d = 0; d < dim; ++d) v(d) = rng.normal();
  return v / v.norm();
}

void check_generator_args(int n_tasks, int classes, Index dim, int samples) {
  if (n_tasks <= 0 || classes <= 0 || dim <= 0 || samples <= 0)
    throw InvalidArgument("stream generator arguments must be positive");
}

}  // namespace

TaskStream gen_dissimilar_stream(int n_tasks, int classes_per_task, Index dim, int samples_per_class,
                                 std::uint64_t seed, const ClusterOptions& opts) {
  check_generator_args(n_tasks, classes_per_task, dim, samples_per_class);
  Rng rng(derive_seed(seed, "dissimilar-stream"));
  TaskStream stream;
  stream.kind = StreamKind::dissimilar;
  for (int t = 0; t < n_tasks; ++t) {
    std::vector<std::vector<Sample>> by_class;
    for (int c = 0; c < classes_per_task; ++c) {
      const Vector mean = random_mean(dim, opts.mean_range, rng);
      by_class.push_back(draw_cluster(mean, opts.sigma, samples_per_class, c, rng));
    }
    stream.tasks.push_back(assemble_task(std::move(by_class), t + 1, dim, opts.split, rng));
  }
  return stream;
}

TaskStream gen_similar_stream(int n_tasks, int classes, Index dim, int samples_per_class, std::uint64_t seed,
                              double drift, const ClusterOptions& opts) {
  check_generator_args(n_tasks, classes, dim, samples_per_class);
  if (drift < 0) throw InvalidArgument("drift must be non-negative");
  Rng rng(derive_seed(seed, "similar-stream"));
  std::vector<Vector> means;
  for (int c = 0; c < classes; ++c) means.push_back(random_mean(dim, opts.mean_range, rng));

  TaskStream stream;
  stream.kind = StreamKind::similar;
  for (int t = 0; t < n_tasks; ++t) {
    // Rotation by `angle` in a random plane spanned by orthonormal u, v.
    Matrix rot = Matrix::Identity(dim, dim);
    Vector shift = Vector::Zero(dim);
    if (drift > 0 && dim >= 2) {
      const Vector u = random_unit(dim, rng);
      Vector v = random_unit(dim, rng);
      v -= v.dot(u) * u;
      v /= v.norm();
      const double angle = rng.uniform(-drift, drift);
      rot += (std::cos(angle) - 1.0) * (u * u.transpose() + v * v.transpose()) +
             std::sin(angle) * (v * u.transpose() - u * v.transpose());
    }
    if (drift > 0) shift = random_unit(dim, rng) * rng.uniform(0.0, drift);
    std::vector<std::vector<Sample>> by_class;
    for (int c = 0; c < classes; ++c) {
      const Vector mean = rot * means[static_cast<std::size_t>(c)] + shift;
      by_class.push_back(draw_cluster(mean, opts.sigma, samples_per_class, c, rng));
    }
    stream.tasks.push_back(assemble_task(std::move(by_class), t + 1, dim, opts.split, rng));
  }
  return stream;
}

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t at) {
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

std::uint32_t expect_magic(const std::vector<unsigned char>& bytes, std::uint32_t magic,
                           const std::filesystem::path& path) {
  if (bytes.size() < 4) throw IdxError(IdxError::Kind::truncated, path.string() + ": file shorter than IDX magic");
  const auto got = read_be32(bytes, 0);
  if (got != magic) {
    char buf[96];
    std::snprintf(buf, sizeof buf, ": magic 0x%08x, expected 0x%08x", got, magic);
    throw IdxError(IdxError::Kind::bad_magic, path.string() + buf);
  }
  return got;
}

}  // namespace

IdxData load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);
  expect_magic(img, kIdxImagesMagic, images_path);
  expect_magic(lab, kIdxLabelsMagic, labels_path);
  if (img.size() < 16) throw IdxError(IdxError::Kind::truncated, images_path.string() + ": truncated header");
  if (lab.size() < 8) throw IdxError(IdxError::Kind::truncated, labels_path.string() + ": truncated header");

  const std::uint64_t n_img = read_be32(img, 4);
  const std::uint64_t rows = read_be32(img, 8);
  const std::uint64_t cols = read_be32(img, 12);
  const std::uint64_t n_lab = read_be32(lab, 4);
  if (img.size() < 16 + n_img * rows * cols)
    throw IdxError(IdxError::Kind::truncated, images_path.string() + ": payload shorter than " +
                                                  std::to_string(n_img) + " images of " + std::to_string(rows) +
                                                  "x" + std::to_string(cols));
  if (lab.size() < 8 + n_lab)
    throw IdxError(IdxError::Kind::truncated,
                   labels_path.string() + ": payload shorter than " + std::to_string(n_lab) + " labels");
  if (n_img != n_lab)
    throw IdxError(IdxError::Kind::count_mismatch,
                   std::to_string(n_img) + " images but " + std::to_string(n_lab) + " labels");

  IdxData out;
  out.rows = static_cast<Index>(rows);
  out.cols = static_cast<Index>(cols);
  const auto pixels = static_cast<Index>(rows * cols);
  out.inputs.resize(static_cast<Index>(n_img), pixels);
  for (Index i = 0; i < out.inputs.rows(); ++i)
    for (Index p = 0; p < pixels; ++p)
      out.inputs(i, p) = static_cast<double>(img[16 + static_cast<std::size_t>(i * pixels + p)]) / 255.0;
  out.labels.reserve(n_lab);
  for (std::uint64_t i = 0; i < n_lab; ++i) out.labels.push_back(lab[8 + i]);
  return out;
}

TaskStream split_by_class(const Matrix& inputs, std::span<const int> labels, int n_tasks, std::uint64_t seed,
                          const SplitFractions& split) {
  if (n_tasks <= 0) throw InvalidArgument("n_tasks must be positive");
  if (static_cast<Index>(labels.size()) != inputs.rows())
    throw DimensionError(-1, "label count does not match input rows");
  std::map<int, std::vector<Index>> rows_by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) rows_by_class[labels[i]].push_back(static_cast<Index>(i));
  const auto n_classes = static_cast<int>(rows_by_class.size());
  if (n_classes % n_tasks != 0)
    throw InvalidArgument(std::to_string(n_classes) + " classes cannot be split evenly into " +
                          std::to_string(n_tasks) + " tasks");

  std::vector<int> class_ids;
  for (const auto& [c, _] : rows_by_class) class_ids.push_back(c);
  Rng rng(derive_seed(seed, "split-by-class"));
  rng.shuffle(std::span<int>(class_ids));

  const int per_task = n_classes / n_tasks;
  const Index dim = inputs.cols();
  TaskStream stream;
  stream.kind = StreamKind::split_idx;
  for (int t = 0; t < n_tasks; ++t) {
    std::vector<std::vector<Sample>> by_class;
    for (int k = 0; k < per_task; ++k) {
      const int original = class_ids[static_cast<std::size_t>(t * per_task + k)];
      std::vector<Sample> cls;
      for (Index r : rows_by_class[original]) {
        Sample s{std::vector<double>(inputs.row(r).begin(), inputs.row(r).end()), k};
        cls.push_back(std::move(s));
      }
      by_class.push_back(std::move(cls));
    }
    stream.tasks.push_back(assemble_task(std::move(by_class), t + 1, dim, split, rng));
  }
  return stream;
}

}  // namespace spg
