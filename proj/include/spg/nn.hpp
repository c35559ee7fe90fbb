#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "spg/rng.hpp"

namespace spg {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Parameters of one dense layer: y = W x + b, with W stored out_dim x in_dim.
/// The flattened view used by importance and masking is W in row-major
/// order followed by b.
struct LayerParams {
  Matrix weights;
  Vector bias;

  Index in_dim() const { return weights.cols(); }
  Index out_dim() const { return weights.rows(); }
  Index size() const { return weights.size() + bias.size(); }

  static LayerParams zeros(Index out_dim, Index in_dim);

  bool operator==(const LayerParams& o) const {
    return weights.rows() == o.weights.rows() && weights.cols() == o.weights.cols() &&
           bias.size() == o.bias.size() && weights == o.weights && bias == o.bias;
  }
};

Vector flatten(const LayerParams& p);
/// Writes `flat` (layout as `flatten`) back into `p`, whose shape is kept.
void assign_flat(LayerParams& p, const Vector& flat);

/// Gradients mirroring a list of LayerParams one to one.
struct GradientSet {
  std::vector<LayerParams> layers;

  std::size_t size() const { return layers.size(); }
  static GradientSet zeros_like(std::span<const LayerParams> params);
  GradientSet& operator+=(const GradientSet& o);
  GradientSet& operator*=(double s);
};

enum class Activation { relu, identity };

/// Dense feed-forward network. `activations[i]` is applied after layer i.
struct Network {
  std::vector<LayerParams> layers;
  std::vector<Activation> activations;

  Index in_dim() const { return layers.front().in_dim(); }
  Index out_dim() const { return layers.back().out_dim(); }
  Index param_count() const;
};

/// Glorot-uniform weights, zero bias.
LayerParams init_dense(Index out_dim, Index in_dim, Rng& rng);

/// `dims` = {in, hidden..., out}. Hidden layers use ReLU; the last layer uses
/// `output_activation`.
Network make_mlp(std::span<const Index> dims, Activation output_activation, Rng& rng);

struct Batch {
  Matrix inputs;
  std::optional<std::vector<int>> labels;
};

enum class LossKind { cross_entropy, logit_sum };

Matrix forward(const Network& net, const Matrix& inputs);

/// Mean cross-entropy over the batch.
double loss_cross_entropy(const Matrix& logits, std::span<const int> labels);
/// Sum over classes, mean over batch.
double loss_logit_sum(const Matrix& logits);

/// d loss / d logits for the given loss kind.
Matrix loss_gradient(const Matrix& logits, const std::optional<std::vector<int>>& labels, LossKind kind);
double loss_value(const Matrix& logits, const std::optional<std::vector<int>>& labels, LossKind kind);

struct LossAndGrad {
  double loss = 0.0;
  GradientSet grads;
};

LossAndGrad backward(const Network& net, const Batch& batch, LossKind kind);

/// Non-owning view of one layer in a chain that may span several owners
/// (a shared extractor followed by a task head).
struct LayerView {
  const LayerParams* params;
  Activation activation;
};

/// Post-activation outputs; `outputs[0]` is the input, `outputs[i + 1]` the
/// output of layer i.
struct ChainTrace {
  std::vector<Matrix> outputs;
};

ChainTrace forward_chain(std::span<const LayerView> chain, const Matrix& inputs);
/// Backpropagates `d_output` (gradient w.r.t. the chain's final output).
GradientSet backward_chain(std::span<const LayerView> chain, const ChainTrace& trace,
                           const Matrix& d_output);

using GradientTransform = std::function<GradientSet(const GradientSet&)>;

GradientSet identity_transform(const GradientSet& g);

/// theta <- theta - lr * transform(grads), over parameters that may live in
/// different owners.
void sgd_step(std::span<LayerParams* const> params, const GradientSet& grads, double lr,
              const GradientTransform& transform);
void sgd_step(Network& net, const GradientSet& grads, double lr, const GradientTransform& transform);

}  // namespace spg
