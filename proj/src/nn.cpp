#include "spg/nn.hpp"

#include <cmath>
#include <string>

#include "spg/errors.hpp"

namespace spg {

LayerParams LayerParams::zeros(Index out_dim, Index in_dim) {
  return LayerParams{Matrix::Zero(out_dim, in_dim), Vector::Zero(out_dim)};
}

Vector flatten(const LayerParams& p) {
  Vector flat(p.size());
  flat.head(p.weights.size()) = Eigen::Map<const Vector>(p.weights.data(), p.weights.size());
  flat.tail(p.bias.size()) = p.bias;
  return flat;
}

void assign_flat(LayerParams& p, const Vector& flat) {
  if (flat.size() != p.size()) {
    throw DimensionError(-1, "flat vector of length " + std::to_string(flat.size()) +
                                 " does not match layer size " + std::to_string(p.size()));
  }
  Eigen::Map<Vector>(p.weights.data(), p.weights.size()) = flat.head(p.weights.size());
  p.bias = flat.tail(p.bias.size());
}

GradientSet GradientSet::zeros_like(std::span<const LayerParams> params) {
  GradientSet g;
  g.layers.reserve(params.size());
  for (const auto& p : params) g.layers.push_back(LayerParams::zeros(p.out_dim(), p.in_dim()));
  return g;
}

GradientSet& GradientSet::operator+=(const GradientSet& o) {
  if (o.layers.size() != layers.size()) throw DimensionError(-1, "gradient sets differ in layer count");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weights.rows() != o.layers[i].weights.rows() ||
        layers[i].weights.cols() != o.layers[i].weights.cols()) {
      throw DimensionError(static_cast<int>(i), "gradient shapes differ");
    }
    layers[i].weights += o.layers[i].weights;
    layers[i].bias += o.layers[i].bias;
  }
  return *this;
}

GradientSet& GradientSet::operator*=(double s) {
  for (auto& l : layers) {
    l.weights *= s;
    l.bias *= s;
  }
  return *this;
}

Index Network::param_count() const {
  Index n = 0;
  for (const auto& l : layers) n += l.size();
  return n;
}

LayerParams init_dense(Index out_dim, Index in_dim, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  LayerParams p = LayerParams::zeros(out_dim, in_dim);
  for (Index r = 0; r < out_dim; ++r)
    for (Index c = 0; c < in_dim; ++c) p.weights(r, c) = rng.uniform(-limit, limit);
  return p;
}

Network make_mlp(std::span<const Index> dims, Activation output_activation, Rng& rng) {
  if (dims.size() < 2) throw InvalidArgument("make_mlp needs at least input and output dims");
  Network net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    if (dims[i] <= 0 || dims[i + 1] <= 0) throw InvalidArgument("layer dims must be positive");
    net.layers.push_back(init_dense(dims[i + 1], dims[i], rng));
    net.activations.push_back(i + 2 == dims.size() ? output_activation : Activation::relu);
  }
  return net;
}

namespace {

std::vector<LayerView> views_of(const Network& net) {
  if (net.layers.size() != net.activations.size())
    throw DimensionError(-1, "network has mismatched layer and activation counts");
  std::vector<LayerView> chain;
  chain.reserve(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) chain.push_back({&net.layers[i], net.activations[i]});
  return chain;
}

void check_labels(Index rows, Index classes, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != rows)
    throw DimensionError(-1, "label count " + std::to_string(labels.size()) + " != batch size " +
                                 std::to_string(rows));
  for (int y : labels) {
    if (y < 0 || y >= classes)
      throw InvalidArgument("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
  }
}

Matrix log_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

}  // namespace

ChainTrace forward_chain(std::span<const LayerView> chain, const Matrix& inputs) {
  ChainTrace trace;
  trace.outputs.reserve(chain.size() + 1);
  trace.outputs.push_back(inputs);
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const LayerParams& p = *chain[i].params;
    const Matrix& x = trace.outputs.back();
    if (x.cols() != p.in_dim()) {
      throw DimensionError(static_cast<int>(i), "input dim " + std::to_string(x.cols()) +
                                                    " != layer in_dim " + std::to_string(p.in_dim()));
    }
    Matrix z = x * p.weights.transpose();
    z.rowwise() += p.bias.transpose();
    if (chain[i].activation == Activation::relu) z = z.cwiseMax(0.0);
    trace.outputs.push_back(std::move(z));
  }
  return trace;
}

GradientSet backward_chain(std::span<const LayerView> chain, const ChainTrace& trace, const Matrix& d_output) {
  GradientSet g;
  g.layers.resize(chain.size());
  Matrix delta = d_output;
  for (std::size_t k = chain.size(); k-- > 0;) {
    const LayerParams& p = *chain[k].params;
    if (chain[k].activation == Activation::relu) {
      delta = delta.cwiseProduct((trace.outputs[k + 1].array() > 0.0).cast<double>().matrix());
    }
    const Matrix& x = trace.outputs[k];
    g.layers[k].weights = delta.transpose() * x;
    g.layers[k].bias = delta.colwise().sum().transpose();
    if (k > 0) delta = delta * p.weights;
  }
  return g;
}

Matrix forward(const Network& net, const Matrix& inputs) {
  const auto chain = views_of(net);
  return std::move(forward_chain(chain, inputs).outputs.back());
}

double loss_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() == 0) throw InvalidArgument("cross-entropy of an empty batch");
  check_labels(logits.rows(), logits.cols(), labels);
  const Matrix lp = log_softmax(logits);
  double total = 0.0;
  for (Index r = 0; r < lp.rows(); ++r) total -= lp(r, labels[static_cast<std::size_t>(r)]);
  return total / static_cast<double>(logits.rows());
}

double loss_logit_sum(const Matrix& logits) {
  if (logits.rows() == 0) return 0.0;
  return logits.sum() / static_cast<double>(logits.rows());
}

double loss_value(const Matrix& logits, const std::optional<std::vector<int>>& labels, LossKind kind) {
  if (kind == LossKind::logit_sum) return loss_logit_sum(logits);
  if (!labels) throw InvalidArgument("cross-entropy loss requires labels");
  return loss_cross_entropy(logits, *labels);
}

Matrix loss_gradient(const Matrix& logits, const std::optional<std::vector<int>>& labels, LossKind kind) {
  const auto n = static_cast<double>(logits.rows());
  if (kind == LossKind::logit_sum) {
    return Matrix::Constant(logits.rows(), logits.cols(), logits.rows() ? 1.0 / n : 0.0);
  }
  if (!labels) throw InvalidArgument("cross-entropy loss requires labels");
  if (logits.rows() == 0) throw InvalidArgument("cross-entropy of an empty batch");
  check_labels(logits.rows(), logits.cols(), *labels);
  Matrix d = log_softmax(logits).array().exp().matrix();
  for (Index r = 0; r < d.rows(); ++r) d(r, (*labels)[static_cast<std::size_t>(r)]) -= 1.0;
  return d / n;
}

LossAndGrad backward(const Network& net, const Batch& batch, LossKind kind) {
  if (kind == LossKind::cross_entropy && !batch.labels)
    throw InvalidArgument("cross-entropy loss requires labels");
  const auto chain = views_of(net);
  const ChainTrace trace = forward_chain(chain, batch.inputs);
  const Matrix& logits = trace.outputs.back();
  LossAndGrad out;
  out.loss = loss_value(logits, batch.labels, kind);
  out.grads = backward_chain(chain, trace, loss_gradient(logits, batch.labels, kind));
  return out;
}

GradientSet identity_transform(const GradientSet& g) { return g; }

void sgd_step(std::span<LayerParams* const> params, const GradientSet& grads, double lr,
              const GradientTransform& transform) {
  if (!(lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (grads.size() != params.size())
    throw DimensionError(-1, "gradient set has " + std::to_string(grads.size()) + " layers, parameters have " +
                                 std::to_string(params.size()));
  const GradientSet step = transform ? transform(grads) : grads;
  if (step.size() != params.size()) throw DimensionError(-1, "transform changed the layer count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    LayerParams& p = *params[i];
    const LayerParams& g = step.layers[i];
    if (g.weights.rows() != p.weights.rows() || g.weights.cols() != p.weights.cols() ||
        g.bias.size() != p.bias.size()) {
      throw DimensionError(static_cast<int>(i), "gradient shape does not match parameters");
    }
    p.weights -= lr * g.weights;
    p.bias -= lr * g.bias;
  }
}

void sgd_step(Network& net, const GradientSet& grads, double lr, const GradientTransform& transform) {
  std::vector<LayerParams*> ptrs;
  for (auto& l : net.layers) ptrs.push_back(&l);
  sgd_step(ptrs, grads, lr, transform);
}

}  // namespace spg
