#pragma once

// Reference implementations used only by tests. They deliberately avoid the
// library's Eigen kernels: plain loops, long double accumulation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "spg/nn.hpp"

namespace oracle {

using spg::Index;

inline std::vector<std::vector<long double>> matmul_t(const spg::Matrix& x, const spg::LayerParams& p) {
  std::vector<std::vector<long double>> out(static_cast<std::size_t>(x.rows()),
                                            std::vector<long double>(static_cast<std::size_t>(p.out_dim())));
  for (Index r = 0; r < x.rows(); ++r)
    for (Index o = 0; o < p.out_dim(); ++o) {
      long double s = p.bias(o);
      for (Index i = 0; i < p.in_dim(); ++i) s += static_cast<long double>(x(r, i)) * p.weights(o, i);
      out[static_cast<std::size_t>(r)][static_cast<std::size_t>(o)] = s;
    }
  return out;
}

/// Forward pass with loops. Also reports the smallest |pre-activation| seen
/// at a ReLU, so callers can avoid finite differences across a kink.
inline spg::Matrix forward(const std::vector<spg::LayerParams>& layers, const std::vector<spg::Activation>& acts,
                           const spg::Matrix& inputs, double* min_kink = nullptr) {
  spg::Matrix x = inputs;
  double closest = INFINITY;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto z = matmul_t(x, layers[l]);
    spg::Matrix y(x.rows(), layers[l].out_dim());
    for (Index r = 0; r < y.rows(); ++r)
      for (Index c = 0; c < y.cols(); ++c) {
        long double v = z[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
        if (acts[l] == spg::Activation::relu) {
          closest = std::min(closest, static_cast<double>(std::fabs(v)));
          v = v > 0 ? v : 0;
        }
        y(r, c) = static_cast<double>(v);
      }
    x = std::move(y);
  }
  if (min_kink) *min_kink = closest;
  return x;
}

inline long double cross_entropy(const spg::Matrix& logits, const std::vector<int>& labels) {
  long double total = 0;
  for (Index r = 0; r < logits.rows(); ++r) {
    long double m = logits(r, 0);
    for (Index c = 1; c < logits.cols(); ++c) m = std::max<long double>(m, logits(r, c));
    long double z = 0;
    for (Index c = 0; c < logits.cols(); ++c) z += std::exp(static_cast<long double>(logits(r, c)) - m);
    total += -(static_cast<long double>(logits(r, labels[static_cast<std::size_t>(r)])) - m - std::log(z));
  }
  return total / logits.rows();
}

inline long double logit_sum(const spg::Matrix& logits) {
  long double total = 0;
  for (Index r = 0; r < logits.rows(); ++r)
    for (Index c = 0; c < logits.cols(); ++c) total += logits(r, c);
  return total / logits.rows();
}

/// Central differences of `f` over every entry of every layer, in flatten order.
inline std::vector<spg::Vector> central_differences(std::vector<spg::LayerParams> layers,
                                                    const std::function<long double(const std::vector<spg::LayerParams>&)>& f,
                                                    double h) {
  std::vector<spg::Vector> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    spg::Vector flat = spg::flatten(layers[l]);
    spg::Vector g(flat.size());
    for (Index k = 0; k < flat.size(); ++k) {
      const double orig = flat(k);
      flat(k) = orig + h;
      spg::assign_flat(layers[l], flat);
      const long double up = f(layers);
      flat(k) = orig - h;
      spg::assign_flat(layers[l], flat);
      const long double down = f(layers);
      flat(k) = orig;
      spg::assign_flat(layers[l], flat);
      g(k) = static_cast<double>((up - down) / (2.0L * h));
    }
    out.push_back(g);
  }
  return out;
}

/// Largest |a - b| / max(|a|, |b|, floor) over all entries.
inline double max_rel_error(const std::vector<spg::Vector>& a, const std::vector<spg::Vector>& b, double floor) {
  double worst = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l)
    for (Index k = 0; k < a[l].size(); ++k) {
      const double denom = std::max({std::fabs(a[l](k)), std::fabs(b[l](k)), floor});
      worst = std::max(worst, std::fabs(a[l](k) - b[l](k)) / denom);
    }
  return worst;
}

/// Population-variance standardisation followed by |tanh|, written out longhand.
inline spg::Vector importance(const spg::Vector& g) {
  const auto n = static_cast<long double>(g.size());
  long double mean = 0;
  for (Index i = 0; i < g.size(); ++i) mean += g(i);
  mean /= n;
  long double var = 0;
  for (Index i = 0; i < g.size(); ++i) var += (g(i) - mean) * (g(i) - mean);
  var /= n;
  spg::Vector out = spg::Vector::Zero(g.size());
  if (var < 1e-24L) return out;
  for (Index i = 0; i < g.size(); ++i) out(i) = static_cast<double>(std::fabs(std::tanh((g(i) - mean) / std::sqrt(var))));
  return out;
}

// Metrics computed straight from the definitions over a dense T x T table
// where table[i][j] is the accuracy on task i after task j (0-based).
inline double avg_accuracy(const std::vector<std::vector<double>>& table) {
  const std::size_t T = table.size();
  long double s = 0;
  for (std::size_t i = 0; i < T; ++i) s += table[i][T - 1];
  return static_cast<double>(s / T);
}

inline double forward_transfer(const std::vector<std::vector<double>>& table, const std::vector<double>& ref) {
  const std::size_t T = table.size();
  long double s = 0;
  for (std::size_t i = 0; i < T; ++i) s += static_cast<long double>(table[i][i]) - ref[i];
  return static_cast<double>(s / T);
}

inline std::optional<double> backward_transfer(const std::vector<std::vector<double>>& table) {
  const std::size_t T = table.size();
  if (T < 2) return std::nullopt;
  long double s = 0;
  for (std::size_t i = 0; i + 1 < T; ++i) s += static_cast<long double>(table[i][T - 1]) - table[i][i];
  return static_cast<double>(s / (T - 1));
}

}  // namespace oracle
