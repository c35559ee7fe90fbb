#include "spg/masking.hpp"

#include <string>

#include "spg/errors.hpp"

namespace spg {

namespace {

/// Multiplies each layer's flattened gradient by `factors[i]`.
GradientSet scale_elementwise(const GradientSet& grads, const LayerVectors& factors) {
  if (grads.size() != factors.size())
    throw DimensionError(-1, "gradient set has " + std::to_string(grads.size()) + " layers, mask has " +
                                 std::to_string(factors.size()));
  GradientSet out = grads;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    LayerParams& g = out.layers[i];
    const Vector& f = factors[i];
    if (f.size() != g.size())
      throw DimensionError(static_cast<int>(i), "mask has " + std::to_string(f.size()) + " entries, layer has " +
                                                    std::to_string(g.size()));
    const Index nw = g.weights.size();
    Eigen::Map<Vector>(g.weights.data(), nw).array() *= f.head(nw).array();
    g.bias.array() *= f.tail(g.bias.size()).array();
  }
  return out;
}

LayerVectors one_minus(const LayerVectors& v) {
  LayerVectors out;
  out.reserve(v.size());
  for (const auto& l : v) out.push_back((1.0 - l.array()).matrix());
  return out;
}

}  // namespace

GradientSet soft_mask_extractor(const GradientSet& grads, const ImportanceState& state) {
  return scale_elementwise(grads, one_minus(state.per_layer));
}

LayerParams soft_mask_head(const LayerParams& head_grads, double mean_importance) {
  if (!(mean_importance >= 0.0 && mean_importance < 1.0))
    throw InvalidArgument("mean importance " + std::to_string(mean_importance) + " outside [0, 1)");
  const double keep = 1.0 - mean_importance;
  return LayerParams{head_grads.weights * keep, head_grads.bias * keep};
}

HardMask harden(const ImportanceState& state, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw InvalidArgument("hard-mask threshold " + std::to_string(threshold) + " outside (0, 1)");
  HardMask m;
  for (const auto& l : state.per_layer) m.per_layer.push_back((l.array() > threshold).cast<double>().matrix());
  return m;
}

GradientSet apply_hard_mask(const GradientSet& grads, const HardMask& mask) {
  return scale_elementwise(grads, one_minus(mask.per_layer));
}

BlockedFraction blocked_fraction(const ImportanceState& state, double eps) {
  if (!(eps > 0.0)) throw InvalidArgument("blocked-fraction eps must be positive");
  BlockedFraction out;
  Index blocked = 0, n = 0;
  for (const auto& l : state.per_layer) {
    const Index b = (l.array() >= 1.0 - eps).count();
    out.per_layer.push_back(l.size() ? static_cast<double>(b) / static_cast<double>(l.size()) : 0.0);
    blocked += b;
    n += l.size();
  }
  out.total = n ? static_cast<double>(blocked) / static_cast<double>(n) : 0.0;
  return out;
}

}  // namespace spg
