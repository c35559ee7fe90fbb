#pragma once

#include <vector>

#include "spg/importance.hpp"

namespace spg {

/// g' = (1 - gamma) * g, elementwise per extractor layer.
GradientSet soft_mask_extractor(const GradientSet& grads, const ImportanceState& state);

/// Uniform scaling of the current head's gradient by (1 - mean importance).
LayerParams soft_mask_head(const LayerParams& head_grads, double mean_importance);

/// Binary mask: 1 where importance exceeds the threshold (update blocked).
struct HardMask {
  LayerVectors per_layer;

  double mean() const { return mean_of(per_layer); }
};

HardMask harden(const ImportanceState& state, double threshold);

/// g' = (1 - mask) * g.
GradientSet apply_hard_mask(const GradientSet& grads, const HardMask& mask);

/// Share of parameters whose importance is numerically saturated
/// (gamma >= 1 - eps).
struct BlockedFraction {
  std::vector<double> per_layer;
  double total = 0.0;
};

inline constexpr double kDefaultBlockedEps = 1e-6;

BlockedFraction blocked_fraction(const ImportanceState& state, double eps = kDefaultBlockedEps);

}  // namespace spg
