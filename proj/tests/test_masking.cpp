#include <doctest.h>

#include <cmath>

#include "spg/errors.hpp"
#include "spg/masking.hpp"

using namespace spg;

namespace {

ImportanceState random_state(Rng& rng, const std::vector<std::pair<Index, Index>>& shapes) {
  ImportanceState s;
  for (auto [out, in] : shapes) {
    Vector v(out * in + out);
    for (Index i = 0; i < v.size(); ++i) v(i) = rng.uniform() * 0.999;
    s.per_layer.push_back(v);
  }
  s.mean_importance = mean_of(s.per_layer);
  return s;
}

GradientSet random_grads(Rng& rng, const std::vector<std::pair<Index, Index>>& shapes) {
  GradientSet g;
  for (auto [out, in] : shapes) {
    LayerParams p = LayerParams::zeros(out, in);
    for (Index i = 0; i < p.weights.size(); ++i) p.weights.data()[i] = rng.normal();
    for (Index i = 0; i < p.bias.size(); ++i) p.bias(i) = rng.normal();
    g.layers.push_back(p);
  }
  return g;
}

const std::vector<std::pair<Index, Index>> kShapes{{4, 3}, {2, 4}};

}  // namespace

TEST_CASE("extractor soft-mask scales each entry by one minus importance") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const ImportanceState s = random_state(rng, kShapes);
    const GradientSet g = random_grads(rng, kShapes);
    const GradientSet m = soft_mask_extractor(g, s);
    for (std::size_t l = 0; l < kShapes.size(); ++l) {
      const Vector a = flatten(g.layers[l]);
      const Vector b = flatten(m.layers[l]);
      for (Index k = 0; k < a.size(); ++k) {
        CHECK(b(k) == doctest::Approx((1.0 - s.per_layer[l](k)) * a(k)));
        CHECK(std::abs(b(k)) <= std::abs(a(k)));
        CHECK((b(k) == 0.0 || std::signbit(b(k)) == std::signbit(a(k))));
      }
    }
  }
}

TEST_CASE("zero importance leaves gradients bit-identical") {
  Rng rng(2);
  ImportanceState s;
  for (auto [out, in] : kShapes) s.per_layer.push_back(Vector::Zero(out * in + out));
  const GradientSet g = random_grads(rng, kShapes);
  const GradientSet m = soft_mask_extractor(g, s);
  for (std::size_t l = 0; l < kShapes.size(); ++l) CHECK(m.layers[l] == g.layers[l]);
}

TEST_CASE("head soft-mask preserves direction") {
  Rng rng(3);
  const GradientSet g = random_grads(rng, {{3, 5}});
  for (double mean : {0.0, 0.25, 0.9}) {
    const LayerParams h = soft_mask_head(g.layers[0], mean);
    const Vector a = flatten(g.layers[0]);
    const Vector b = flatten(h);
    CHECK((b - (1.0 - mean) * a).cwiseAbs().maxCoeff() < 1e-15);
    if (mean < 1.0) CHECK(a.normalized().dot(b.normalized()) == doctest::Approx(1.0));
  }
  CHECK_THROWS_AS(soft_mask_head(g.layers[0], 1.0), InvalidArgument);
  CHECK_THROWS_AS(soft_mask_head(g.layers[0], -0.1), InvalidArgument);
}

TEST_CASE("harden is monotone in the threshold") {
  Rng rng(4);
  const ImportanceState s = random_state(rng, kShapes);
  double prev = 1.0;
  for (double thr : {0.2, 0.4, 0.6, 0.8}) {
    const HardMask m = harden(s, thr);
    CHECK(m.mean() <= prev);
    for (std::size_t l = 0; l < kShapes.size(); ++l)
      for (Index k = 0; k < m.per_layer[l].size(); ++k)
        CHECK(m.per_layer[l](k) == (s.per_layer[l](k) > thr ? 1.0 : 0.0));
    prev = m.mean();
  }
  CHECK_THROWS_AS(harden(s, 0.0), InvalidArgument);
  CHECK_THROWS_AS(harden(s, 1.0), InvalidArgument);
}

TEST_CASE("hard mask blocks exactly the masked entries") {
  Rng rng(5);
  const ImportanceState s = random_state(rng, kShapes);
  const HardMask m = harden(s, 0.5);
  const GradientSet g = random_grads(rng, kShapes);
  const GradientSet out = apply_hard_mask(g, m);
  for (std::size_t l = 0; l < kShapes.size(); ++l) {
    const Vector a = flatten(g.layers[l]);
    const Vector b = flatten(out.layers[l]);
    for (Index k = 0; k < a.size(); ++k) CHECK(b(k) == (m.per_layer[l](k) > 0 ? 0.0 : a(k)));
  }
}

TEST_CASE("blocked fraction counts saturated entries") {
  ImportanceState s;
  s.per_layer.push_back((Vector(4) << 1.0 - 1e-7, 0.5, 1.0 - 1e-3, 1.0 - 1e-6).finished());
  s.per_layer.push_back((Vector(2) << 0.0, 1.0 - 1e-9).finished());
  const BlockedFraction b = blocked_fraction(s, 1e-6);
  CHECK(b.per_layer[0] == doctest::Approx(0.5));
  CHECK(b.per_layer[1] == doctest::Approx(0.5));
  CHECK(b.total == doctest::Approx(3.0 / 6.0));
  CHECK_THROWS_AS(blocked_fraction(s, 0.0), InvalidArgument);
}

TEST_CASE("blocked fraction never decreases under accumulation") {
  Rng rng(6);
  ImportanceState s;
  for (auto [out, in] : kShapes) s.per_layer.push_back(Vector::Zero(out * in + out));
  double prev = 0.0;
  for (int t = 0; t < 10; ++t) {
    TaskImportance ti;
    for (auto [out, in] : kShapes) {
      Vector v(out * in + out);
      for (Index i = 0; i < v.size(); ++i) v(i) = rng.uniform() < 0.1 ? std::tanh(20.0) : rng.uniform() * 0.9;
      ti.per_layer.push_back(v);
    }
    s = accumulate(s, ti);
    const double now = blocked_fraction(s).total;
    CHECK(now >= prev);
    prev = now;
  }
}
