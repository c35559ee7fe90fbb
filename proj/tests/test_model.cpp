#include <doctest.h>

#include "spg/errors.hpp"
#include "spg/model.hpp"

using namespace spg;

namespace {

TILModel small_model(Rng& rng) {
  const Index hidden[] = {5, 4};
  TILModel m = make_til_model(3, hidden, rng);
  add_head(m, 1, 2, rng);
  add_head(m, 2, 3, rng);
  return m;
}

}  // namespace

TEST_CASE("heads are routed by task id") {
  Rng rng(7);
  TILModel m = small_model(rng);
  Matrix x = Matrix::Random(4, 3);
  CHECK(forward_task(m, 1, x).cols() == 2);
  CHECK(forward_task(m, 2, x).cols() == 3);
  const Matrix f = extract_features(m, x);
  const Matrix manual = (f * m.head(2).weights.transpose()).rowwise() + m.head(2).bias.transpose();
  CHECK((forward_task(m, 2, x) - manual).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(forward_task(m, 9, x), InvalidArgument);
  CHECK_THROWS_AS(add_head(m, 1, 2, rng), InvalidArgument);
}

TEST_CASE("features are non-negative") {
  Rng rng(8);
  TILModel m = small_model(rng);
  CHECK((extract_features(m, Matrix::Random(10, 3)).array() >= 0).all());
}

TEST_CASE("a task's gradient never touches other heads") {
  Rng rng(9);
  TILModel m = small_model(rng);
  Batch b{Matrix::Random(6, 3), std::vector<int>{0, 1, 2, 0, 1, 2}};
  const TaskGradients g = backward_task(m, 2, b, LossKind::cross_entropy);
  CHECK(g.head.out_dim() == 3);
  CHECK(g.extractor.size() == 2);
  const GradientSet j = joined(g);
  CHECK(j.size() == 3);
  CHECK(j.layers.back() == g.head);
}

TEST_CASE("parameter counts") {
  Rng rng(10);
  TILModel m = small_model(rng);
  const ParamCount c = param_count(m);
  CHECK(c.extractor == (3 * 5 + 5) + (5 * 4 + 4));
  REQUIRE(c.heads.size() == 2);
  CHECK(c.heads[0] == std::pair<int, Index>{1, 4 * 2 + 2});
  CHECK(c.heads[1] == std::pair<int, Index>{2, 4 * 3 + 3});
}
