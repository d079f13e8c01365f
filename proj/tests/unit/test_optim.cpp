#include <cmath>

#include "doctest.h"
#include "metareg/optim.hpp"

using namespace metareg;

namespace {

NetworkParams two_scalars(float a, float b) {
  NetworkParams p;
  p.tensors.push_back({"a", Tensor<float>::scalar(a)});
  p.tensors.push_back({"b", Tensor<float>::scalar(b)});
  return p;
}

}  // namespace

TEST_CASE("sgd on a two-parameter quadratic matches the hand gradient") {
  // L = (a - 1)^2 + 3 b^2 at (a, b) = (2, 0.5): grad = (2, 3).
  NetworkParams p = two_scalars(2.0f, 0.5f);
  Optimizer opt({OptimizerKind::kSgd, 0.1}, p);
  const float a = p.tensors[0].value[0], b = p.tensors[1].value[0];
  opt.step(p, {Tensor<float>::scalar(2.0f * (a - 1.0f)), Tensor<float>::scalar(6.0f * b)});
  CHECK(p.tensors[0].value[0] == doctest::Approx(1.8));
  CHECK(p.tensors[1].value[0] == doctest::Approx(0.2));
}

TEST_CASE("adam first step moves each parameter by the learning rate") {
  NetworkParams p = two_scalars(1.0f, -1.0f);
  Optimizer opt({OptimizerKind::kAdam, 0.01}, p);
  opt.step(p, {Tensor<float>::scalar(5.0f), Tensor<float>::scalar(-0.2f)});
  // Bias-corrected m/sqrt(v) = sign(g) on the first step.
  CHECK(p.tensors[0].value[0] == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(p.tensors[1].value[0] == doctest::Approx(-0.99).epsilon(1e-6));
  CHECK(opt.steps_taken() == 1);
  opt.reset();
  CHECK(opt.steps_taken() == 0);
}

TEST_CASE("adam second step matches the recurrence") {
  NetworkParams p = two_scalars(0.0f, 0.0f);
  Optimizer opt({OptimizerKind::kAdam, 0.1}, p);
  opt.step(p, {Tensor<float>::scalar(1.0f), Tensor<float>::scalar(0.0f)});
  opt.step(p, {Tensor<float>::scalar(3.0f), Tensor<float>::scalar(0.0f)});
  const double m = 0.1 * 0.9 * 1 + 0.1 * 3, v = 0.001 * 0.999 * 1 + 0.001 * 9;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  CHECK(p.tensors[0].value[0] == doctest::Approx(-0.1 - 0.1 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-6));
  CHECK(p.tensors[1].value[0] == 0.0f);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  NetworkParams p = two_scalars(0.3f, 0.4f);
  const NetworkParams before = p;
  Optimizer opt({OptimizerKind::kAdam, 0.0}, p);
  opt.step(p, {Tensor<float>::scalar(1.0f), Tensor<float>::scalar(-2.0f)});
  CHECK(p == before);
}

TEST_CASE("optimizer names") {
  CHECK(optimizer_from_string("adam") == OptimizerKind::kAdam);
  CHECK(optimizer_from_string("sgd") == OptimizerKind::kSgd);
  CHECK(to_string(OptimizerKind::kSgd) == "sgd");
  CHECK_THROWS_AS(optimizer_from_string("rmsprop"), ConfigError);
}
