#include <vector>

#include "doctest.h"
#include "metareg/autodiff.hpp"

using namespace metareg;

TEST_CASE("gradients of a small expression") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({3}, std::vector<double>{1, 2, 3}), true, "x");
  auto y = tape.leaf(Tensor<double>({3}, std::vector<double>{4, 5, 6}), true, "y");
  auto c = tape.constant(Tensor<double>({3}, 2.0));
  // L = sum(x * y + x^2 / c)
  auto loss = sum(add(mul(x, y), div(square(x), c)));
  CHECK(loss.value().item() == doctest::Approx(4 + 10 + 18 + 0.5 + 2 + 4.5));
  const auto g = backward(loss);
  CHECK(g.size() == 2);
  CHECK(g.named("x")[0] == doctest::Approx(4 + 1));
  CHECK(g.named("x")[2] == doctest::Approx(6 + 3));
  CHECK(g.of(y)[1] == doctest::Approx(2));
}

TEST_CASE("shared subexpressions accumulate gradient") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::scalar(3.0), true, "x");
  auto y = mul(x, x);
  auto loss = add(y, scale(x, 2.0));
  CHECK(backward(loss).of(x).item() == doctest::Approx(8.0));
}

TEST_CASE("backward is repeatable and leaves the tape unchanged") {
  Tape<float> tape;
  auto x = tape.leaf(Tensor<float>({4}, std::vector<float>{-1, 0.5f, 2, -3}), true, "x");
  auto loss = mean(leaky_relu(x, 0.2));
  const auto n = tape.size();
  const auto a = backward(loss);
  const auto b = backward(loss);
  CHECK(tape.size() == n);
  CHECK(a.of(x) == b.of(x));
  CHECK(a.of(x)[0] == doctest::Approx(0.05));
  CHECK(a.of(x)[1] == doctest::Approx(0.25));
}

TEST_CASE("constants receive no gradient entry") {
  Tape<double> tape;
  auto c = tape.constant(Tensor<double>::scalar(1.0));
  auto x = tape.leaf(Tensor<double>::scalar(2.0), true, "x");
  const auto g = backward(mul(c, x));
  CHECK(g.size() == 1);
  CHECK(!g.contains("c"));
  CHECK(g.of(x).item() == 1.0);
}

TEST_CASE("shape mismatches are rejected") {
  Tape<double> tape;
  auto a = tape.leaf(Tensor<double>({2}), true);
  auto b = tape.leaf(Tensor<double>({3}), true);
  CHECK_THROWS_AS(add(a, b), DimensionError);
}

TEST_CASE("same-padded convolution matches a direct sum") {
  Tensor<double> in({1, 1, 3, 3, 3});
  for (std::int64_t i = 0; i < in.numel(); ++i) in[i] = static_cast<double>(i % 7) - 2.0;
  Tensor<double> k({1, 1, 3, 3, 3});
  for (std::int64_t i = 0; i < k.numel(); ++i) k[i] = 0.1 * static_cast<double>(i % 5);
  Tape<double> tape;
  auto out = conv3d(tape.constant(in), tape.constant(k), std::optional<Var<double>>{}, 1, Padding::kSame);
  REQUIRE(out.shape() == Shape{1, 1, 3, 3, 3});
  for (int d = 0; d < 3; ++d)
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 3; ++w) {
        double s = 0.0;
        for (int a = -1; a <= 1; ++a)
          for (int b = -1; b <= 1; ++b)
            for (int c = -1; c <= 1; ++c) {
              const int z = d + a, y = h + b, x = w + c;
              if (z < 0 || y < 0 || x < 0 || z > 2 || y > 2 || x > 2) continue;
              s += in[(z * 3 + y) * 3 + x] * k[((a + 1) * 3 + b + 1) * 3 + c + 1];
            }
        CHECK(out.value()[(d * 3 + h) * 3 + w] == doctest::Approx(s));
      }
}

TEST_CASE("zero displacement warp is the identity") {
  Tensor<float> v({1, 4, 4, 4});
  for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = static_cast<float>(i);
  CHECK(kernels::warp(v, Tensor<float>({3, 4, 4, 4}), 1.0) == v);
  Tensor<float> shift({3, 4, 4, 4});
  for (std::int64_t i = 2 * 64; i < 3 * 64; ++i) shift[i] = 2.0f;  // one voxel along w at 2 mm spacing
  const auto s = kernels::warp(v, shift, 2.0);
  CHECK(s[0] == v[1]);
  CHECK(s[3] == v[3]);  // clamped at the edge
}
