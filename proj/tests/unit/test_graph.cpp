#include <cmath>
#include <vector>

#include "doctest.h"

#include "core/error.hpp"
#include "core/graph.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

using namespace pistm;

TEST_CASE("matmul matches hand-computed product") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {0, 1, 1, 0});
  Tensor c = matmul(a, b);
  CHECK(c.at(0, 0) == 2.0);
  CHECK(c.at(0, 1) == 1.0);
  CHECK(c.at(1, 0) == 4.0);
  CHECK(c.at(1, 1) == 3.0);
}

TEST_CASE("matmul rectangular shapes and contract errors") {
  Tensor a({2, 3}, {1, 0, 2, 0, 1, -1});
  Tensor b({3, 1}, {3, 4, 5});
  Tensor c = matmul(a, b);
  CHECK(c.dim(0) == 2);
  CHECK(c.dim(1) == 1);
  CHECK(c[0] == doctest::Approx(13.0));  // 1*3 + 0*4 + 2*5
  CHECK(c[1] == doctest::Approx(-1.0));  // 0*3 + 1*4 - 1*5

  Tensor bad({2, 2});
  CHECK_THROWS_AS(matmul(a, bad), ShapeError);
}

TEST_CASE("conv output extent arithmetic") {
  CHECK(conv_output_extent(64, 4, 2, 1) == 32);
  CHECK(conv_output_extent(80, 4, 2, 1) == 40);
  CHECK(conv_output_extent(5, 3, 1, 1) == 5);
  CHECK(conv_output_extent(4, 2, 2, 0) == 2);
  CHECK(conv_output_extent(4, 3, 1, 0) == 2);
  // (7 - 2 + 0) / 2 is not integral
  CHECK_THROWS_AS(conv_output_extent(7, 2, 2, 0), ShapeError);
  // odd kernel, even input, stride 2: numerator is odd for any padding
  CHECK_THROWS_AS(conv_output_extent(64, 3, 2, 1), ShapeError);
}

TEST_CASE("conv2d identity kernel reproduces input") {
  Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor k({1, 1, 1, 1}, {1.0});
  Tensor y = conv2d(x, k, 1, 0);
  REQUIRE(y.size() == 9);
  for (std::size_t i = 0; i < 9; ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv2d averaging kernel on a constant field") {
  Tensor x = Tensor::full({1, 1, 4, 4}, 2.0);
  Tensor k = Tensor::full({1, 1, 2, 2}, 0.25);
  Tensor y = conv2d(x, k, 2, 0);
  CHECK(y.dim(2) == 2);
  CHECK(y.dim(3) == 2);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(2.0));
}

TEST_CASE("conv2d hand-computed ramp with stride 2 and zero padding") {
  // 4x4 ramp 0..15, kernel [[1,0],[0,1]] (main-diagonal sum), stride 2, pad 0.
  Tensor x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  Tensor k({1, 1, 2, 2}, {1, 0, 0, 1});
  Tensor y = conv2d(x, k, 2, 0);
  // windows at (0,0),(0,2),(2,0),(2,2): 0+5, 2+7, 8+13, 10+15
  CHECK(y[0] == 5.0);
  CHECK(y[1] == 9.0);
  CHECK(y[2] == 21.0);
  CHECK(y[3] == 25.0);
}

TEST_CASE("conv2d zero padding contributes zeros at the border") {
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor y = conv2d(x, k, 1, 1);
  REQUIRE(y.dim(2) == 2);
  REQUIRE(y.dim(3) == 2);
  // each output sums the in-bounds entries of its 3x3 window
  CHECK(y.at(0, 0, 0, 0) == 10.0);
  CHECK(y.at(0, 0, 0, 1) == 10.0);
  CHECK(y.at(0, 0, 1, 0) == 10.0);
  CHECK(y.at(0, 0, 1, 1) == 10.0);
}

TEST_CASE("conv2d multi-channel accumulation") {
  // two input channels, kernel weights channel 0 by 1 and channel 1 by 10
  Tensor x({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor k({1, 2, 1, 1}, {1.0, 10.0});
  Tensor y = conv2d(x, k, 1, 0);
  CHECK(y[0] == doctest::Approx(51.0));
  CHECK(y[1] == doctest::Approx(62.0));
  CHECK(y[2] == doctest::Approx(73.0));
  CHECK(y[3] == doctest::Approx(84.0));
}

TEST_CASE("adjoint identity: <conv(x), y> == <x, adjoint(y)>") {
  Rng rng = make_rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_normal({2, 3, 8, 8}, rng);
    Tensor k = random_normal({4, 3, 4, 4}, rng);
    Tensor y = conv2d(x, k, 2, 1);
    Tensor cotangent = random_normal(y.dims(), rng);
    Tensor xbar = conv2d_adjoint(cotangent, k, 2, 1, 8, 8);
    double lhs = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * cotangent[i];
    double rhs = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * xbar[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("graph forward evaluates a two-layer perceptron") {
  Graph g;
  NodeId x = g.add_input(Tensor({1, 2}));
  NodeId w1 = g.add_param(Tensor({2, 3}, {1, 0, 1, 0, 1, -1}));
  NodeId b1 = g.add_param(Tensor({3}, {0.5, -0.5, 0.0}));
  NodeId h = g.tanh(g.add_bias(g.matmul(x, w1), b1));
  NodeId w2 = g.add_param(Tensor({3, 1}, {1, 1, 1}));
  NodeId out = g.matmul(h, w2);

  g.set_input(x, Tensor({1, 2}, {1.0, 2.0}));
  g.forward();
  const Tensor& y = g.value(out);
  const double h0 = std::tanh(1.0 + 0.5);
  const double h1 = std::tanh(2.0 - 0.5);
  const double h2 = std::tanh(1.0 - 2.0);
  CHECK(y[0] == doctest::Approx(h0 + h1 + h2));
}

TEST_CASE("graph rejects input shape mismatch and non-scalar loss root") {
  Graph g;
  NodeId x = g.add_input(Tensor({2, 2}));
  NodeId w = g.add_param(Tensor::identity(2));
  NodeId y = g.matmul(x, w);
  CHECK_THROWS_AS(g.set_input(x, Tensor({3, 2})), ShapeError);
  g.set_input(x, Tensor({2, 2}, {1, 2, 3, 4}));
  g.forward();
  CHECK_THROWS_AS(g.backward(y), ContractError);
}

TEST_CASE("mean_square is the mean of squared entries") {
  Graph g;
  NodeId x = g.add_input(Tensor({2, 2}));
  NodeId loss = g.mean_square(x);
  g.set_input(x, Tensor({2, 2}, {1, 2, 3, 4}));
  g.forward();
  CHECK(g.value(loss)[0] == doctest::Approx((1.0 + 4.0 + 9.0 + 16.0) / 4.0));
}

TEST_CASE("validate flags unreachable parameters") {
  Graph g;
  NodeId x = g.add_input(Tensor({1, 2}));
  NodeId w = g.add_param(Tensor({2, 2}));
  g.add_param(Tensor({1, 1}));  // orphan
  NodeId loss = g.mean_square(g.matmul(x, w));
  CHECK_THROWS_AS(g.validate(loss), ContractError);
}

TEST_CASE("backward accumulates when a node feeds two consumers") {
  // f = mean((w+w)^2) = mean(4 w^2), so df/dw_j = 8 w_j / n
  Graph g;
  NodeId w = g.add_param(Tensor({2}, {1.0, -2.0}));
  NodeId s = g.add(w, w);
  NodeId loss = g.mean_square(s);
  g.forward();
  g.backward(loss);
  const Tensor& grad = g.grad(w);
  CHECK(grad[0] == doctest::Approx(8.0 * 1.0 / 2.0));
  CHECK(grad[1] == doctest::Approx(8.0 * -2.0 / 2.0));
}

TEST_CASE("scale and sub ops") {
  Graph g;
  NodeId a = g.add_input(Tensor({3}));
  NodeId b = g.add_input(Tensor({3}));
  NodeId d = g.scale(g.sub(a, b), 2.0);
  g.set_input(a, Tensor({3}, {1, 2, 3}));
  g.set_input(b, Tensor({3}, {3, 2, 1}));
  g.forward();
  const Tensor& y = g.value(d);
  CHECK(y[0] == -4.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 4.0);
}

TEST_CASE("channel bias broadcasts over batch and spatial axes") {
  Graph g;
  NodeId x = g.add_input(Tensor({2, 2, 2, 2}));
  NodeId b = g.add_param(Tensor({2}, {10.0, 20.0}));
  NodeId y = g.add_bias(x, b);
  g.set_input(x, Tensor::zeros({2, 2, 2, 2}));
  g.forward();
  const Tensor& v = g.value(y);
  CHECK(v.at(0, 0, 1, 1) == 10.0);
  CHECK(v.at(1, 1, 0, 0) == 20.0);
}
