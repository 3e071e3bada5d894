#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "dlsn/tensor.hpp"
#include "test_util.hpp"

using namespace dlsn;
using dlsn::testing::naive_conv;
using dlsn::testing::random_conv;
using dlsn::testing::random_map;
using dlsn::testing::random_matrix;

TEST_CASE("matmul identity and zero") {
  Xoshiro256 rng(1);
  const Matrix b = random_matrix(3, 5, rng);
  CHECK(matmul<double>(Matrix::Identity(3, 3), b) == b);
  CHECK(matmul<double>(Matrix::Zero(4, 3), b).isZero(0.0));
}

TEST_CASE("matmul matches triple loop") {
  Xoshiro256 rng(2);
  const Matrix a = random_matrix(2, 3, rng), b = random_matrix(3, 2, rng);
  Matrix expected = Matrix::Zero(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 3; ++k) expected(i, j) += a(i, k) * b(k, j);
  CHECK((matmul(a, b) - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("matmul rejects mismatched inner dimension") {
  CHECK_THROWS_AS(matmul<double>(Matrix::Zero(2, 3), Matrix::Zero(2, 3)), InvalidArgument);
}

TEST_CASE("matmul associativity") {
  Xoshiro256 rng(3);
  for (int t = 0; t < 50; ++t) {
    const Matrix a = random_matrix(4, 6, rng), b = random_matrix(6, 5, rng), c = random_matrix(5, 3, rng);
    const Matrix left = matmul<double>(matmul(a, b), c), right = matmul<double>(a, matmul(b, c));
    CHECK((left - right).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, left.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("conv identity kernel reproduces input") {
  Xoshiro256 rng(4);
  const FeatureMap x = random_map(3, 5, 6, rng);
  Conv3x3 k(3, 3);
  for (int c = 0; c < 3; ++c) k.at(c, c, 1, 1) = 1.0;
  CHECK(conv2d_3x3(x, k) == x);
}

TEST_CASE("conv zero kernel yields bias") {
  Xoshiro256 rng(5);
  const FeatureMap x = random_map(2, 4, 4, rng);
  Conv3x3 k(3, 2);
  k.bias << 0.5, -1.25, 3.0;
  const FeatureMap y = conv2d_3x3(x, k);
  for (int o = 0; o < 3; ++o) CHECK((y.values().row(o).array() == k.bias(o, 0)).all());
}

TEST_CASE("conv matches six-loop reference on 4x4") {
  Xoshiro256 rng(6);
  const FeatureMap x = random_map(1, 4, 4, rng);
  const Conv3x3 k = random_conv(1, 1, rng);
  CHECK((conv2d_3x3(x, k).values() - naive_conv(x, k).values()).cwiseAbs().maxCoeff() < 1e-14);
  const FeatureMap x3 = random_map(3, 5, 7, rng);
  const Conv3x3 k3 = random_conv(4, 3, rng);
  CHECK((conv2d_3x3(x3, k3).values() - naive_conv(x3, k3).values()).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("conv rejects channel mismatch") {
  CHECK_THROWS_AS(conv2d_3x3(FeatureMap(2, 3, 3), Conv3x3(1, 3)), InvalidArgument);
}

TEST_CASE("conv linearity") {
  Xoshiro256 rng(7);
  for (int t = 0; t < 20; ++t) {
    const FeatureMap x = random_map(3, 6, 5, rng), y = random_map(3, 6, 5, rng);
    const Conv3x3 k = random_conv(2, 3, rng);
    FeatureMap bias_only(2, 6, 5);
    bias_only.values().colwise() += k.bias.col(0);
    const Matrix lhs = conv2d_3x3(x + y, k).values();
    const Matrix rhs = conv2d_3x3(x, k).values() + conv2d_3x3(y, k).values() - bias_only.values();
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("conv backward is the adjoint") {
  // <conv(x) - b, dy> == <x, dx> + <W, dW> split: check dx and dW against finite differences of a bilinear form
  Xoshiro256 rng(8);
  const FeatureMap x = random_map(2, 4, 5, rng), dy = random_map(3, 4, 5, rng);
  Conv3x3 k = random_conv(3, 2, rng);
  const auto g = conv2d_3x3_backward(x, k, dy);
  auto loss = [&](const FeatureMap& in, const Conv3x3& kk) { return conv2d_3x3(in, kk).values().cwiseProduct(dy.values()).sum(); };
  // The loss is affine in each argument, so one-sided differences are exact up to rounding.
  for (Eigen::Index e = 0; e < x.size(); e += 3) {
    FeatureMap xp = x;
    xp.data()[e] += 1.0;
    CHECK(loss(xp, k) - loss(x, k) == doctest::Approx(g.input.data()[e]).epsilon(1e-9));
  }
  for (Eigen::Index e = 0; e < k.weight.size(); e += 5) {
    Conv3x3 kp = k;
    kp.weight.data()[e] += 1.0;
    CHECK(loss(x, kp) - loss(x, k) == doctest::Approx(g.kernel.weight.data()[e]).epsilon(1e-9));
  }
  CHECK(g.kernel.bias(1, 0) == doctest::Approx(dy.values().row(1).sum()));
}

TEST_CASE("softmax rows") {
  Matrix uniform = Matrix::Constant(1, 5, 0.3);
  CHECK((softmax_rows(uniform).array() - 0.2).abs().maxCoeff() < 1e-15);

  Matrix two(1, 2);
  two << 0.0, std::log(2.0);
  const Matrix p = softmax_rows(two);
  CHECK(p(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(p(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));

  Xoshiro256 rng(9);
  const Matrix s = random_matrix(4, 7, rng);
  const Matrix shifted = (s.array() + 7.3).matrix();
  CHECK((softmax_rows(s) - softmax_rows(shifted)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("softmax rows sum to one including extreme entries") {
  Xoshiro256 rng(10);
  for (int t = 0; t < 1000; ++t) {
    const Eigen::Index n = 1 + Eigen::Index(rng.below(40));
    Matrix row(1, n);
    for (Eigen::Index j = 0; j < n; ++j) row(0, j) = rng.uniform(-700.0, 700.0);
    const Matrix p = softmax_rows(row);
    CHECK(p.allFinite());
    CHECK((p.array() >= 0.0).all());
    CHECK(std::abs(p.sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("pixel shuffle") {
  Xoshiro256 rng(11);
  const FeatureMap x = random_map(12, 5, 7, rng);
  CHECK(pixel_shuffle(x, 1) == x);
  const FeatureMap y = pixel_shuffle(x, 2);
  CHECK(y.channels() == 3);
  CHECK(y.height() == 10);
  CHECK(y.width() == 14);
  CHECK_THROWS_AS(pixel_shuffle(FeatureMap(6, 2, 2), 2), InvalidArgument);
}

TEST_CASE("pixel shuffle literal index map") {
  // channel k is constant 10*k + 1; output pixel (2i+a, 2j+b) must come from channel 2a+b
  FeatureMap x(4, 2, 2);
  for (int k = 0; k < 4; ++k) x.values().row(k).setConstant(10.0 * k + 1.0);
  const FeatureMap y = pixel_shuffle(x, 2);
  const double expected[4][4] = {{1, 11, 1, 11}, {21, 31, 21, 31}, {1, 11, 1, 11}, {21, 31, 21, 31}};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) CHECK(y(0, r, c) == expected[r][c]);
}

TEST_CASE("pixel shuffle inverse is exact") {
  Xoshiro256 rng(12);
  for (int s : {1, 2, 3, 4}) {
    const FeatureMap x = random_map(2 * s * s, 3, 4, rng);
    CHECK(pixel_unshuffle(pixel_shuffle(x, s), s) == x);
  }
}

TEST_CASE("relu") {
  Matrix v(1, 3);
  v << -1.0, 0.0, 2.0;
  const FeatureMap x(v, 1, 3);
  const FeatureMap y = relu(x);
  CHECK(y(0, 0, 0) == 0.0);
  CHECK(y(0, 0, 1) == 0.0);
  CHECK(y(0, 0, 2) == 2.0);
  CHECK(relu(FeatureMap(Matrix::Constant(2, 4, -3.0), 2, 2)).values().isZero(0.0));
  const FeatureMap pos(Matrix::Constant(2, 4, 0.5), 2, 2);
  CHECK(relu(pos) == pos);
}

TEST_CASE("feature map rejects inconsistent data") {
  CHECK_THROWS_AS(FeatureMap(Matrix::Zero(2, 5), 2, 2), InvalidArgument);
  CHECK_THROWS_AS(FeatureMap(0, 2, 2), InvalidArgument);
}
