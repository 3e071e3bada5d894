#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "dlsn/gla.hpp"
#include "gla_oracle.hpp"
#include "test_util.hpp"

using namespace dlsn;
using namespace dlsn::testing;

namespace {

GlaParams small_params(int c, int l, int h, std::uint64_t seed, double lss_scale = 0.3) {
  GlaParams p = init_gla_params(c, l, h, seed);
  Xoshiro256 rng(seed + 1000);
  p.qk_conv = random_conv(c, c, rng, 0.25);
  p.v_conv = random_conv(c, c, rng, 0.25);
  p.l_conv = random_conv(c, c, rng, 0.25);
  p.w1 = random_matrix(l, c, rng, lss_scale);
  p.b1 = random_matrix(l, 1, rng, lss_scale);
  p.w2 = random_matrix(l, l, rng, lss_scale);
  p.b2 = random_matrix(l, 1, rng, lss_scale);
  return p;
}

void zero_lss(GlaParams& p) {
  p.w1.setZero();
  p.b1.setZero();
  p.w2.setZero();
  p.b2.setZero();
}

std::vector<std::uint8_t> no_mask(std::size_t n) { return std::vector<std::uint8_t>(n, 0); }

}  // namespace

TEST_CASE("score_fixed") {
  Matrix q(2, 2);
  q << 1, 1, 0, 1;  // columns [1,0] and [1,1]
  Matrix expected(2, 2);
  expected << 1, 1, 1, 2;
  CHECK(score_fixed(q) == expected);

  Xoshiro256 rng(1);
  const Matrix r = random_matrix(5, 7, rng);
  const Matrix s = score_fixed(r);
  CHECK(s == s.transpose());
  for (int j = 0; j < 7; ++j) CHECK(s(j, j) == doctest::Approx(r.col(j).squaredNorm()).epsilon(1e-14));
}

TEST_CASE("score_learnable") {
  Xoshiro256 rng(2);
  GlaParams p = small_params(3, 4, 1, 5);
  const Matrix f = random_matrix(3, 4, rng);
  p.w2.setZero();
  p.b2.setZero();
  CHECK(score_learnable(f, p).isZero(0.0));

  zero_lss(p);
  p.b2 << 1, -2, 3, 0.5;
  const Matrix s = score_learnable(f, p);
  for (int j = 0; j < 4; ++j) CHECK(s.col(j) == p.b2);

  GlaParams q(2, 2, 1);
  q.w1 << 1, -1, 0.5, 2;
  q.b1 << 0.1, -3;
  q.w2 << 2, 1, -1, 4;
  q.b2 << 0, 1;
  Matrix l(2, 2);
  l << 1, 0, 2, 1;  // columns [1,2], [0,1]
  // column 0: hidden = relu([1-2+0.1, 0.5+4-3]) = [0, 1.5]; scores = [1.5, 6+1]
  // column 1: hidden = relu([-1+0.1, 2-3]) = [0, 0]; scores = [0, 1]
  const Matrix out = score_learnable(l, q);
  CHECK(out(0, 0) == doctest::Approx(1.5));
  CHECK(out(1, 0) == doctest::Approx(7.0));
  CHECK(out(0, 1) == doctest::Approx(0.0));
  CHECK(out(1, 1) == doctest::Approx(1.0));

  CHECK_THROWS_AS(score_learnable(random_matrix(3, 3, rng), small_params(3, 4, 1, 1)), InvalidArgument);
}

TEST_CASE("attend_bucket singleton returns its value") {
  GlaParams p = small_params(3, 1, 1, 7);
  Xoshiro256 rng(3);
  const Matrix q = random_matrix(3, 1, rng), l = random_matrix(3, 1, rng), v = random_matrix(3, 1, rng);
  const auto att = attend_bucket(q, l, v, no_mask(1), p);
  CHECK((att.values - v).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("attend_bucket matches explicit loops") {
  const GlaParams p = small_params(2, 3, 1, 9);
  Xoshiro256 rng(4);
  const Matrix q = random_matrix(2, 3, rng), l = random_matrix(2, 3, rng), v = random_matrix(2, 3, rng);
  const auto att = attend_bucket(q, l, v, no_mask(3), p);
  for (int i = 0; i < 3; ++i) {
    const Vec learn = lss_scores({l(0, i), l(1, i)}, p);
    double s[3], peak = -1e300, total = 0.0, raw = 0.0;
    for (int j = 0; j < 3; ++j) {
      s[j] = q(0, i) * q(0, j) + q(1, i) * q(1, j) + learn[std::size_t(j)];
      peak = std::max(peak, s[j]);
      raw += s[j];
    }
    for (double e : s) total += std::exp(e - peak);
    for (int d = 0; d < 2; ++d) {
      double expected = 0.0;
      for (int j = 0; j < 3; ++j) expected += std::exp(s[j] - peak) / total * v(d, j);
      CHECK(att.values(d, i) == doctest::Approx(expected).epsilon(1e-13));
    }
    CHECK(att.score_sums[std::size_t(i)] == doctest::Approx(raw).epsilon(1e-13));
    CHECK(std::abs(att.probabilities.col(i).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("attend_bucket rejects an all-padding bucket") {
  const GlaParams p = small_params(2, 2, 1, 1);
  CHECK_THROWS_AS(attend_bucket(Matrix::Zero(2, 2), Matrix::Zero(2, 2), Matrix::Zero(2, 2),
                                std::vector<std::uint8_t>{1, 1}, p),
                  InvalidArgument);
}

TEST_CASE("padding is inert bit for bit") {
  const int c = 3, l = 4;
  const GlaParams p = small_params(c, l, 1, 21);
  Xoshiro256 rng(5);
  const Matrix q = random_matrix(c, l, rng), lf = random_matrix(c, l, rng);
  const Matrix keys = random_matrix(c, l, rng), values = random_matrix(c, l, rng);
  std::vector<std::uint8_t> mask = {0, 0, 1, 0};
  const auto base = attend_window(q, keys, lf, values, mask, p);

  Matrix keys2(c, 2 * l), values2(c, 2 * l);
  keys2 << keys, random_matrix(c, l, rng);
  values2 << values, random_matrix(c, l, rng);
  std::vector<std::uint8_t> mask2 = mask;
  mask2.insert(mask2.end(), std::size_t(l), 1);
  const auto padded = attend_window(q, keys2, lf, values2, mask2, p);
  CHECK(padded.values == base.values);
  CHECK(padded.score_sums == base.score_sums);
  CHECK(padded.probabilities.bottomRows(l).isZero(0.0));
}

TEST_CASE("round weights") {
  CHECK(round_weights({{1.0, -2.0, 0.0}}) == RoundWeights{{1.0, 1.0, 1.0}});
  const auto w = round_weights({{2.0}, {6.0}});
  CHECK(w[0][0] == doctest::Approx(0.25));
  CHECK(w[1][0] == doctest::Approx(0.75));

  Xoshiro256 rng(6);
  for (std::size_t h = 1; h <= 4; ++h) {
    std::vector<std::vector<double>> sums(h, std::vector<double>(50));
    for (auto& r : sums)
      for (double& s : r) s = rng.uniform(-5.0, 5.0);
    const auto ww = round_weights(sums);
    for (std::size_t i = 0; i < 50; ++i) {
      double denom = 0.0, total = 0.0;
      for (std::size_t r = 0; r < h; ++r) denom += sums[r][i];
      for (std::size_t r = 0; r < h; ++r) {
        CHECK(ww[r][i] == doctest::Approx(sums[r][i] / denom).epsilon(1e-12));
        total += ww[r][i];
      }
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
  }
  const auto degenerate = round_weights({{1.0}, {-1.0}, {0.0}});
  for (const auto& r : degenerate) CHECK(r[0] == 1.0 / 3.0);
}

TEST_CASE("gla_forward reduces to dense attention") {
  Xoshiro256 rng(7);
  for (int t = 0; t < 5; ++t) {
    const FeatureMap x = random_map(4, 4, 5, rng);
    GlaParams p = small_params(4, 20, 1, 100 + std::uint64_t(t));
    zero_lss(p);
    const auto plan = gla_plan(x, p, make_bases(2, 4, 1, 9, std::uint64_t(t)));
    const FeatureMap out = gla_forward(x, p, plan);
    CHECK(out.same_shape(x));
    CHECK((out.values() - dense_attention_oracle(x, p).values()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("gla_forward matches the exhaustive hashed oracle") {
  Xoshiro256 rng(8);
  const FeatureMap x = random_map(2, 4, 4, rng);
  const GlaParams p = small_params(2, 4, 2, 31);
  const auto bases = make_bases(2, 2, 2, 77, 0);
  const FeatureMap out = gla_forward(x, p, gla_plan(x, p, bases));
  CHECK((out.values() - hashed_attention_oracle(x, p, bases).values()).cwiseAbs().maxCoeff() < 1e-9);

  // uneven case with padding and three rounds
  const FeatureMap y = random_map(3, 3, 5, rng);
  const GlaParams p3 = small_params(3, 4, 3, 32);
  const auto bases3 = make_bases(3, 3, 3, 78, 0);
  const FeatureMap out3 = gla_forward(y, p3, gla_plan(y, p3, bases3));
  CHECK((out3.values() - hashed_attention_oracle(y, p3, bases3).values()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("gla_forward rejects a mismatched plan") {
  Xoshiro256 rng(9);
  const GlaParams p = small_params(2, 4, 1, 1);
  const FeatureMap x = random_map(2, 4, 4, rng), other = random_map(2, 3, 4, rng);
  const auto plan = gla_plan(other, p, make_bases(2, 2, 1, 1, 0));
  CHECK_THROWS_AS(gla_forward(x, p, plan), InvalidArgument);
}

TEST_CASE("attention columns normalize across rounds and chunks") {
  Xoshiro256 rng(10);
  const FeatureMap x = random_map(3, 6, 7, rng);
  const GlaParams p = small_params(3, 5, 2, 3);
  const auto plan = gla_plan(x, p, make_bases(3, 3, 2, 5, 0));
  const GlaForward fw = gla_forward_detailed(x, p, plan);
  for (std::size_t i = 0; i < fw.weights[0].size(); ++i)
    CHECK(std::abs(fw.weights[0][i] + fw.weights[1][i] - 1.0) < 1e-9);
}

TEST_CASE("mac counts follow the closed form") {
  Xoshiro256 rng(11);
  for (int side : {4, 8}) {
    const FeatureMap x = random_map(3, side, side, rng);
    const GlaParams p = small_params(3, 4, 2, 2);
    MacCounter macs;
    gla_forward(x, p, gla_plan(x, p, make_bases(2, 3, 2, 5, 0)), &macs);
    CHECK(macs.scoring == gla_scoring_macs(std::uint64_t(side * side), 4, 3, 2));
    CHECK(macs.aggregation == 2u * std::uint64_t(side * side) * 12u * 3u);
  }
  CHECK(gla_scoring_macs(2048, 32, 8, 3) == 2 * gla_scoring_macs(1024, 32, 8, 3));
}

TEST_CASE("gla_backward zero and linearity") {
  Xoshiro256 rng(12);
  const FeatureMap x = random_map(3, 4, 4, rng);
  const GlaParams p = small_params(3, 4, 2, 4);
  const auto plan = gla_plan(x, p, make_bases(2, 3, 2, 8, 0));
  const FeatureMap zero(3, 4, 4);
  const GlaGrad g0 = gla_backward(x, p, plan, zero);
  CHECK(g0.input.values().isZero(0.0));
  for (const Matrix* t : g0.params.tensors()) CHECK(t->isZero(0.0));

  const FeatureMap dy = random_map(3, 4, 4, rng);
  FeatureMap dy2 = dy;
  dy2.values() *= 2.0;
  const GlaGrad g1 = gla_backward(x, p, plan, dy), g2 = gla_backward(x, p, plan, dy2);
  CHECK((g2.input.values() - 2.0 * g1.input.values()).cwiseAbs().maxCoeff() < 1e-10);
  const auto t1 = g1.params.tensors(), t2 = g2.params.tensors();
  for (std::size_t k = 0; k < t1.size(); ++k) CHECK((*t2[k] - 2.0 * *t1[k]).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("gla gradient check on a 4x4x3 input") {
  Xoshiro256 rng(13);
  const FeatureMap x = random_map(3, 4, 4, rng);
  const GlaParams p = small_params(3, 4, 2, 6);
  const auto plan = gla_plan(x, p, make_bases(2, 3, 2, 10, 0));
  const GradCheckReport report = gla_grad_check(x, p, plan, 1e-5, 1e-4, 3);
  for (const auto& t : report.tensors) {
    INFO(t.name);
    CHECK(t.max_relative_error < 1e-4);
  }
  CHECK(report.passed());
  CHECK(report.tensors.size() == 11);

  const GradCheckReport coarse = gla_grad_check(x, p, plan, 1e-4, 1e-4, 3);
  CHECK(report.worst() <= 10.0 * std::max(coarse.worst(), 1e-12));
}

TEST_CASE("a dead hidden unit gives zero gradient in both routes") {
  Xoshiro256 rng(14);
  const FeatureMap x = random_map(2, 4, 4, rng);
  GlaParams p = small_params(2, 4, 1, 7);
  p.w1.row(1).setZero();
  p.b1(1, 0) = -1.0;  // hidden unit 1 is always off
  const auto plan = gla_plan(x, p, make_bases(2, 2, 1, 11, 0));
  const GlaGrad g = gla_backward(x, p, plan, random_map(2, 4, 4, rng));
  CHECK(g.params.w2.col(1).isZero(0.0));
  CHECK(gla_grad_check(x, p, plan, 1e-5, 1e-4, 1).passed());
}

TEST_CASE("scatter through the permutation restores original order") {
  // identity attention: v = x, queries orthogonal so each feature attends to itself
  const int n = 6;
  GlaParams p(n, 2, 1);
  FeatureMap x(n, 2, 3);
  for (int i = 0; i < n; ++i) x.values()(i, i) = 60.0;
  for (int c = 0; c < n; ++c) {
    p.qk_conv.at(c, c, 1, 1) = 1.0;
    p.v_conv.at(c, c, 1, 1) = 1.0;
  }
  const auto plan = gla_plan(x, p, make_bases(3, n, 1, 4, 0));
  const FeatureMap out = gla_forward(x, p, plan);
  CHECK((out.values() - x.values()).cwiseAbs().maxCoeff() < 1e-12);
}
