#include "dlsn/gla.hpp"

#include <cmath>
#include <limits>

#include "dlsn/random.hpp"

namespace dlsn {

GlaParams::GlaParams(int channels, int bucket, int hash_rounds)
    : gla_channels(channels),
      bucket_size(bucket),
      rounds(hash_rounds),
      qk_conv(channels, channels),
      v_conv(channels, channels),
      l_conv(channels, channels),
      w1(Matrix::Zero(bucket, channels)),
      b1(Matrix::Zero(bucket, 1)),
      w2(Matrix::Zero(bucket, bucket)),
      b2(Matrix::Zero(bucket, 1)) {
  require(channels >= 1 && bucket >= 1 && hash_rounds >= 1, "GlaParams: channels, bucket size and rounds must be >= 1");
}

std::vector<NamedTensor> GlaParams::tensors(const std::string& prefix) {
  return {{prefix + "qk_conv.weight", &qk_conv.weight}, {prefix + "qk_conv.bias", &qk_conv.bias},
          {prefix + "v_conv.weight", &v_conv.weight},   {prefix + "v_conv.bias", &v_conv.bias},
          {prefix + "l_conv.weight", &l_conv.weight},   {prefix + "l_conv.bias", &l_conv.bias},
          {prefix + "w1", &w1},                         {prefix + "b1", &b1},
          {prefix + "w2", &w2},                         {prefix + "b2", &b2}};
}

std::vector<const Matrix*> GlaParams::tensors() const {
  return {&qk_conv.weight, &qk_conv.bias, &v_conv.weight, &v_conv.bias, &l_conv.weight,
          &l_conv.bias,    &w1,           &b1,            &w2,           &b2};
}

void GlaParams::validate() const {
  const Eigen::Index c = gla_channels, l = bucket_size;
  require(c >= 1 && l >= 1 && rounds >= 1, "GlaParams: channels, bucket size and rounds must be >= 1");
  for (const Conv3x3* k : {&qk_conv, &v_conv, &l_conv})
    require(k->weight.rows() == c && k->weight.cols() == 9 * c && k->bias.rows() == c && k->bias.cols() == 1,
            "GlaParams: conv kernels must map gla_channels to gla_channels");
  require(w1.rows() == l && w1.cols() == c, "GlaParams: w1 must be bucket_size x gla_channels");
  require(b1.rows() == l && b1.cols() == 1, "GlaParams: b1 must be bucket_size x 1");
  require(w2.rows() == l && w2.cols() == l, "GlaParams: w2 must be bucket_size x bucket_size");
  require(b2.rows() == l && b2.cols() == 1, "GlaParams: b2 must be bucket_size x 1");
}

namespace {

void he_fill(Matrix& m, Eigen::Index fan_in, Xoshiro256& rng) {
  const double sd = std::sqrt(2.0 / double(fan_in));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
}

}  // namespace

GlaParams init_gla_params(int channels, int bucket, int hash_rounds, std::uint64_t seed) {
  GlaParams p(channels, bucket, hash_rounds);
  Xoshiro256 rng(seed);
  he_fill(p.qk_conv.weight, 9 * channels, rng);
  he_fill(p.v_conv.weight, 9 * channels, rng);
  he_fill(p.l_conv.weight, 9 * channels, rng);
  he_fill(p.w1, channels, rng);
  he_fill(p.w2, bucket, rng);
  return p;
}

std::uint64_t gla_scoring_macs(std::uint64_t n, std::uint64_t bucket, std::uint64_t channels, std::uint64_t rounds) {
  const std::uint64_t chunks = (n + bucket - 1) / bucket;
  const std::uint64_t l = bucket, c = channels;
  return rounds * chunks * (l * 3 * l * c + l * l * c + l * l * l);
}

Matrix score_fixed(const Matrix& q_bucket) {
  return q_bucket.transpose() * q_bucket;
}

namespace {

template <typename Scalar>
MatrixT<Scalar> learnable_scores(const MatrixT<Scalar>& l_bucket, const MatrixT<Scalar>& w1, const MatrixT<Scalar>& b1,
                                 const MatrixT<Scalar>& w2, const MatrixT<Scalar>& b2) {
  MatrixT<Scalar> hidden = w1 * l_bucket;
  hidden.colwise() += b1.col(0);
  MatrixT<Scalar> scores = w2 * relu(hidden);
  scores.colwise() += b2.col(0);
  return scores;
}

}  // namespace

Matrix score_learnable(const Matrix& l_bucket, const GlaParams& params) {
  require(l_bucket.rows() == params.w1.cols(), "score_learnable: feature dimension " +
                                                   std::to_string(l_bucket.rows()) + " does not match w1 columns " +
                                                   std::to_string(params.w1.cols()));
  require(l_bucket.cols() == params.bucket_size, "score_learnable: bucket has " + std::to_string(l_bucket.cols()) +
                                                     " columns, expected bucket_size " +
                                                     std::to_string(params.bucket_size));
  return learnable_scores(l_bucket, params.w1, params.b1, params.w2, params.b2);
}

LearnableScoreGrad score_learnable_backward(const Matrix& l_bucket, const GlaParams& params, const Matrix& dscores) {
  require(dscores.rows() == params.bucket_size && dscores.cols() == l_bucket.cols(),
          "score_learnable_backward: upstream gradient shape mismatch");
  Matrix pre = params.w1 * l_bucket;
  pre.colwise() += params.b1.col(0);
  LearnableScoreGrad g;
  g.w2 = dscores * relu(pre).transpose();
  g.b2 = dscores.rowwise().sum();
  const Matrix dpre = (pre.array() > 0.0).select(params.w2.transpose() * dscores, 0.0);
  g.w1 = dpre * l_bucket.transpose();
  g.b1 = dpre.rowwise().sum();
  g.features = params.w1.transpose() * dpre;
  return g;
}

namespace {

// Raw scores (keys x queries), with masked slots left at their computed value.
template <typename Scalar>
MatrixT<Scalar> raw_scores(const MatrixT<Scalar>& queries, const MatrixT<Scalar>& keys,
                           const MatrixT<Scalar>& learnable) {
  const MatrixT<Scalar> qt = queries.transpose();  // l x c, contiguous rows
  const MatrixT<Scalar> kt = keys.transpose();     // K x c
  const Eigen::Index l = queries.cols(), K = keys.cols(), c = queries.rows();
  MatrixT<Scalar> s(K, l);
  for (Eigen::Index j = 0; j < K; ++j) {
    const Scalar* kr = kt.row(j).data();
    for (Eigen::Index i = 0; i < l; ++i) {
      const Scalar* qr = qt.row(i).data();
      Scalar acc = 0;
      for (Eigen::Index d = 0; d < c; ++d) acc += kr[d] * qr[d];
      s(j, i) = acc + learnable(j % l, i);
    }
  }
  return s;
}

template <typename Scalar>
BucketAttentionT<Scalar> attend_scored(const MatrixT<Scalar>& queries, const MatrixT<Scalar>& keys,
                                       const MatrixT<Scalar>& learnable, const MatrixT<Scalar>& values,
                                       std::span<const std::uint8_t> key_mask, MacCounter* macs) {
  const Eigen::Index c = queries.rows(), l = queries.cols(), K = keys.cols();
  const MatrixT<Scalar> s = raw_scores(queries, keys, learnable);
  if (macs != nullptr) {
    macs->scoring += std::uint64_t(l * K * c + l * l * c + l * l * l);
    macs->aggregation += std::uint64_t(l * K * values.rows());
  }

  BucketAttentionT<Scalar> out;
  out.probabilities = MatrixT<Scalar>::Zero(K, l);
  out.values = MatrixT<Scalar>::Zero(values.rows(), l);
  out.score_sums.assign(std::size_t(l), 0.0);
  for (Eigen::Index i = 0; i < l; ++i) {
    Scalar peak = -std::numeric_limits<Scalar>::infinity();
    Scalar sum = 0;
    for (Eigen::Index j = 0; j < K; ++j) {
      if (key_mask[std::size_t(j)]) continue;
      peak = std::max(peak, s(j, i));
      sum += s(j, i);
    }
    out.score_sums[std::size_t(i)] = double(sum);
    Scalar total = 0;
    for (Eigen::Index j = 0; j < K; ++j) {
      if (key_mask[std::size_t(j)]) continue;
      const Scalar e = std::exp(s(j, i) - peak);
      out.probabilities(j, i) = e;
      total += e;
    }
    for (Eigen::Index j = 0; j < K; ++j) {
      if (key_mask[std::size_t(j)]) continue;
      out.probabilities(j, i) /= total;
      out.values.col(i) += out.probabilities(j, i) * values.col(j);
    }
  }
  return out;
}

}  // namespace

BucketAttention attend_window(const Matrix& queries, const Matrix& keys, const Matrix& l_features,
                              const Matrix& values, std::span<const std::uint8_t> key_mask, const GlaParams& params,
                              MacCounter* macs) {
  const Eigen::Index c = queries.rows(), l = queries.cols(), K = keys.cols();
  require(keys.rows() == c && values.cols() == K, "attend_window: keys/values shapes inconsistent with queries");
  require(l == params.bucket_size, "attend_window: query count must equal bucket_size");
  require(K % l == 0, "attend_window: key count must be a multiple of bucket_size");
  require(l_features.cols() == l, "attend_window: one learnable-score feature per query required");
  require(Eigen::Index(key_mask.size()) == K, "attend_window: mask length must equal key count");
  Eigen::Index live = 0;
  for (auto m : key_mask) live += m == 0;
  require(live > 0, "attend_window: every key slot is padding");
  return attend_scored(queries, keys, score_learnable(l_features, params), values, key_mask, macs);
}

BucketAttention attend_bucket(const Matrix& q_bucket, const Matrix& l_bucket, const Matrix& v_bucket,
                              std::span<const std::uint8_t> pad_mask, const GlaParams& params) {
  return attend_window(q_bucket, q_bucket, l_bucket, v_bucket, pad_mask, params);
}

RoundWeights round_weights(const std::vector<std::vector<double>>& score_sums) {
  require(!score_sums.empty(), "round_weights: need at least one round");
  const std::size_t h = score_sums.size(), n = score_sums.front().size();
  for (const auto& s : score_sums) require(s.size() == n, "round_weights: rounds differ in length");
  RoundWeights w(h, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t r = 0; r < h; ++r) denom += score_sums[r][i];
    for (std::size_t r = 0; r < h; ++r)
      w[r][i] = std::abs(denom) < 1e-12 ? 1.0 / double(h) : score_sums[r][i] / denom;
  }
  return w;
}

namespace {

// Slots and mask of one query chunk's context window. Slots of a chunk that
// already appears earlier in the window (clamping at either end) are masked
// so that every real key enters the softmax once.
struct Window {
  std::vector<int> queries;  // feature index or kPad, length l
  std::vector<int> keys;     // feature index or kPad, length 3l
  std::vector<std::uint8_t> mask;
};

Window make_window(const HashRound& round, int k) {
  Window w;
  w.queries = round.chunk(k);
  const auto chunks = round.window_chunks(k);
  for (int p = 0; p < 3; ++p) {
    const bool repeated = (p > 0 && chunks[p] == chunks[0]) || (p > 1 && chunks[p] == chunks[1]);
    for (int f : round.chunk(chunks[p])) {
      w.keys.push_back(f);
      w.mask.push_back(repeated || f == HashRound::kPad ? 1 : 0);
    }
  }
  return w;
}

template <typename Scalar>
MatrixT<Scalar> gather(const MatrixT<Scalar>& features, const std::vector<int>& index) {
  MatrixT<Scalar> g = MatrixT<Scalar>::Zero(features.rows(), Eigen::Index(index.size()));
  for (std::size_t j = 0; j < index.size(); ++j)
    if (index[j] != HashRound::kPad) g.col(Eigen::Index(j)) = features.col(index[j]);
  return g;
}

void scatter_add(Matrix& target, const Matrix& source, const std::vector<int>& index,
                 const std::vector<std::uint8_t>* skip = nullptr) {
  for (std::size_t j = 0; j < index.size(); ++j) {
    if (index[j] == HashRound::kPad || (skip != nullptr && (*skip)[j])) continue;
    target.col(index[j]) += source.col(Eigen::Index(j));
  }
}

void check_plan(Eigen::Index channels, Eigen::Index pixels, const GlaParams& params, const HashPlan& plan) {
  params.validate();
  require(channels == params.gla_channels, "gla: input has " + std::to_string(channels) +
                                                   " channels, block expects " + std::to_string(params.gla_channels));
  require(plan.round_count() >= 1, "gla: hashing plan has no rounds");
  for (const auto& round : plan.rounds) {
    require(round.feature_count() == pixels, "gla: plan covers " + std::to_string(round.feature_count()) +
                                                 " features, input has " + std::to_string(pixels));
    require(round.bucket_size == params.bucket_size, "gla: plan bucket size differs from block bucket size");
  }
}

}  // namespace

Matrix gla_query_features(const FeatureMap& x, const GlaParams& params) {
  return conv2d_3x3(x, params.qk_conv).values();
}

HashPlan gla_plan(const FeatureMap& x, const GlaParams& params, const std::vector<OrthoBasis>& bases) {
  return build_plan(gla_query_features(x, params), bases, params.bucket_size);
}

template <typename Scalar>
GlaForwardT<Scalar> gla_forward_detailed(const FeatureMapT<Scalar>& x, const GlaParams& params, const HashPlan& plan,
                                         MacCounter* macs, const RoundWeights* frozen_weights) {
  check_plan(x.channels(), x.pixels(), params, plan);
  using M = MatrixT<Scalar>;
  const auto& w1 = as_scalar<Scalar>(params.w1);
  const auto& b1 = as_scalar<Scalar>(params.b1);
  const auto& w2 = as_scalar<Scalar>(params.w2);
  const auto& b2 = as_scalar<Scalar>(params.b2);
  GlaForwardT<Scalar> fw;
  fw.q = conv2d_3x3(x, as_scalar<Scalar>(params.qk_conv)).values();
  fw.l = conv2d_3x3(x, as_scalar<Scalar>(params.l_conv)).values();
  fw.v = conv2d_3x3(x, as_scalar<Scalar>(params.v_conv)).values();
  const Eigen::Index c = x.channels(), n = x.pixels();

  for (const auto& round : plan.rounds) {
    M out = M::Zero(c, n);
    std::vector<double> sums(std::size_t(n), 0.0);
    for (int k = 0; k < round.chunk_count(); ++k) {
      const Window w = make_window(round, k);
      const M learnable = learnable_scores(gather(fw.l, w.queries), w1, b1, w2, b2);
      const BucketAttentionT<Scalar> att = attend_scored(gather(fw.q, w.queries), gather(fw.q, w.keys), learnable,
                                                         gather(fw.v, w.keys), w.mask, macs);
      for (std::size_t i = 0; i < w.queries.size(); ++i) {
        const int f = w.queries[i];
        if (f == HashRound::kPad) continue;
        out.col(f) = att.values.col(Eigen::Index(i));
        sums[std::size_t(f)] = att.score_sums[i];
      }
    }
    fw.round_outputs.push_back(std::move(out));
    fw.score_sums.push_back(std::move(sums));
  }

  if (frozen_weights != nullptr) {
    require(frozen_weights->size() == plan.rounds.size(), "gla: frozen weights have the wrong round count");
    for (const auto& w : *frozen_weights) require(Eigen::Index(w.size()) == n, "gla: frozen weights length mismatch");
    fw.weights = *frozen_weights;
  } else {
    fw.weights = round_weights(fw.score_sums);
  }

  M merged = M::Zero(c, n);
  for (std::size_t r = 0; r < fw.round_outputs.size(); ++r)
    for (Eigen::Index i = 0; i < n; ++i)
      merged.col(i) += Scalar(fw.weights[r][std::size_t(i)]) * fw.round_outputs[r].col(i);
  fw.output = FeatureMapT<Scalar>(std::move(merged), x.height(), x.width());
  return fw;
}

template GlaForwardT<double> gla_forward_detailed(const FeatureMapT<double>&, const GlaParams&, const HashPlan&,
                                                  MacCounter*, const RoundWeights*);
template GlaForwardT<Extended> gla_forward_detailed(const FeatureMapT<Extended>&, const GlaParams&, const HashPlan&,
                                                    MacCounter*, const RoundWeights*);

FeatureMap gla_forward(const FeatureMap& x, const GlaParams& params, const HashPlan& plan, MacCounter* macs,
                       const RoundWeights* frozen_weights) {
  return gla_forward_detailed(x, params, plan, macs, frozen_weights).output;
}

GlaGrad gla_backward(const FeatureMap& x, const GlaParams& params, const HashPlan& plan, const FeatureMap& dy,
                     const RoundWeights* frozen_weights) {
  require(dy.same_shape(x), "gla_backward: upstream gradient shape differs from input");
  const GlaForward fw = gla_forward_detailed(x, params, plan, nullptr, frozen_weights);
  const Eigen::Index c = x.channels(), n = x.pixels(), l = params.bucket_size;

  GlaGrad grad;
  grad.params = GlaParams(params.gla_channels, params.bucket_size, params.rounds);
  Matrix dq = Matrix::Zero(c, n), dl = Matrix::Zero(c, n), dv = Matrix::Zero(c, n);

  for (std::size_t r = 0; r < plan.rounds.size(); ++r) {
    const HashRound& round = plan.rounds[r];
    for (int k = 0; k < round.chunk_count(); ++k) {
      const Window w = make_window(round, k);
      const Matrix queries = gather(fw.q, w.queries);
      const Matrix keys = gather(fw.q, w.keys);
      const Matrix lfeat = gather(fw.l, w.queries);
      const Matrix values = gather(fw.v, w.keys);
      const BucketAttention att = attend_window(queries, keys, lfeat, values, w.mask, params);
      const Eigen::Index K = keys.cols();

      Matrix dout = Matrix::Zero(c, l);
      for (Eigen::Index i = 0; i < l; ++i) {
        const int f = w.queries[std::size_t(i)];
        if (f != HashRound::kPad) dout.col(i) = fw.weights[r][std::size_t(f)] * dy.values().col(f);
      }

      // values and softmax
      const Matrix dp = values.transpose() * dout;           // K x l
      const Matrix dvalues = dout * att.probabilities.transpose();  // c x K
      Matrix ds = Matrix::Zero(K, l);
      for (Eigen::Index i = 0; i < l; ++i) {
        const double inner = att.probabilities.col(i).dot(dp.col(i));
        for (Eigen::Index j = 0; j < K; ++j)
          if (!w.mask[std::size_t(j)]) ds(j, i) = att.probabilities(j, i) * (dp(j, i) - inner);
      }

      // fixed scores s = keys^T queries
      const Matrix dqueries = keys * ds;              // c x l
      const Matrix dkeys = queries * ds.transpose();  // c x K

      // learnable scores, tiled over the window
      Matrix dsl = Matrix::Zero(l, l);
      for (Eigen::Index j = 0; j < K; ++j) dsl.row(j % l) += ds.row(j);
      const LearnableScoreGrad lg = score_learnable_backward(lfeat, params, dsl);
      grad.params.w1 += lg.w1;
      grad.params.b1 += lg.b1;
      grad.params.w2 += lg.w2;
      grad.params.b2 += lg.b2;

      scatter_add(dq, dqueries, w.queries);
      scatter_add(dq, dkeys, w.keys, &w.mask);
      scatter_add(dv, dvalues, w.keys, &w.mask);
      scatter_add(dl, lg.features, w.queries);
    }
  }

  const auto gq = conv2d_3x3_backward(x, params.qk_conv, FeatureMap(dq, x.height(), x.width()));
  const auto gl = conv2d_3x3_backward(x, params.l_conv, FeatureMap(dl, x.height(), x.width()));
  const auto gv = conv2d_3x3_backward(x, params.v_conv, FeatureMap(dv, x.height(), x.width()));
  grad.params.qk_conv = gq.kernel;
  grad.params.l_conv = gl.kernel;
  grad.params.v_conv = gv.kernel;
  grad.input = gq.input;
  grad.input += gl.input;
  grad.input += gv.input;
  return grad;
}

GradCheckReport gla_grad_check(const FeatureMap& x, const GlaParams& params, const HashPlan& plan, double step,
                               double tolerance, std::uint64_t seed) {
  require(step > 0.0, "gla_grad_check: step must be positive");
  Xoshiro256 rng(seed);
  Matrix mask(x.channels(), x.pixels());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.normal();

  const RoundWeights frozen = gla_forward_detailed(x, params, plan).weights;
  const GlaGrad analytic = gla_backward(x, params, plan, FeatureMap(mask, x.height(), x.width()), &frozen);

  GlaParams probe = params;
  FeatureMap input = x;
  const FeatureMapT<Extended> base = gla_forward_detailed(as_scalar<Extended>(x), params, plan, nullptr, &frozen).output;
  const MatrixT<Extended> mask_ext = mask.cast<Extended>();
  // extended precision and an offset by the unperturbed output keep the
  // roundoff in the differences well below the smallest entries checked
  auto loss = [&]() {
    const auto out = gla_forward_detailed(as_scalar<Extended>(input), probe, plan, nullptr, &frozen).output;
    return double((out.values() - base.values()).cwiseProduct(mask_ext).sum());
  };

  auto named = probe.tensors();
  named.insert(named.begin(), NamedTensor{"input", &input.values()});
  auto grads = analytic.params.tensors();
  grads.insert(grads.begin(), &analytic.input.values());
  return compare_gradients(named, grads, loss, step, tolerance);
}

}  // namespace dlsn
