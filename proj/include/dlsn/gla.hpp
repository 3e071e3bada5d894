#ifndef DLSN_GLA_HPP
#define DLSN_GLA_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "dlsn/gradcheck.hpp"
#include "dlsn/sblsh.hpp"
#include "dlsn/tensor.hpp"

namespace dlsn {

/// Trainable tensors of one global learnable attention block operating on
/// gla_channels-channel features. The query and key transforms share
/// qk_conv. The learnable scorer maps a query's l_conv feature through
/// w2 * relu(w1 * f + b1) + b2 to one score per slot of a bucket.
struct GlaParams {
  int gla_channels = 0;
  int bucket_size = 0;
  int rounds = 1;

  Conv3x3 qk_conv;
  Conv3x3 v_conv;
  Conv3x3 l_conv;
  Matrix w1;  // bucket_size x gla_channels
  Matrix b1;  // bucket_size x 1
  Matrix w2;  // bucket_size x bucket_size
  Matrix b2;  // bucket_size x 1

  /// Zero-initialized tensors of the right shapes.
  GlaParams(int channels, int bucket, int hash_rounds);
  GlaParams() = default;

  /// Tensors in declaration order: qk, v, l conv (weight, bias), w1, b1, w2, b2.
  std::vector<NamedTensor> tensors(const std::string& prefix = "");
  std::vector<const Matrix*> tensors() const;

  void validate() const;
};

/// He-normal weights (std sqrt(2 / fan_in)), zero biases.
GlaParams init_gla_params(int channels, int bucket, int hash_rounds, std::uint64_t seed);

/// Multiply-accumulate tally for the similarity scoring and the value
/// aggregation, counted per computed slot (masked slots included).
struct MacCounter {
  std::uint64_t scoring = 0;
  std::uint64_t aggregation = 0;

  std::uint64_t total() const { return scoring + aggregation; }
};

/// Scoring MACs of one GLA pass over n features:
/// rounds * chunks * (l * 3l * c + l * l * c + l * l * l).
std::uint64_t gla_scoring_macs(std::uint64_t n, std::uint64_t bucket, std::uint64_t channels, std::uint64_t rounds);

/// Gram matrix q^T q (keys x queries) of a c x l bucket.
Matrix score_fixed(const Matrix& q_bucket);

/// Learnable scores, bucket_size x cols: column i is w2 relu(w1 f_i + b1) + b2.
Matrix score_learnable(const Matrix& l_bucket, const GlaParams& params);

struct LearnableScoreGrad {
  Matrix w1, b1, w2, b2;
  Matrix features;  // gradient w.r.t. l_bucket
};

/// Adjoint of score_learnable for upstream dscores (bucket_size x cols).
LearnableScoreGrad score_learnable_backward(const Matrix& l_bucket, const GlaParams& params, const Matrix& dscores);

template <typename Scalar>
struct BucketAttentionT {
  MatrixT<Scalar> values;          // c x queries
  MatrixT<Scalar> probabilities;   // keys x queries, zero on masked keys
  std::vector<double> score_sums;  // per query, raw scores summed over unmasked keys
};

using BucketAttention = BucketAttentionT<double>;

/// Attention of `queries` (c x l) over `keys`/`values` (c x K, K a multiple
/// of l). Key slot j receives fixed score keys_j . q_i plus learnable score
/// row (j mod l). Masked key slots get weight exactly zero.
BucketAttention attend_window(const Matrix& queries, const Matrix& keys, const Matrix& l_features,
                              const Matrix& values, std::span<const std::uint8_t> key_mask, const GlaParams& params,
                              MacCounter* macs = nullptr);

/// Single-bucket attention where the bucket supplies both queries and keys.
BucketAttention attend_bucket(const Matrix& q_bucket, const Matrix& l_bucket, const Matrix& v_bucket,
                              std::span<const std::uint8_t> pad_mask, const GlaParams& params);

/// Per-round, per-query merge weights: sums[r][i] / sum_r sums[r][i], or
/// 1/h where that denominator has magnitude below 1e-12.
using RoundWeights = std::vector<std::vector<double>>;
RoundWeights round_weights(const std::vector<std::vector<double>>& score_sums);

template <typename Scalar>
struct GlaForwardT {
  FeatureMapT<Scalar> output;
  MatrixT<Scalar> q, l, v;                      // transformed features, c x n
  std::vector<MatrixT<Scalar>> round_outputs;   // per round, c x n in original order
  std::vector<std::vector<double>> score_sums;  // per round, per feature
  RoundWeights weights;
};

using GlaForward = GlaForwardT<double>;

/// Runs the block for hashing plans computed on qk_conv(x). When
/// `frozen_weights` is given, those merge weights are used instead of the
/// ones derived from the score sums. Instantiated for double and Extended;
/// parameters are converted to Scalar on entry.
template <typename Scalar>
GlaForwardT<Scalar> gla_forward_detailed(const FeatureMapT<Scalar>& x, const GlaParams& params, const HashPlan& plan,
                                         MacCounter* macs = nullptr, const RoundWeights* frozen_weights = nullptr);

FeatureMap gla_forward(const FeatureMap& x, const GlaParams& params, const HashPlan& plan,
                       MacCounter* macs = nullptr, const RoundWeights* frozen_weights = nullptr);

/// Query features of x, i.e. what the hashing plan must be built from.
Matrix gla_query_features(const FeatureMap& x, const GlaParams& params);

/// Hash the query features of x with one basis per round.
HashPlan gla_plan(const FeatureMap& x, const GlaParams& params, const std::vector<OrthoBasis>& bases);

struct GlaGrad {
  FeatureMap input;
  GlaParams params;
};

/// Adjoint of gla_forward for upstream gradient dy, holding the merge
/// weights constant (no gradient flows through their normalization).
GlaGrad gla_backward(const FeatureMap& x, const GlaParams& params, const HashPlan& plan, const FeatureMap& dy,
                     const RoundWeights* frozen_weights = nullptr);

/// Central-difference check of gla_backward on the probe loss
/// sum(mask .* gla_forward(x)) with mask ~ N(0, 1) from `seed`. The merge
/// weights are frozen at their value for the unperturbed input.
GradCheckReport gla_grad_check(const FeatureMap& x, const GlaParams& params, const HashPlan& plan, double step,
                               double tolerance, std::uint64_t seed = 0);

}  // namespace dlsn

#endif  // DLSN_GLA_HPP
