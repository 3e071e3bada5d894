#ifndef DLSN_BENCH_HPP
#define DLSN_BENCH_HPP

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "dlsn/gla.hpp"
#include "dlsn/tensor.hpp"

namespace dlsn {

/// Full softmax attention of every position over every position with the
/// fixed dot-product score. Streams one query at a time, so extra memory is
/// O(hw) rather than O((hw)^2).
FeatureMap dense_attention(const FeatureMap& x, const GlaParams& params, MacCounter* macs = nullptr);

/// Scoring plus aggregation MACs of dense_attention over n positions.
std::uint64_t dense_attention_macs(std::uint64_t n, std::uint64_t channels);

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double halfwidth = 0.0;  // 95% t-interval on the slope
};

/// Ordinary least squares of ln y on ln x.
SlopeFit fit_slope(const std::vector<std::pair<double, double>>& points);

struct ScalingRow {
  std::int64_t hw = 0;
  double dense_seconds = 0.0;
  double gla_seconds = 0.0;
  std::uint64_t dense_macs = 0;
  std::uint64_t gla_macs = 0;
};

struct ScalingReport {
  std::vector<ScalingRow> rows;
  SlopeFit dense;
  SlopeFit gla;
};

struct ScalingOptions {
  std::vector<std::int64_t> sizes{1024, 2048, 4096, 8192, 16384};
  int bucket_size = 128;
  int channels = 16;
  int rounds = 3;
  int hash_buckets = 8;
  int repetitions = 3;
  std::uint64_t seed = 0;
};

/// Median wall time over repetitions of dense_attention and gla_forward on
/// random (channels, h, w) inputs with h * w = hw, plus exact MAC counts.
ScalingReport measure_scaling(const ScalingOptions& options);

/// CSV rows `hw,dense_s,gla_s,dense_macs,gla_macs`, then the summary line.
void write_scaling_report(std::ostream& out, const ScalingReport& report);

}  // namespace dlsn

#endif  // DLSN_BENCH_HPP
