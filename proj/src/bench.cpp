#include "dlsn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>

#include <boost/math/distributions/students_t.hpp>

#include "dlsn/random.hpp"

namespace dlsn {

FeatureMap dense_attention(const FeatureMap& x, const GlaParams& params, MacCounter* macs) {
  const Matrix q = conv2d_3x3(x, params.qk_conv).values();
  const Matrix v = conv2d_3x3(x, params.v_conv).values();
  const Eigen::Index n = q.cols();
  FeatureMap out(v.rows(), x.height(), x.width());
  Eigen::VectorXd scores(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    scores.noalias() = q.transpose() * q.col(i);
    const double peak = scores.maxCoeff();
    scores = (scores.array() - peak).exp();
    out.values().col(i).noalias() = v * scores / scores.sum();
  }
  if (macs != nullptr) {
    macs->scoring += std::uint64_t(n) * std::uint64_t(n) * std::uint64_t(q.rows());
    macs->aggregation += std::uint64_t(n) * std::uint64_t(n) * std::uint64_t(v.rows());
  }
  return out;
}

std::uint64_t dense_attention_macs(std::uint64_t n, std::uint64_t channels) { return 2 * n * n * channels; }

SlopeFit fit_slope(const std::vector<std::pair<double, double>>& points) {
  require(points.size() >= 3, "fit_slope: at least 3 points required");
  const double n = double(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : points) {
    require(x > 0.0 && y > 0.0, "fit_slope: coordinates must be positive");
    mx += std::log(x);
    my += std::log(y);
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [x, y] : points) {
    sxx += (std::log(x) - mx) * (std::log(x) - mx);
    sxy += (std::log(x) - mx) * (std::log(y) - my);
  }
  require(sxx > 0.0, "fit_slope: x values must not all be equal");
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0.0;
  for (const auto& [x, y] : points) {
    const double r = std::log(y) - (fit.intercept + fit.slope * std::log(x));
    sse += r * r;
  }
  const boost::math::students_t t(n - 2.0);
  fit.halfwidth = boost::math::quantile(boost::math::complement(t, 0.025)) * std::sqrt(sse / (n - 2.0) / sxx);
  return fit;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Height is the largest divisor of hw not above its square root.
std::pair<Eigen::Index, Eigen::Index> grid_for(std::int64_t hw) {
  std::int64_t h = std::int64_t(std::sqrt(double(hw)));
  while (hw % h != 0) --h;
  return {h, hw / h};
}

template <typename F>
double seconds(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

ScalingReport measure_scaling(const ScalingOptions& o) {
  require(o.sizes.size() >= 4, "measure_scaling: at least 4 sizes required");
  require(o.repetitions >= 3, "measure_scaling: at least 3 repetitions required");
  for (std::size_t i = 0; i < o.sizes.size(); ++i) {
    require(o.sizes[i] >= 1, "measure_scaling: sizes must be positive");
    if (i > 0) require(o.sizes[i] > o.sizes[i - 1], "measure_scaling: sizes must be strictly increasing");
  }
  require(o.sizes.back() >= 8 * o.sizes.front(), "measure_scaling: sizes must span at least 8x");

  const GlaParams params = init_gla_params(o.channels, o.bucket_size, o.rounds, derive_seed(o.seed, 1));
  const auto bases = make_bases(o.hash_buckets, o.channels, o.rounds, o.seed, 0);
  ScalingReport report;
  for (std::int64_t hw : o.sizes) {
    const auto [h, w] = grid_for(hw);
    Xoshiro256 rng(derive_seed(o.seed, 2, std::uint64_t(hw)));
    FeatureMap x(o.channels, h, w);
    for (Eigen::Index i = 0; i < x.values().size(); ++i) x.values().data()[i] = rng.normal();

    ScalingRow row;
    row.hw = hw;
    MacCounter dense_count, gla_count;
    dense_attention(x, params, &dense_count);
    gla_forward(x, params, gla_plan(x, params, bases), &gla_count);
    row.dense_macs = dense_count.total();
    row.gla_macs = gla_count.total();

    std::vector<double> dense_t, gla_t;
    for (int r = 0; r < o.repetitions; ++r) {
      dense_t.push_back(seconds([&] { dense_attention(x, params); }));
      gla_t.push_back(seconds([&] { gla_forward(x, params, gla_plan(x, params, bases)); }));
    }
    row.dense_seconds = median(dense_t);
    row.gla_seconds = median(gla_t);
    report.rows.push_back(row);
  }
  std::vector<std::pair<double, double>> dense_pts, gla_pts;
  for (const auto& r : report.rows) {
    dense_pts.emplace_back(double(r.hw), r.dense_seconds);
    gla_pts.emplace_back(double(r.hw), r.gla_seconds);
  }
  report.dense = fit_slope(dense_pts);
  report.gla = fit_slope(gla_pts);
  return report;
}

void write_scaling_report(std::ostream& out, const ScalingReport& report) {
  out << "hw,dense_s,gla_s,dense_macs,gla_macs\n";
  out << std::setprecision(6);
  for (const auto& r : report.rows)
    out << r.hw << ',' << r.dense_seconds << ',' << r.gla_seconds << ',' << r.dense_macs << ',' << r.gla_macs << '\n';
  out << std::setprecision(4) << "{dense_slope: " << report.dense.slope << " +/- " << report.dense.halfwidth
      << ", gla_slope: " << report.gla.slope << " +/- " << report.gla.halfwidth << "}\n";
}

}  // namespace dlsn
