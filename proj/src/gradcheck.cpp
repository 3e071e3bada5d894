#include "dlsn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dlsn/random.hpp"

namespace dlsn {

bool GradCheckReport::passed() const {
  return std::all_of(tensors.begin(), tensors.end(),
                     [&](const TensorError& t) { return t.max_relative_error < tolerance; });
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& t : tensors) w = std::max(w, t.max_relative_error);
  return w;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport compare_gradients(const std::vector<NamedTensor>& params, const std::vector<const Matrix*>& analytic,
                                  const std::function<double()>& loss, double step, double tolerance,
                                  std::size_t max_entries, std::uint64_t seed) {
  return compare_gradients(
      params, analytic, [&](std::size_t) { return loss(); }, step, tolerance, max_entries, seed);
}

GradCheckReport compare_gradients(const std::vector<NamedTensor>& params, const std::vector<const Matrix*>& analytic,
                                  const std::function<double(std::size_t)>& loss, double step, double tolerance,
                                  std::size_t max_entries, std::uint64_t seed) {
  require(step > 0.0, "compare_gradients: step must be positive");
  require(params.size() == analytic.size(), "compare_gradients: parameter and gradient lists differ in length");
  Xoshiro256 rng(seed);
  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Matrix& value = *params[t].value;
    const Matrix& grad = *analytic[t];
    require(value.rows() == grad.rows() && value.cols() == grad.cols(),
            "compare_gradients: gradient shape mismatch for " + params[t].name);
    std::vector<Eigen::Index> entries(std::size_t(value.size()));
    std::iota(entries.begin(), entries.end(), Eigen::Index(0));
    if (max_entries != 0 && entries.size() > max_entries) {
      // partial Fisher-Yates
      for (std::size_t i = 0; i < max_entries; ++i) {
        const std::size_t j = i + std::size_t(rng.below(entries.size() - i));
        std::swap(entries[i], entries[j]);
      }
      entries.resize(max_entries);
      std::sort(entries.begin(), entries.end());
    }
    TensorError err{params[t].name, 0.0, entries.size()};
    for (Eigen::Index e : entries) {
      double& slot = value.data()[e];
      const double saved = slot;
      slot = saved + step;
      const double up = loss(t);
      slot = saved - step;
      const double down = loss(t);
      slot = saved;
      const double numeric = (up - down) / (2.0 * step);
      err.max_relative_error = std::max(err.max_relative_error, relative_error(grad.data()[e], numeric));
    }
    report.tensors.push_back(err);
  }
  return report;
}

}  // namespace dlsn
