#ifndef DLSN_GRADCHECK_HPP
#define DLSN_GRADCHECK_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dlsn/tensor.hpp"

namespace dlsn {

/// A named, mutable view of one trainable tensor.
struct NamedTensor {
  std::string name;
  Matrix* value;
};

struct TensorError {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<TensorError> tensors;
  double tolerance = 0.0;

  bool passed() const;
  double worst() const;
};

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double analytic, double numeric);

/// Compares analytic[k] against central differences of `loss` for every
/// tensor in `params`. At most `max_entries` entries per tensor are probed
/// (0 = all); larger tensors are sampled without replacement from
/// Xoshiro256(seed). Each entry is restored after probing.
GradCheckReport compare_gradients(const std::vector<NamedTensor>& params, const std::vector<const Matrix*>& analytic,
                                  const std::function<double()>& loss, double step, double tolerance,
                                  std::size_t max_entries = 0, std::uint64_t seed = 0);

/// As above, with `loss(t)` evaluated while an entry of params[t] is perturbed.
GradCheckReport compare_gradients(const std::vector<NamedTensor>& params, const std::vector<const Matrix*>& analytic,
                                  const std::function<double(std::size_t)>& loss, double step, double tolerance,
                                  std::size_t max_entries = 0, std::uint64_t seed = 0);

}  // namespace dlsn

#endif  // DLSN_GRADCHECK_HPP
