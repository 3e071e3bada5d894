#ifndef DLSN_TENSOR_HPP
#define DLSN_TENSOR_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace dlsn {

/// Raised when arguments violate a documented precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a binary stream does not match its format. Carries the byte
/// offset at which parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatrixT<double>;

/// Precision of finite-difference probe evaluations.
using Extended = long double;

/// Dense channels x height x width activation. Storage is a row-major
/// (channels, height*width) matrix, so data() is channel-major then
/// row-major and values() is directly the flattened c x hw view.
template <typename Scalar>
class FeatureMapT {
 public:
  FeatureMapT() = default;

  FeatureMapT(Eigen::Index channels, Eigen::Index height, Eigen::Index width)
      : height_(height), width_(width) {
    require(channels > 0 && height > 0 && width > 0, "FeatureMap dimensions must be positive");
    values_ = MatrixT<Scalar>::Zero(channels, height * width);
  }

  FeatureMapT(MatrixT<Scalar> values, Eigen::Index height, Eigen::Index width)
      : values_(std::move(values)), height_(height), width_(width) {
    require(height > 0 && width > 0 && values_.rows() > 0, "FeatureMap dimensions must be positive");
    require(values_.cols() == height * width, "FeatureMap data length must equal channels*height*width");
  }

  Eigen::Index channels() const { return values_.rows(); }
  Eigen::Index height() const { return height_; }
  Eigen::Index width() const { return width_; }
  Eigen::Index pixels() const { return height_ * width_; }
  Eigen::Index size() const { return values_.size(); }

  Scalar& operator()(Eigen::Index c, Eigen::Index y, Eigen::Index x) { return values_(c, y * width_ + x); }
  Scalar operator()(Eigen::Index c, Eigen::Index y, Eigen::Index x) const { return values_(c, y * width_ + x); }

  MatrixT<Scalar>& values() { return values_; }
  const MatrixT<Scalar>& values() const { return values_; }

  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  bool same_shape(const FeatureMapT& other) const {
    return channels() == other.channels() && height_ == other.height_ && width_ == other.width_;
  }

  FeatureMapT& operator+=(const FeatureMapT& other) {
    require(same_shape(other), "FeatureMap shape mismatch in +=");
    values_ += other.values_;
    return *this;
  }

  friend FeatureMapT operator+(FeatureMapT a, const FeatureMapT& b) { return a += b; }

  friend bool operator==(const FeatureMapT& a, const FeatureMapT& b) {
    return a.same_shape(b) && a.values_ == b.values_;
  }

 private:
  MatrixT<Scalar> values_;
  Eigen::Index height_ = 0;
  Eigen::Index width_ = 0;
};

using FeatureMap = FeatureMapT<double>;

/// 3x3 kernel bank. weight is (out, in*9) with column index in*9 + ky*3 + kx;
/// bias is (out, 1).
template <typename Scalar>
struct Conv3x3T {
  MatrixT<Scalar> weight;
  MatrixT<Scalar> bias;

  Conv3x3T() = default;
  Conv3x3T(Eigen::Index out_channels, Eigen::Index in_channels)
      : weight(MatrixT<Scalar>::Zero(out_channels, in_channels * 9)),
        bias(MatrixT<Scalar>::Zero(out_channels, 1)) {}

  Eigen::Index out_channels() const { return weight.rows(); }
  Eigen::Index in_channels() const { return weight.cols() / 9; }

  Scalar& at(Eigen::Index o, Eigen::Index i, int ky, int kx) { return weight(o, i * 9 + ky * 3 + kx); }
  Scalar at(Eigen::Index o, Eigen::Index i, int ky, int kx) const { return weight(o, i * 9 + ky * 3 + kx); }
};

using Conv3x3 = Conv3x3T<double>;

/// `m` at Scalar precision; a reference to `m` when Scalar is double.
template <typename Scalar>
decltype(auto) as_scalar(const Matrix& m) {
  if constexpr (std::is_same_v<Scalar, double>)
    return (m);
  else
    return MatrixT<Scalar>(m.cast<Scalar>());
}

template <typename Scalar>
decltype(auto) as_scalar(const FeatureMap& f) {
  if constexpr (std::is_same_v<Scalar, double>)
    return (f);
  else
    return FeatureMapT<Scalar>(f.values().cast<Scalar>(), f.height(), f.width());
}

template <typename Scalar>
decltype(auto) as_scalar(const Conv3x3& k) {
  if constexpr (std::is_same_v<Scalar, double>) {
    return (k);
  } else {
    Conv3x3T<Scalar> out;
    out.weight = k.weight.cast<Scalar>();
    out.bias = k.bias.cast<Scalar>();
    return out;
  }
}

template <typename Scalar>
MatrixT<Scalar> matmul(const MatrixT<Scalar>& a, const MatrixT<Scalar>& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()) + ")");
  return a * b;
}

namespace detail {

// (in*9, h*w) patch matrix for a 3x3 window with zero padding 1.
template <typename Scalar>
MatrixT<Scalar> im2col_3x3(const FeatureMapT<Scalar>& x) {
  const Eigen::Index h = x.height(), w = x.width();
  MatrixT<Scalar> cols = MatrixT<Scalar>::Zero(x.channels() * 9, h * w);
  for (Eigen::Index c = 0; c < x.channels(); ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        Scalar* row = cols.row(c * 9 + ky * 3 + kx).data();
        for (Eigen::Index y = 0; y < h; ++y) {
          const Eigen::Index sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (Eigen::Index xx = 0; xx < w; ++xx) {
            const Eigen::Index sx = xx + kx - 1;
            if (sx < 0 || sx >= w) continue;
            row[y * w + xx] = x(c, sy, sx);
          }
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
FeatureMapT<Scalar> col2im_3x3(const MatrixT<Scalar>& cols, Eigen::Index channels, Eigen::Index h,
                               Eigen::Index w) {
  FeatureMapT<Scalar> x(channels, h, w);
  for (Eigen::Index c = 0; c < channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Scalar* row = cols.row(c * 9 + ky * 3 + kx).data();
        for (Eigen::Index y = 0; y < h; ++y) {
          const Eigen::Index sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (Eigen::Index xx = 0; xx < w; ++xx) {
            const Eigen::Index sx = xx + kx - 1;
            if (sx < 0 || sx >= w) continue;
            x(c, sy, sx) += row[y * w + xx];
          }
        }
      }
    }
  }
  return x;
}

}  // namespace detail

/// Cross-correlation with zero padding 1 and stride 1; spatial dims are kept.
template <typename Scalar>
FeatureMapT<Scalar> conv2d_3x3(const FeatureMapT<Scalar>& x, const Conv3x3T<Scalar>& k) {
  require(k.weight.cols() % 9 == 0, "conv2d_3x3: weight columns must be in_channels*9");
  require(k.in_channels() == x.channels(), "conv2d_3x3: kernel expects " + std::to_string(k.in_channels()) +
                                               " input channels, got " + std::to_string(x.channels()));
  require(k.bias.rows() == k.out_channels() && k.bias.cols() == 1, "conv2d_3x3: bias must be (out, 1)");
  MatrixT<Scalar> out = k.weight * detail::im2col_3x3(x);
  out.colwise() += k.bias.col(0);
  return FeatureMapT<Scalar>(std::move(out), x.height(), x.width());
}

template <typename Scalar>
struct Conv3x3Grad {
  FeatureMapT<Scalar> input;
  Conv3x3T<Scalar> kernel;
};

/// Adjoint of conv2d_3x3 for upstream gradient dy at input x.
template <typename Scalar>
Conv3x3Grad<Scalar> conv2d_3x3_backward(const FeatureMapT<Scalar>& x, const Conv3x3T<Scalar>& k,
                                        const FeatureMapT<Scalar>& dy) {
  require(dy.channels() == k.out_channels() && dy.height() == x.height() && dy.width() == x.width(),
          "conv2d_3x3_backward: upstream gradient shape mismatch");
  Conv3x3Grad<Scalar> g;
  const MatrixT<Scalar> cols = detail::im2col_3x3(x);
  g.kernel.weight = dy.values() * cols.transpose();
  g.kernel.bias = dy.values().rowwise().sum();
  const MatrixT<Scalar> dcols = k.weight.transpose() * dy.values();
  g.input = detail::col2im_3x3(dcols, x.channels(), x.height(), x.width());
  return g;
}

template <typename Scalar>
FeatureMapT<Scalar> relu(FeatureMapT<Scalar> x) {
  x.values() = x.values().cwiseMax(Scalar(0));
  return x;
}

template <typename Scalar>
MatrixT<Scalar> relu(const MatrixT<Scalar>& x) {
  return x.cwiseMax(Scalar(0));
}

/// Passes dy where the forward input was strictly positive.
template <typename Scalar>
FeatureMapT<Scalar> relu_backward(const FeatureMapT<Scalar>& x, FeatureMapT<Scalar> dy) {
  require(x.same_shape(dy), "relu_backward: shape mismatch");
  dy.values() = (x.values().array() > Scalar(0)).select(dy.values(), Scalar(0));
  return dy;
}

/// Row-wise softmax with per-row max subtraction. Entries equal to -inf get
/// weight exactly zero; a row must contain at least one finite entry.
template <typename Scalar>
MatrixT<Scalar> softmax_rows(const MatrixT<Scalar>& s) {
  MatrixT<Scalar> out(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const Scalar peak = s.row(r).maxCoeff();
    Scalar total = 0;
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      const Scalar e = std::exp(s(r, c) - peak);
      out(r, c) = e;
      total += e;
    }
    out.row(r) /= total;
  }
  return out;
}

/// output[c][s*i+a][s*j+b] = x[c*s*s + a*s + b][i][j]
template <typename Scalar>
FeatureMapT<Scalar> pixel_shuffle(const FeatureMapT<Scalar>& x, int scale) {
  require(scale >= 1, "pixel_shuffle: scale must be >= 1");
  const Eigen::Index s2 = Eigen::Index(scale) * scale;
  require(x.channels() % s2 == 0, "pixel_shuffle: channels (" + std::to_string(x.channels()) +
                                      ") not divisible by scale^2");
  FeatureMapT<Scalar> out(x.channels() / s2, x.height() * scale, x.width() * scale);
  for (Eigen::Index c = 0; c < out.channels(); ++c)
    for (int a = 0; a < scale; ++a)
      for (int b = 0; b < scale; ++b)
        for (Eigen::Index i = 0; i < x.height(); ++i)
          for (Eigen::Index j = 0; j < x.width(); ++j)
            out(c, scale * i + a, scale * j + b) = x(c * s2 + a * scale + b, i, j);
  return out;
}

/// Exact inverse index map of pixel_shuffle; also its adjoint.
template <typename Scalar>
FeatureMapT<Scalar> pixel_unshuffle(const FeatureMapT<Scalar>& y, int scale) {
  require(scale >= 1, "pixel_unshuffle: scale must be >= 1");
  require(y.height() % scale == 0 && y.width() % scale == 0, "pixel_unshuffle: spatial dims not divisible");
  const Eigen::Index s2 = Eigen::Index(scale) * scale;
  FeatureMapT<Scalar> x(y.channels() * s2, y.height() / scale, y.width() / scale);
  for (Eigen::Index c = 0; c < y.channels(); ++c)
    for (int a = 0; a < scale; ++a)
      for (int b = 0; b < scale; ++b)
        for (Eigen::Index i = 0; i < x.height(); ++i)
          for (Eigen::Index j = 0; j < x.width(); ++j)
            x(c * s2 + a * scale + b, i, j) = y(c, scale * i + a, scale * j + b);
  return x;
}

template <typename Scalar>
bool all_finite(const MatrixT<Scalar>& m) {
  return m.allFinite();
}

template <typename Scalar>
bool all_finite(const FeatureMapT<Scalar>& x) {
  return x.values().allFinite();
}

}  // namespace dlsn

#endif  // DLSN_TENSOR_HPP
