#pragma once

// Dense float64 tensors and the differentiable primitives the generator is
// built from: transposed convolution, ReLU/tanh, per-channel normalization
// and center cropping. Every backward pass is written out by hand.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace csdip {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent dimensions between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared where a finite value is required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Row-major dense array of doubles. product(shape) == size() always holds.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor shape " + shape_string(shape_) + " needs " +
                       std::to_string(shape_size(shape_)) + " values, got " +
                       std::to_string(data_.size()));
    }
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  const std::vector<double>& vector() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Element access for rank-3 [C,H,W] tensors.
  double& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  double at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& other) {
    require_same_shape(other, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }
  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, double s) { return a *= s; }
  friend Tensor operator*(double s, Tensor a) { return a *= s; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  void require_same_shape(const Tensor& other, std::string_view where) const {
    if (shape_ != other.shape_) {
      throw ShapeError(std::string(where) + ": shape " + shape_string(shape_) + " vs " +
                       shape_string(other.shape_));
    }
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

inline void require_finite(const Tensor& t, std::string_view where) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw NumericalError(std::string(where) + ": non-finite value at flat index " +
                           std::to_string(i));
    }
  }
}

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, std::string_view where,
                         std::string_view name) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(where) + ": " + std::string(name) + " must have rank " +
                     std::to_string(rank) + ", got shape " + shape_string(t.shape()));
  }
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Transposed convolution
// ---------------------------------------------------------------------------

/// Output spatial extent of a transposed convolution: stride*(n-1) + K - 2*pad.
inline long conv_transpose_extent(std::size_t n, std::size_t kernel, std::size_t stride,
                                  std::size_t pad) {
  return static_cast<long>(stride) * (static_cast<long>(n) - 1) + static_cast<long>(kernel) -
         2 * static_cast<long>(pad);
}

namespace detail {

struct ConvTransposeGeometry {
  std::size_t in_channels, out_channels, height, width, kernel, stride, pad;
  std::size_t out_height, out_width;
};

inline ConvTransposeGeometry conv_transpose_geometry(const Tensor& input, const Tensor& kernels,
                                                     std::size_t stride, std::size_t pad) {
  constexpr std::string_view where = "conv_transpose2d";
  require_rank(input, 3, where, "input");
  require_rank(kernels, 4, where, "kernels");
  if (stride < 1) throw ConfigError("conv_transpose2d: stride must be >= 1");
  const std::size_t k = kernels.dim(2);
  if (k < 1 || kernels.dim(3) != k) {
    throw ShapeError("conv_transpose2d: kernels must be square with K >= 1, got " +
                     shape_string(kernels.shape()));
  }
  if (kernels.dim(0) != input.dim(0)) {
    throw ShapeError("conv_transpose2d: in_channels mismatch, input has " +
                     std::to_string(input.dim(0)) + ", kernels expect " +
                     std::to_string(kernels.dim(0)));
  }
  const long oh = conv_transpose_extent(input.dim(1), k, stride, pad);
  const long ow = conv_transpose_extent(input.dim(2), k, stride, pad);
  if (oh < 1) throw ShapeError("conv_transpose2d: output height " + std::to_string(oh) + " < 1");
  if (ow < 1) throw ShapeError("conv_transpose2d: output width " + std::to_string(ow) + " < 1");
  return {input.dim(0), kernels.dim(1), input.dim(1), input.dim(2), k, stride, pad,
          static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)};
}

}  // namespace detail

/// Fractionally-strided convolution of input[C_in,H,W] with kernels[C_in,C_out,K,K].
/// Each input pixel scatters input*kernel into the output window anchored at
/// (h*stride - pad, w*stride - pad).
inline Tensor conv_transpose2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
                               std::size_t pad) {
  const auto g = detail::conv_transpose_geometry(input, kernels, stride, pad);
  const std::size_t hw = g.height * g.width;
  const std::size_t kk = g.kernel * g.kernel;

  detail::ConstRowMap x(input.data(), g.in_channels, hw);
  detail::ConstRowMap w(kernels.data(), g.in_channels, g.out_channels * kk);
  const detail::RowMatrix cols = w.transpose() * x;  // [C_out*K*K, H*W]

  Tensor out({g.out_channels, g.out_height, g.out_width});
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        const double* row = cols.data() + (co * kk + kh * g.kernel + kw) * hw;
        for (std::size_t h = 0; h < g.height; ++h) {
          const long oh = static_cast<long>(h * g.stride + kh) - static_cast<long>(g.pad);
          if (oh < 0 || oh >= static_cast<long>(g.out_height)) continue;
          double* orow = out.data() + (co * g.out_height + oh) * g.out_width;
          for (std::size_t wi = 0; wi < g.width; ++wi) {
            const long ow = static_cast<long>(wi * g.stride + kw) - static_cast<long>(g.pad);
            if (ow < 0 || ow >= static_cast<long>(g.out_width)) continue;
            orow[ow] += row[h * g.width + wi];
          }
        }
      }
    }
  }
  require_finite(out, "conv_transpose2d");
  return out;
}

struct ConvTransposeGrads {
  Tensor input;
  Tensor kernels;
};

/// Adjoints of conv_transpose2d with respect to its input and its kernels.
inline ConvTransposeGrads conv_transpose2d_backward(const Tensor& input, const Tensor& kernels,
                                                    const Tensor& grad_out, std::size_t stride,
                                                    std::size_t pad) {
  const auto g = detail::conv_transpose_geometry(input, kernels, stride, pad);
  const Shape expected{g.out_channels, g.out_height, g.out_width};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv_transpose2d_backward: grad_out shape " +
                     shape_string(grad_out.shape()) + " must equal forward output shape " +
                     shape_string(expected));
  }
  const std::size_t hw = g.height * g.width;
  const std::size_t kk = g.kernel * g.kernel;

  // Gather grad_out into the column layout used by the forward scatter.
  detail::RowMatrix cols = detail::RowMatrix::Zero(g.out_channels * kk, hw);
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        double* row = cols.data() + (co * kk + kh * g.kernel + kw) * hw;
        for (std::size_t h = 0; h < g.height; ++h) {
          const long oh = static_cast<long>(h * g.stride + kh) - static_cast<long>(g.pad);
          if (oh < 0 || oh >= static_cast<long>(g.out_height)) continue;
          const double* grow = grad_out.data() + (co * g.out_height + oh) * g.out_width;
          for (std::size_t wi = 0; wi < g.width; ++wi) {
            const long ow = static_cast<long>(wi * g.stride + kw) - static_cast<long>(g.pad);
            if (ow < 0 || ow >= static_cast<long>(g.out_width)) continue;
            row[h * g.width + wi] = grow[ow];
          }
        }
      }
    }
  }

  detail::ConstRowMap x(input.data(), g.in_channels, hw);
  detail::ConstRowMap w(kernels.data(), g.in_channels, g.out_channels * kk);

  ConvTransposeGrads grads{Tensor(input.shape()), Tensor(kernels.shape())};
  detail::RowMap gx(grads.input.data(), g.in_channels, hw);
  detail::RowMap gw(grads.kernels.data(), g.in_channels, g.out_channels * kk);
  gx.noalias() = w * cols;
  gw.noalias() = x * cols.transpose();
  require_finite(grads.input, "conv_transpose2d_backward");
  require_finite(grads.kernels, "conv_transpose2d_backward");
  return grads;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Activation { relu, tanh };

inline std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

inline Tensor activation(const Tensor& x, Activation kind) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = kind == Activation::relu ? std::max(0.0, x[i]) : std::tanh(x[i]);
  }
  require_finite(out, "activation");
  return out;
}

/// Gradient with respect to the pre-activation x. ReLU uses 1{x >= 0}.
inline Tensor activation_backward(const Tensor& x, const Tensor& grad_out, Activation kind) {
  x.require_same_shape(grad_out, "activation_backward");
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (kind == Activation::relu) {
      grad[i] = x[i] >= 0.0 ? grad_out[i] : 0.0;
    } else {
      const double t = std::tanh(x[i]);
      grad[i] = grad_out[i] * (1.0 - t * t);
    }
  }
  require_finite(grad, "activation_backward");
  return grad;
}

// ---------------------------------------------------------------------------
// Per-channel normalization
// ---------------------------------------------------------------------------

inline constexpr double kNormEpsilon = 1e-5;

namespace detail {

inline void check_norm_args(const Tensor& x, const Tensor& gain, const Tensor& bias,
                            std::string_view where) {
  require_rank(x, 3, where, "input");
  if (gain.size() != x.dim(0) || bias.size() != x.dim(0)) {
    throw ShapeError(std::string(where) + ": gain/bias length " + std::to_string(gain.size()) +
                     "/" + std::to_string(bias.size()) + " must equal channel count " +
                     std::to_string(x.dim(0)));
  }
}

}  // namespace detail

/// Standardizes each channel over H*W (biased variance, eps 1e-5), then applies
/// gain and bias.
inline Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  detail::check_norm_args(x, gain, bias, "channel_norm");
  const std::size_t channels = x.dim(0);
  const std::size_t n = x.dim(1) * x.dim(2);
  Tensor out(x.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    const double* in = x.data() + c * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += in[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + kNormEpsilon);
    double* o = out.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) o[i] = gain[c] * (in[i] - mean) * inv_std + bias[c];
  }
  require_finite(out, "channel_norm");
  return out;
}

struct ChannelNormGrads {
  Tensor input;
  Tensor gain;
  Tensor bias;
};

inline ChannelNormGrads channel_norm_backward(const Tensor& x, const Tensor& gain,
                                              const Tensor& bias, const Tensor& grad_out) {
  detail::check_norm_args(x, gain, bias, "channel_norm_backward");
  x.require_same_shape(grad_out, "channel_norm_backward");
  const std::size_t channels = x.dim(0);
  const std::size_t n = x.dim(1) * x.dim(2);
  const double inv_n = 1.0 / static_cast<double>(n);
  ChannelNormGrads grads{Tensor(x.shape()), Tensor(gain.shape()), Tensor(bias.shape())};
  std::vector<double> xhat(n);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* in = x.data() + c * n;
    const double* go = grad_out.data() + c * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += in[i];
    mean *= inv_n;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (in[i] - mean) * (in[i] - mean);
    var *= inv_n;
    const double inv_std = 1.0 / std::sqrt(var + kNormEpsilon);

    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      xhat[i] = (in[i] - mean) * inv_std;
      sum_g += go[i];
      sum_gx += go[i] * xhat[i];
    }
    grads.gain[c] = sum_gx;
    grads.bias[c] = sum_g;
    double* gi = grads.input.data() + c * n;
    const double scale = gain[c] * inv_std;
    for (std::size_t i = 0; i < n; ++i) {
      gi[i] = scale * (go[i] - sum_g * inv_n - xhat[i] * sum_gx * inv_n);
    }
  }
  require_finite(grads.input, "channel_norm_backward");
  return grads;
}

// ---------------------------------------------------------------------------
// Center crop
// ---------------------------------------------------------------------------

inline Tensor center_crop(const Tensor& x, std::size_t height, std::size_t width) {
  detail::require_rank(x, 3, "center_crop", "input");
  if (height > x.dim(1) || width > x.dim(2)) {
    throw ShapeError("center_crop: target " + std::to_string(height) + "x" +
                     std::to_string(width) + " exceeds input " + shape_string(x.shape()));
  }
  const std::size_t top = (x.dim(1) - height) / 2;
  const std::size_t left = (x.dim(2) - width) / 2;
  Tensor out({x.dim(0), height, width});
  for (std::size_t c = 0; c < x.dim(0); ++c)
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t w = 0; w < width; ++w) out.at(c, h, w) = x.at(c, top + h, left + w);
  return out;
}

/// Zero-pads grad_out back into the uncropped extent.
inline Tensor center_crop_backward(const Shape& input_shape, const Tensor& grad_out) {
  Tensor grad(input_shape);
  const std::size_t top = (input_shape[1] - grad_out.dim(1)) / 2;
  const std::size_t left = (input_shape[2] - grad_out.dim(2)) / 2;
  for (std::size_t c = 0; c < grad_out.dim(0); ++c)
    for (std::size_t h = 0; h < grad_out.dim(1); ++h)
      for (std::size_t w = 0; w < grad_out.dim(2); ++w)
        grad.at(c, top + h, left + w) = grad_out.at(c, h, w);
  return grad;
}

}  // namespace csdip
