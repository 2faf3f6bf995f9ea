#pragma once

// Measurement operators y = A x + noise: dense Gaussian matrices, a radially
// masked 2D Fourier transform and the identity (denoising). Complex Fourier
// samples are returned as one real vector [Re(Ω), Im(Ω)].

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numbers>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <fftw3.h>

#include "csdip/random.hpp"
#include "csdip/tensor.hpp"

namespace csdip {

// ---------------------------------------------------------------------------
// Gaussian
// ---------------------------------------------------------------------------

/// Dense m x n matrix with i.i.d. N(0, 1/m) entries.
class GaussianOperator {
 public:
  GaussianOperator(std::size_t m, std::size_t n, std::uint64_t seed) : m_(m), n_(n), seed_(seed) {
    if (m == 0 || n == 0) throw ConfigError("make_gaussian: m and n must be >= 1");
    Rng rng(seed);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(m));
    std::vector<double> values(m * n);
    for (double& v : values) v = stddev * rng.normal();
    entries_ = std::make_shared<const Tensor>(Shape{m, n}, std::move(values));
  }

  std::size_t rows() const noexcept { return m_; }
  std::size_t cols() const noexcept { return n_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const Tensor& entries() const noexcept { return *entries_; }

  Tensor apply(const Tensor& x) const {
    if (x.size() != n_) {
      throw ShapeError("gaussian apply: input has " + std::to_string(x.size()) +
                       " entries, operator expects n = " + std::to_string(n_));
    }
    Tensor y({m_});
    detail::ConstRowMap a(entries_->data(), m_, n_);
    Eigen::Map<Eigen::VectorXd>(y.data(), m_).noalias() =
        a * Eigen::Map<const Eigen::VectorXd>(x.data(), n_);
    return y;
  }

  Tensor adjoint(const Tensor& r) const {
    if (r.size() != m_) {
      throw ShapeError("gaussian adjoint: input has " + std::to_string(r.size()) +
                       " entries, operator expects m = " + std::to_string(m_));
    }
    Tensor x({n_});
    detail::ConstRowMap a(entries_->data(), m_, n_);
    Eigen::Map<Eigen::VectorXd>(x.data(), n_).noalias() =
        a.transpose() * Eigen::Map<const Eigen::VectorXd>(r.data(), m_);
    return x;
  }

 private:
  std::size_t m_, n_;
  std::uint64_t seed_;
  std::shared_ptr<const Tensor> entries_;
};

inline GaussianOperator make_gaussian(std::size_t m, std::size_t n, std::uint64_t seed) {
  return GaussianOperator(m, n, seed);
}

// ---------------------------------------------------------------------------
// Fourier
// ---------------------------------------------------------------------------

struct FrequencyIndex {
  std::size_t row;
  std::size_t col;
  friend auto operator<=>(const FrequencyIndex&, const FrequencyIndex&) = default;
};

namespace detail {

struct FftwFree {
  void operator()(void* p) const noexcept { fftw_free(p); }
};
using FftwBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

inline FftwBuffer fftw_buffer(std::size_t n) {
  return FftwBuffer(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
}

// FFTW planning is not thread-safe; execution on fresh fftw_malloc buffers is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class Dft2dPlans {
 public:
  Dft2dPlans(std::size_t height, std::size_t width) {
    auto in = fftw_buffer(height * width);
    auto out = fftw_buffer(height * width);
    std::lock_guard lock(fftw_planner_mutex());
    forward_ = fftw_plan_dft_2d(static_cast<int>(height), static_cast<int>(width), in.get(),
                                out.get(), FFTW_FORWARD, FFTW_ESTIMATE);
    backward_ = fftw_plan_dft_2d(static_cast<int>(height), static_cast<int>(width), in.get(),
                                 out.get(), FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  Dft2dPlans(const Dft2dPlans&) = delete;
  Dft2dPlans& operator=(const Dft2dPlans&) = delete;
  ~Dft2dPlans() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
  }

  void forward(fftw_complex* in, fftw_complex* out) const { fftw_execute_dft(forward_, in, out); }
  void backward(fftw_complex* in, fftw_complex* out) const {
    fftw_execute_dft(backward_, in, out);
  }

 private:
  fftw_plan forward_ = nullptr;
  fftw_plan backward_ = nullptr;
};

}  // namespace detail

/// Orthonormal 2D DFT restricted to a set of frequency indices Ω. Output is
/// [Re F(x)_Ω ; Im F(x)_Ω] of length 2|Ω|; the adjoint is Re(F^H embed(r)).
class FourierOperator {
 public:
  FourierOperator(std::size_t height, std::size_t width, std::vector<FrequencyIndex> mask,
                  std::size_t line_count = 0)
      : height_(height), width_(width), line_count_(line_count), mask_(std::move(mask)) {
    if (height == 0 || width == 0) throw ConfigError("fourier operator: empty image grid");
    std::sort(mask_.begin(), mask_.end());
    if (std::adjacent_find(mask_.begin(), mask_.end()) != mask_.end()) {
      throw ConfigError("fourier operator: duplicate mask index");
    }
    for (const auto& f : mask_) {
      if (f.row >= height || f.col >= width) {
        throw ConfigError("fourier operator: mask index (" + std::to_string(f.row) + "," +
                          std::to_string(f.col) + ") outside " + std::to_string(height) + "x" +
                          std::to_string(width));
      }
    }
    if (!std::binary_search(mask_.begin(), mask_.end(), FrequencyIndex{0, 0})) {
      throw ConfigError("fourier operator: mask must contain the DC index (0,0)");
    }
    plans_ = std::make_shared<const detail::Dft2dPlans>(height, width);
  }

  /// Operator sampling every frequency, i.e. the full unitary DFT.
  static FourierOperator full(std::size_t height, std::size_t width) {
    std::vector<FrequencyIndex> all;
    all.reserve(height * width);
    for (std::size_t r = 0; r < height; ++r)
      for (std::size_t c = 0; c < width; ++c) all.push_back({r, c});
    return FourierOperator(height, width, std::move(all));
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t line_count() const noexcept { return line_count_; }
  const std::vector<FrequencyIndex>& mask() const noexcept { return mask_; }
  std::size_t rows() const noexcept { return 2 * mask_.size(); }
  std::size_t cols() const noexcept { return height_ * width_; }

  /// Number of distinct complex measurements of a real image: Ω modulo the
  /// conjugate symmetry F(x)[-k] = conj(F(x)[k]).
  std::size_t independent_count() const {
    std::set<FrequencyIndex> reps;
    for (const auto& f : mask_) {
      const FrequencyIndex mirror{(height_ - f.row) % height_, (width_ - f.col) % width_};
      reps.insert(std::min(f, mirror));
    }
    return reps.size();
  }

  Tensor apply(const Tensor& x) const {
    if (x.size() != cols()) {
      throw ShapeError("fourier apply: input has " + std::to_string(x.size()) +
                       " entries, operator expects " + std::to_string(height_) + "x" +
                       std::to_string(width_));
    }
    const std::size_t n = cols();
    auto in = detail::fftw_buffer(n);
    auto out = detail::fftw_buffer(n);
    for (std::size_t i = 0; i < n; ++i) {
      in[i][0] = x[i];
      in[i][1] = 0.0;
    }
    plans_->forward(in.get(), out.get());
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    const std::size_t k = mask_.size();
    Tensor y({2 * k});
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t idx = mask_[i].row * width_ + mask_[i].col;
      y[i] = out[idx][0] * scale;
      y[k + i] = out[idx][1] * scale;
    }
    return y;
  }

  Tensor adjoint(const Tensor& r) const {
    if (r.size() != rows()) {
      throw ShapeError("fourier adjoint: input has " + std::to_string(r.size()) +
                       " entries, operator expects 2|Ω| = " + std::to_string(rows()));
    }
    const std::size_t n = cols();
    auto in = detail::fftw_buffer(n);
    auto out = detail::fftw_buffer(n);
    for (std::size_t i = 0; i < n; ++i) in[i][0] = in[i][1] = 0.0;
    const std::size_t k = mask_.size();
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t idx = mask_[i].row * width_ + mask_[i].col;
      in[idx][0] = r[i];
      in[idx][1] = r[k + i];
    }
    plans_->backward(in.get(), out.get());
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    Tensor x({n});
    for (std::size_t i = 0; i < n; ++i) x[i] = out[i][0] * scale;
    return x;
  }

 private:
  std::size_t height_, width_, line_count_;
  std::vector<FrequencyIndex> mask_;
  std::shared_ptr<const detail::Dft2dPlans> plans_;
};

/// Frequencies on `lines` full diameters through the spectrum center at angles
/// i*pi/lines. Points are taken at unit radial steps, rounded to the nearest
/// integer (halves away from zero), kept when inside the centered grid and
/// wrapped to FFT index order. DC is always included.
inline FourierOperator make_radial_mask(std::size_t height, std::size_t width, std::size_t lines) {
  if (lines < 1) throw ConfigError("make_radial_mask: lines must be >= 1");
  if (lines > std::max(height, width)) {
    throw ConfigError("make_radial_mask: " + std::to_string(lines) +
                      " lines exceed what a " + std::to_string(height) + "x" +
                      std::to_string(width) + " grid can distinguish");
  }
  const long h = static_cast<long>(height);
  const long w = static_cast<long>(width);
  const long row_lo = -(h / 2), row_hi = h - h / 2 - 1;
  const long col_lo = -(w / 2), col_hi = w - w / 2 - 1;
  const long radius = std::max(h, w);

  std::set<FrequencyIndex> omega{{0, 0}};
  for (std::size_t i = 0; i < lines; ++i) {
    const double theta = static_cast<double>(i) * std::numbers::pi / static_cast<double>(lines);
    const double s = std::sin(theta), c = std::cos(theta);
    for (long r = -radius; r <= radius; ++r) {
      const long fy = std::lround(static_cast<double>(r) * s);
      const long fx = std::lround(static_cast<double>(r) * c);
      if (fy < row_lo || fy > row_hi || fx < col_lo || fx > col_hi) continue;
      omega.insert({static_cast<std::size_t>((fy + h) % h), static_cast<std::size_t>((fx + w) % w)});
    }
  }
  return FourierOperator(height, width, {omega.begin(), omega.end()}, lines);
}

// ---------------------------------------------------------------------------
// Identity
// ---------------------------------------------------------------------------

/// A = I on n entries (denoising).
class IdentityOperator {
 public:
  explicit IdentityOperator(std::size_t n) : n_(n) {
    if (n == 0) throw ConfigError("identity operator: n must be >= 1");
  }
  std::size_t rows() const noexcept { return n_; }
  std::size_t cols() const noexcept { return n_; }
  Tensor apply(const Tensor& x) const { return check(x).reshaped({n_}); }
  Tensor adjoint(const Tensor& r) const { return check(r).reshaped({n_}); }

 private:
  const Tensor& check(const Tensor& t) const {
    if (t.size() != n_) {
      throw ShapeError("identity operator: input has " + std::to_string(t.size()) +
                       " entries, expected " + std::to_string(n_));
    }
    return t;
  }
  std::size_t n_;
};

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

using MeasurementOperator = std::variant<GaussianOperator, FourierOperator, IdentityOperator>;

inline Tensor apply_operator(const MeasurementOperator& op, const Tensor& x) {
  return std::visit([&](const auto& a) { return a.apply(x); }, op);
}

inline Tensor adjoint_operator(const MeasurementOperator& op, const Tensor& r) {
  return std::visit([&](const auto& a) { return a.adjoint(r); }, op);
}

/// Length of A x.
inline std::size_t output_size(const MeasurementOperator& op) {
  return std::visit([](const auto& a) { return a.rows(); }, op);
}

/// Length of x.
inline std::size_t input_size(const MeasurementOperator& op) {
  return std::visit([](const auto& a) { return a.cols(); }, op);
}

inline std::string kind_name(const MeasurementOperator& op) {
  switch (op.index()) {
    case 0: return "gaussian";
    case 1: return "fourier";
    default: return "identity";
  }
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

struct NoiseSpec {
  double variance_total = 0.0;  ///< sigma^2_eta; each entry is N(0, sigma^2_eta / m)
  std::uint64_t seed = 0;
};

inline Tensor add_noise(const Tensor& y, const NoiseSpec& spec, std::size_t m) {
  if (!(spec.variance_total >= 0.0)) throw ConfigError("add_noise: variance must be >= 0");
  if (m != y.size()) {
    throw ShapeError("add_noise: m = " + std::to_string(m) + " but y has " +
                     std::to_string(y.size()) + " entries");
  }
  Tensor out = y;
  if (spec.variance_total == 0.0) return out;
  Rng rng(spec.seed);
  const double stddev = std::sqrt(spec.variance_total / static_cast<double>(m));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += stddev * rng.normal();
  return out;
}

}  // namespace csdip
