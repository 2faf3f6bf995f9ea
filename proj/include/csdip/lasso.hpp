#pragma once

// Lasso in a 2D DCT basis:
//   min_c 1/2 ||y - A idct2(c)||^2 + lambda ||c||_1
// solved by FISTA with the step taken from a power-iteration estimate of ||A||^2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "csdip/linops.hpp"
#include "csdip/random.hpp"
#include "csdip/tensor.hpp"

namespace csdip {

/// Orthonormal type-II DCT over the last two axes of [C,H,W] (or [H,W]) tensors.
class DctBasis {
 public:
  DctBasis(std::size_t height, std::size_t width)
      : height_(height), width_(width), rows_(matrix(height)), cols_(matrix(width)) {
    if (height == 0 || width == 0) throw ConfigError("DctBasis: empty grid");
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }

  Tensor forward(const Tensor& x) const { return transform(x, false); }
  Tensor inverse(const Tensor& c) const { return transform(c, true); }

  /// Orthonormal DCT-II matrix: C[k][n] = a_k cos(pi (2n+1) k / 2N).
  static Eigen::MatrixXd matrix(std::size_t n) {
    Eigen::MatrixXd c(n, n);
    const double N = static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double a = k == 0 ? std::sqrt(1.0 / N) : std::sqrt(2.0 / N);
      for (std::size_t i = 0; i < n; ++i) {
        c(k, i) = a * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * N));
      }
    }
    return c;
  }

 private:
  Tensor transform(const Tensor& x, bool inverse) const {
    std::size_t channels = 1;
    if (x.rank() == 3) {
      channels = x.dim(0);
    } else if (x.rank() != 2) {
      throw ShapeError("dct2: expected [H,W] or [C,H,W], got " + shape_string(x.shape()));
    }
    if (x.dim(x.rank() - 2) != height_ || x.dim(x.rank() - 1) != width_) {
      throw ShapeError("dct2: input " + shape_string(x.shape()) + " does not match basis " +
                       std::to_string(height_) + "x" + std::to_string(width_));
    }
    Tensor out(x.shape());
    const std::size_t plane = height_ * width_;
    for (std::size_t c = 0; c < channels; ++c) {
      detail::ConstRowMap in(x.data() + c * plane, height_, width_);
      detail::RowMap o(out.data() + c * plane, height_, width_);
      if (inverse) {
        o.noalias() = rows_.transpose() * in * cols_;
      } else {
        o.noalias() = rows_ * in * cols_.transpose();
      }
    }
    return out;
  }

  std::size_t height_, width_;
  Eigen::MatrixXd rows_, cols_;
};

inline Tensor dct2(const Tensor& x) {
  return DctBasis(x.dim(x.rank() - 2), x.dim(x.rank() - 1)).forward(x);
}
inline Tensor idct2(const Tensor& c) {
  return DctBasis(c.dim(c.rank() - 2), c.dim(c.rank() - 1)).inverse(c);
}

inline double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

struct LassoConfig {
  double lambda = 1e-3;
  std::size_t iterations = 2000;
  double tolerance = 1e-10;
  /// Monotone FISTA: reject steps that raise the objective.
  bool monotone = false;
};

struct LassoResult {
  Tensor image;
  Tensor coeffs;
  std::vector<double> objective_trace;         ///< per iteration, at the kept iterate
  std::vector<double> measurement_loss_trace;  ///< ||y - A x||^2 alongside objective_trace
  std::size_t iterations = 0;
  double lipschitz = 0.0;
  double measurement_loss = 0.0;  ///< ||y - A x||^2
};

/// Largest eigenvalue of A^T A by power iteration (at most max_iter steps).
inline double power_iteration_norm2(const GaussianOperator& op, std::size_t max_iter = 100,
                                    std::uint64_t seed = 0x5eedULL) {
  Rng rng(seed);
  Tensor v({op.cols()});
  for (double& e : v.values()) e = rng.normal();
  double lambda = 0.0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    v *= 1.0 / norm(v.values());
    Tensor w = op.adjoint(op.apply(v));
    const double next = dot(v.values(), w.values());
    v = std::move(w);
    if (it > 0 && std::abs(next - lambda) <= 1e-12 * next) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return lambda;
}

/// Safety factor on the power-iteration estimate, which approaches ||A||^2 from below.
inline constexpr double kLipschitzMargin = 1.02;

inline LassoResult lasso_recover(const Tensor& y, const GaussianOperator& op, const DctBasis& basis,
                                 const LassoConfig& cfg) {
  if (cfg.iterations < 1) throw ConfigError("lasso: iterations must be >= 1");
  if (!(cfg.lambda >= 0.0)) throw ConfigError("lasso: lambda must be >= 0");
  if (y.size() != op.rows()) {
    throw ShapeError("lasso: y has " + std::to_string(y.size()) + " entries, operator has m = " +
                     std::to_string(op.rows()));
  }
  const std::size_t plane = basis.height() * basis.width();
  if (op.cols() % plane != 0) {
    throw ShapeError("lasso: operator n = " + std::to_string(op.cols()) +
                     " is not a multiple of the DCT grid " + std::to_string(plane));
  }
  const Shape shape{op.cols() / plane, basis.height(), basis.width()};
  const Tensor yv = y.reshaped({y.size()});

  LassoResult res;
  res.lipschitz = kLipschitzMargin * power_iteration_norm2(op);
  const double step = 1.0 / res.lipschitz;

  // B = A idct2, B^T = dct2 A^T.
  auto residual = [&](const Tensor& c) { return op.apply(basis.inverse(c)) - yv; };
  // {||y - B c||^2, 1/2 ||y - B c||^2 + lambda ||c||_1}
  auto evaluate = [&](const Tensor& c) {
    const double loss = squared_norm(residual(c).values());
    double l1 = 0.0;
    for (double v : c.values()) l1 += std::abs(v);
    return std::pair{loss, 0.5 * loss + cfg.lambda * l1};
  };

  Tensor x(shape), x_prev(shape), probe(shape);
  auto [lx, fx] = evaluate(x);
  double t = 1.0;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const Tensor grad = basis.forward(op.adjoint(residual(probe)).reshaped(shape));
    Tensor z(shape);
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] = soft_threshold(probe[i] - step * grad[i], step * cfg.lambda);
    }
    const auto [lz, fz] = evaluate(z);
    const double moved = norm((z - probe).values());
    const double scale = std::max(1.0, norm(probe.values()));
    x_prev = x;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (cfg.monotone) {
      if (fz <= fx) {
        x = z;
        lx = lz;
        fx = fz;
      }
      for (std::size_t i = 0; i < probe.size(); ++i) {
        probe[i] = x[i] + (t / t_next) * (z[i] - x[i]) + ((t - 1.0) / t_next) * (x[i] - x_prev[i]);
      }
    } else {
      x = std::move(z);
      lx = lz;
      fx = fz;
      for (std::size_t i = 0; i < probe.size(); ++i) {
        probe[i] = x[i] + ((t - 1.0) / t_next) * (x[i] - x_prev[i]);
      }
    }
    t = t_next;
    res.objective_trace.push_back(fx);
    res.measurement_loss_trace.push_back(lx);
    res.iterations = it + 1;
    if (it > 0 && moved <= cfg.tolerance * scale) break;
  }
  require_finite(x, "lasso_recover");
  res.image = basis.inverse(x);
  res.coeffs = std::move(x);
  res.measurement_loss = squared_norm(residual(res.coeffs).values());
  return res;
}

struct LassoSweepEntry {
  double lambda;
  LassoResult result;
};

/// One solve per lambda, in input order.
inline std::vector<LassoSweepEntry> lasso_sweep(const Tensor& y, const GaussianOperator& op,
                                                const DctBasis& basis, LassoConfig cfg,
                                                std::span<const double> lambdas) {
  std::vector<LassoSweepEntry> out;
  for (double l : lambdas) {
    cfg.lambda = l;
    out.push_back({l, lasso_recover(y, op, basis, cfg)});
  }
  return out;
}

/// Entry with least measurement loss (no ground truth involved).
inline std::size_t best_lasso_entry(const std::vector<LassoSweepEntry>& entries) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < entries.size(); ++i)
    if (entries[i].result.measurement_loss < entries[best].result.measurement_loss) best = i;
  return best;
}

}  // namespace csdip
