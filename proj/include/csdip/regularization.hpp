#pragma once

// Image and weight penalties: anisotropic total variation of the generator
// output, and the layer-wise Gaussian weight prior (w - mu)^T Sigma^{-1} (w - mu)
// together with its sampling estimator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csdip/generator.hpp"
#include "csdip/random.hpp"
#include "csdip/tensor.hpp"

namespace csdip {

struct TvResult {
  double value = 0.0;
  Tensor grad;
};

/// Anisotropic TV: sum of |vertical| and |horizontal| neighbour differences
/// over all channels. The gradient is the sign subgradient with sign(0) = 0.
inline TvResult tv(const Tensor& image) {
  detail::require_rank(image, 3, "tv", "image");
  const std::size_t channels = image.dim(0), height = image.dim(1), width = image.dim(2);
  if (height * width < 2) throw ShapeError("tv: image " + shape_string(image.shape()) + " has a single pixel");
  auto sign = [](double d) { return static_cast<double>((d > 0.0) - (d < 0.0)); };

  TvResult r{0.0, Tensor(image.shape())};
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t h = 0; h < height; ++h) {
      for (std::size_t w = 0; w < width; ++w) {
        const double v = image.at(c, h, w);
        if (h + 1 < height) {
          const double d = image.at(c, h + 1, w) - v;
          r.value += std::abs(d);
          r.grad.at(c, h + 1, w) += sign(d);
          r.grad.at(c, h, w) -= sign(d);
        }
        if (w + 1 < width) {
          const double d = image.at(c, h, w + 1) - v;
          r.value += std::abs(d);
          r.grad.at(c, h, w + 1) += sign(d);
          r.grad.at(c, h, w) -= sign(d);
        }
      }
    }
  }
  return r;
}

inline constexpr double kVarianceFloor = 1e-6;

/// Provenance of an estimated prior.
struct PriorMeta {
  std::size_t Q = 0, S = 0, T = 0;
  std::uint64_t seed = 0;
  /// Averaged full L x L covariance (row-major); only its diagonal is used.
  std::vector<double> covariance;
  double max_abs_offdiag = 0.0;
};

/// Per-layer mean and (diagonal) variance of the weight prior.
class PriorStats {
 public:
  PriorStats(std::vector<double> mu, std::vector<double> sigma_diag, PriorMeta meta = {})
      : mu_(std::move(mu)), sigma_(std::move(sigma_diag)), meta_(std::move(meta)) {
    if (mu_.size() != sigma_.size()) {
      throw ShapeError("PriorStats: mu has " + std::to_string(mu_.size()) +
                       " layers but sigma_diag has " + std::to_string(sigma_.size()));
    }
    if (mu_.empty()) throw ConfigError("PriorStats: at least one layer is required");
    for (double& s : sigma_) {
      if (!std::isfinite(s)) throw NumericalError("PriorStats: non-finite variance");
      s = std::max(s, kVarianceFloor);
    }
  }

  /// mu = 0, Sigma = I: plain l2 weight decay.
  static PriorStats standard(std::size_t layer_count) {
    return PriorStats(std::vector<double>(layer_count, 0.0), std::vector<double>(layer_count, 1.0));
  }

  std::size_t layer_count() const noexcept { return mu_.size(); }
  const std::vector<double>& mu() const noexcept { return mu_; }
  const std::vector<double>& sigma_diag() const noexcept { return sigma_; }
  const PriorMeta& meta() const noexcept { return meta_; }

 private:
  std::vector<double> mu_;
  std::vector<double> sigma_;
  PriorMeta meta_;
};

struct LrResult {
  double value = 0.0;
  GeneratorWeights grad;
};

/// sum_l (1/sigma_l) sum_{i in layer l} (w_i - mu_l)^2, with its gradient.
/// Normalization gains and biases belong to their layer's pool.
inline LrResult lr_penalty(const GeneratorWeights& weights, const PriorStats& stats) {
  if (stats.layer_count() != weights.layer_count()) {
    throw ShapeError("lr_penalty: prior has " + std::to_string(stats.layer_count()) +
                     " layers, weights have " + std::to_string(weights.layer_count()));
  }
  LrResult r{0.0, weights.zeros_like()};
  for (std::size_t l = 0; l < weights.layer_count(); ++l) {
    const double mu = stats.mu()[l];
    const double inv_var = 1.0 / stats.sigma_diag()[l];
    auto src = weights.layer_spans(l);
    auto dst = r.grad.layer_spans(l);
    for (std::size_t t = 0; t < src.size(); ++t) {
      for (std::size_t i = 0; i < src[t].size(); ++i) {
        const double d = src[t][i] - mu;
        r.value += inv_var * d * d;
        dst[t][i] = 2.0 * inv_var * d;
      }
    }
  }
  return r;
}

enum class PoolSampling {
  uniform_with_replacement,
  /// Test hook: each row of M_t is the whole layer instead of S draws.
  full_enumeration,
};

namespace detail {

/// Layer l of w as one indexable pool.
class LayerPool {
 public:
  LayerPool(const GeneratorWeights& w, std::size_t l) : parts_(w.layer_spans(l)) {
    for (auto p : parts_) size_ += p.size();
  }
  std::size_t size() const noexcept { return size_; }
  double operator[](std::size_t i) const {
    for (auto p : parts_) {
      if (i < p.size()) return p[i];
      i -= p.size();
    }
    return 0.0;
  }

 private:
  std::vector<std::span<const double>> parts_;
  std::size_t size_ = 0;
};

}  // namespace detail

/// Layer-wise prior estimate from Q solved weight sets. For t = 1..T: pick a
/// set q uniformly, fill row l of M_t with S uniform draws from layer l of w_q,
/// take mu_t as the row means and Sigma_t = M_t M_t^T / S - mu_t mu_t^T. The
/// result averages over t and keeps diag(Sigma), floored at 1e-6.
///
/// Set picks and element draws use separate streams of `seed`. A non-empty
/// `picks` (length T) replaces the random set choice.
inline PriorStats estimate_prior(std::span<const GeneratorWeights> weight_sets, std::size_t S,
                                 std::size_t T, std::uint64_t seed,
                                 PoolSampling sampling = PoolSampling::uniform_with_replacement,
                                 std::span<const std::size_t> picks = {}) {
  if (weight_sets.empty()) throw ConfigError("estimate_prior: weight_sets is empty");
  if (sampling == PoolSampling::uniform_with_replacement && S < 2) {
    throw ConfigError("estimate_prior: S must be >= 2");
  }
  if (T < 1) throw ConfigError("estimate_prior: T must be >= 1");
  if (!picks.empty() && picks.size() != T) {
    throw ConfigError("estimate_prior: picks has " + std::to_string(picks.size()) + " entries, T = " +
                      std::to_string(T));
  }
  const std::size_t L = weight_sets.front().layer_count();
  for (const auto& w : weight_sets) w.require_same_layout(weight_sets.front(), "estimate_prior");

  Rng pick_rng(derive_seed(seed, 0x7069636bULL));
  Rng draw_rng(derive_seed(seed, 0x64726177ULL));
  std::vector<double> mu(L, 0.0);
  std::vector<double> cov(L * L, 0.0);
  std::vector<std::vector<double>> rows(L);
  std::vector<double> mu_t(L);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t q = picks.empty() ? pick_rng.uniform_index(weight_sets.size()) : picks[t];
    if (q >= weight_sets.size()) throw ConfigError("estimate_prior: pick index out of range");
    const auto& w = weight_sets[q];
    for (std::size_t l = 0; l < L; ++l) {
      detail::LayerPool pool(w, l);
      auto& row = rows[l];
      if (sampling == PoolSampling::full_enumeration) {
        row.resize(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) row[i] = pool[i];
      } else {
        row.resize(S);
        for (auto& v : row) v = pool[draw_rng.uniform_index(pool.size())];
      }
      double s = 0.0;
      for (double v : row) s += v;
      mu_t[l] = s / static_cast<double>(row.size());
    }
    for (std::size_t a = 0; a < L; ++a) {
      for (std::size_t b = 0; b < L; ++b) {
        // Rows only share a length in sampling mode; enumeration yields the diagonal alone.
        if (a != b && rows[a].size() != rows[b].size()) continue;
        double s = 0.0;
        for (std::size_t i = 0; i < rows[a].size(); ++i) s += rows[a][i] * rows[b][i];
        cov[a * L + b] += s / static_cast<double>(rows[a].size()) - mu_t[a] * mu_t[b];
      }
    }
    for (std::size_t l = 0; l < L; ++l) mu[l] += mu_t[l];
  }
  const double inv_t = 1.0 / static_cast<double>(T);
  for (double& v : mu) v *= inv_t;
  for (double& v : cov) v *= inv_t;

  PriorMeta meta{weight_sets.size(), S, T, seed, cov, 0.0};
  std::vector<double> diag(L);
  for (std::size_t a = 0; a < L; ++a) {
    diag[a] = cov[a * L + a];
    for (std::size_t b = 0; b < L; ++b)
      if (a != b) meta.max_abs_offdiag = std::max(meta.max_abs_offdiag, std::abs(cov[a * L + b]));
  }
  return PriorStats(std::move(mu), std::move(diag), std::move(meta));
}

}  // namespace csdip
