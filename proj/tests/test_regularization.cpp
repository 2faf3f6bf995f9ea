#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "csdip/regularization.hpp"
#include "support/fixtures.hpp"

using namespace csdip;
using fixtures::numeric_gradient;
using fixtures::random_tensor;
using fixtures::relative_error;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig cfg;
  cfg.latent_dim = 3;
  cfg.output_shape = {1, 8, 8};
  cfg.layers = {{3, 2, 4, 1, 0, true, Activation::relu}, {2, 1, 4, 2, 1, false, Activation::tanh}};
  return cfg;
}

GeneratorWeights random_weights(std::uint64_t seed, double shift = 0.0) {
  GeneratorWeights w = zero_weights(small_config());
  Rng rng(seed);
  for (std::size_t l = 0; l < w.layer_count(); ++l)
    for (auto s : w.layer_spans(l))
      for (double& v : s) v = (l + 1) * 0.3 * rng.normal() + shift * (l + 1);
  return w;
}

double tv_oracle(const Tensor& x) {
  double v = 0;
  for (std::size_t c = 0; c < x.dim(0); ++c)
    for (std::size_t i = 0; i < x.dim(1); ++i)
      for (std::size_t j = 0; j < x.dim(2); ++j) {
        if (i + 1 < x.dim(1)) v += std::abs(x.at(c, i + 1, j) - x.at(c, i, j));
        if (j + 1 < x.dim(2)) v += std::abs(x.at(c, i, j + 1) - x.at(c, i, j));
      }
  return v;
}

struct LayerMoments {
  std::vector<double> mean, var;
};

LayerMoments exact_moments(const GeneratorWeights& w) {
  LayerMoments m;
  for (std::size_t l = 0; l < w.layer_count(); ++l) {
    std::vector<double> all;
    for (auto s : w.layer_spans(l)) all.insert(all.end(), s.begin(), s.end());
    const double mean = std::accumulate(all.begin(), all.end(), 0.0) / all.size();
    double var = 0;
    for (double v : all) var += (v - mean) * (v - mean);
    m.mean.push_back(mean);
    m.var.push_back(var / all.size());
  }
  return m;
}

}  // namespace

TEST(TotalVariation, ConstantImage) {
  TvResult r = tv(Tensor({2, 5, 4}, 0.3));
  EXPECT_EQ(r.value, 0.0);
  for (double g : r.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(TotalVariation, SingleDifference) {
  TvResult r = tv(Tensor({1, 1, 2}, std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(r.value, 1.0);
  EXPECT_EQ(r.grad.vector(), (std::vector<double>{-1.0, 1.0}));
}

TEST(TotalVariation, MatchesLoopOracleAndFiniteDifferences) {
  Tensor x = random_tensor({3, 4, 4}, 5);
  TvResult r = tv(x);
  EXPECT_NEAR(r.value, tv_oracle(x), 1e-12);
  auto f = [&] { return tv(x).value; };
  EXPECT_LE(relative_error(r.grad.values(), numeric_gradient(f, x.values())), 1e-6);
  EXPECT_GE(r.value, 0.0);
}

TEST(TotalVariation, ShiftInvariance) {
  // Dyadic values keep x + c exact.
  Rng rng(9);
  Tensor x({2, 6, 5});
  for (double& v : x.values()) v = static_cast<double>(rng.uniform_index(129)) / 64.0 - 1.0;
  Tensor shifted = x;
  for (double& v : shifted.values()) v += 0.5;
  EXPECT_EQ(tv(x).value, tv(shifted).value);
}

TEST(TotalVariation, RejectsSinglePixel) {
  EXPECT_THROW(tv(Tensor({1, 1, 1})), ShapeError);
  EXPECT_THROW(tv(Tensor({4, 4})), ShapeError);
}

TEST(PriorStats, FloorsVariances) {
  PriorStats s({0.0, 1.0}, {0.0, 3.0});
  EXPECT_EQ(s.sigma_diag()[0], kVarianceFloor);
  EXPECT_EQ(s.sigma_diag()[1], 3.0);
  EXPECT_THROW(PriorStats({0.0}, {1.0, 1.0}), ShapeError);
}

TEST(LearnedRegularizer, StandardPriorIsSquaredNorm) {
  GeneratorWeights w = random_weights(1);
  LrResult r = lr_penalty(w, PriorStats::standard(2));
  const auto flat = w.flatten();
  EXPECT_NEAR(r.value, std::inner_product(flat.begin(), flat.end(), flat.begin(), 0.0), 1e-12);
}

TEST(LearnedRegularizer, ZeroAtLayerMeans) {
  GeneratorWeights w = zero_weights(small_config());
  const double c[] = {0.25, -1.5};
  for (std::size_t l = 0; l < 2; ++l)
    for (auto s : w.layer_spans(l)) std::fill(s.begin(), s.end(), c[l]);
  LrResult r = lr_penalty(w, PriorStats({c[0], c[1]}, {0.1, 2.0}));
  EXPECT_EQ(r.value, 0.0);
  for (double g : r.grad.flatten()) EXPECT_EQ(g, 0.0);

  w.layers[1].kernels[0] += 1e-3;
  EXPECT_GT(lr_penalty(w, PriorStats({c[0], c[1]}, {0.1, 2.0})).value, 0.0);
}

TEST(LearnedRegularizer, MatchesExplicitQuadraticForm) {
  GeneratorWeights w = random_weights(2);
  PriorStats stats({0.1, -0.2}, {0.5, 3.0});
  // Expand mu and Sigma to full d-dimensional vectors/matrices.
  std::vector<double> flat = w.flatten();
  const std::size_t d = flat.size();
  Eigen::VectorXd wv = Eigen::Map<Eigen::VectorXd>(flat.data(), d), mu(d);
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(d, d);
  std::size_t i = 0;
  for (std::size_t l = 0; l < 2; ++l) {
    for (auto s : w.layer_spans(l)) {
      for (std::size_t k = 0; k < s.size(); ++k, ++i) {
        mu(i) = stats.mu()[l];
        sigma(i, i) = stats.sigma_diag()[l];
      }
    }
  }
  const Eigen::MatrixXd inv = sigma.inverse();
  const double value = (wv - mu).dot(inv * (wv - mu));
  const Eigen::VectorXd grad = 2.0 * inv * (wv - mu);

  LrResult r = lr_penalty(w, stats);
  EXPECT_NEAR(r.value, value, 1e-10 * std::abs(value));
  const auto g = r.grad.flatten();
  for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(g[k], grad(k), 1e-10 * std::max(1.0, std::abs(grad(k))));

  auto f = [&] {
    GeneratorWeights p = w;
    p.assign_flat(flat);
    return lr_penalty(p, stats).value;
  };
  EXPECT_LE(relative_error(g, numeric_gradient(f, flat)), 1e-6);
}

TEST(LearnedRegularizer, LayerCountMismatch) {
  EXPECT_THROW(lr_penalty(random_weights(1), PriorStats::standard(3)), ShapeError);
}

TEST(EstimatePrior, ConstantLayers) {
  GeneratorWeights w = zero_weights(small_config());
  const double c[] = {0.75, -0.125};
  for (std::size_t l = 0; l < 2; ++l)
    for (auto s : w.layer_spans(l)) std::fill(s.begin(), s.end(), c[l]);
  std::vector<GeneratorWeights> sets{w};
  PriorStats p = estimate_prior(sets, 10, 5, 1);
  EXPECT_EQ(p.mu()[0], c[0]);
  EXPECT_EQ(p.mu()[1], c[1]);
  EXPECT_EQ(p.sigma_diag()[0], kVarianceFloor);
  EXPECT_EQ(p.sigma_diag()[1], kVarianceFloor);
}

TEST(EstimatePrior, FullEnumerationGivesExactMoments) {
  std::vector<GeneratorWeights> sets{random_weights(3, 0.4)};
  const LayerMoments m = exact_moments(sets[0]);
  PriorStats p = estimate_prior(sets, 0, 3, 7, PoolSampling::full_enumeration);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_NEAR(p.mu()[l], m.mean[l], 1e-12);
    EXPECT_NEAR(p.sigma_diag()[l], m.var[l], 1e-12);
  }
}

TEST(EstimatePrior, MoreIterationsConverge) {
  std::vector<GeneratorWeights> sets{random_weights(4, 0.3)};
  const LayerMoments m = exact_moments(sets[0]);
  auto err = [&](const PriorStats& p) {
    double e = 0;
    for (std::size_t l = 0; l < 2; ++l) e += (p.mu()[l] - m.mean[l]) * (p.mu()[l] - m.mean[l]);
    return std::sqrt(e);
  };
  double e_t = 0, e_2t = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    e_t += err(estimate_prior(sets, 8, 10, seed));
    e_2t += err(estimate_prior(sets, 8, 20, seed));
  }
  EXPECT_LE(e_2t, e_t);
}

TEST(EstimatePrior, OrderInvariantGivenPicks) {
  std::vector<GeneratorWeights> sets{random_weights(5), random_weights(6, 0.2), random_weights(7, -0.1)};
  std::vector<GeneratorWeights> reversed(sets.rbegin(), sets.rend());
  const std::vector<std::size_t> picks{0, 2, 1, 1, 0, 2};
  std::vector<std::size_t> mapped;
  for (std::size_t q : picks) mapped.push_back(sets.size() - 1 - q);
  PriorStats a = estimate_prior(sets, 6, picks.size(), 11, PoolSampling::uniform_with_replacement, picks);
  PriorStats b = estimate_prior(reversed, 6, picks.size(), 11, PoolSampling::uniform_with_replacement, mapped);
  EXPECT_EQ(a.mu(), b.mu());
  EXPECT_EQ(a.sigma_diag(), b.sigma_diag());
}

TEST(EstimatePrior, KeepsFullCovarianceForDiagnostics) {
  std::vector<GeneratorWeights> sets{random_weights(8), random_weights(9)};
  PriorStats p = estimate_prior(sets, 16, 12, 3);
  ASSERT_EQ(p.meta().covariance.size(), 4u);
  EXPECT_NEAR(p.meta().covariance[0], p.sigma_diag()[0], 1e-15);
  EXPECT_DOUBLE_EQ(p.meta().covariance[1], p.meta().covariance[2]);
  EXPECT_GE(p.meta().max_abs_offdiag, 0.0);
  EXPECT_EQ(p.meta().Q, 2u);
}

TEST(EstimatePrior, Errors) {
  std::vector<GeneratorWeights> none;
  EXPECT_THROW(estimate_prior(none, 4, 2, 0), ConfigError);
  std::vector<GeneratorWeights> sets{random_weights(1)};
  EXPECT_THROW(estimate_prior(sets, 0, 2, 0), ConfigError);
  EXPECT_THROW(estimate_prior(sets, 4, 0, 0), ConfigError);
  const std::vector<std::size_t> bad{0, 3};
  EXPECT_THROW(estimate_prior(sets, 4, 2, 0, PoolSampling::uniform_with_replacement, bad), ConfigError);
}
