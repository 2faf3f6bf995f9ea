// Acceptance runner: one PASS/FAIL line per criterion. Exit code 1 if any fail.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "csdip/generator.hpp"
#include "csdip/lasso.hpp"
#include "csdip/linops.hpp"
#include "csdip/metrics.hpp"
#include "csdip/regularization.hpp"
#include "csdip/solver.hpp"
#include "csdip/theory.hpp"
#include "support/fixtures.hpp"

using namespace csdip;
using fixtures::random_tensor;
using fixtures::relative_error;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Operator adjointness
// ---------------------------------------------------------------------------

double dot_test(const MeasurementOperator& op, std::uint64_t seed) {
  const Tensor x = random_tensor({input_size(op)}, derive_seed(seed, 1));
  const Tensor r = random_tensor({output_size(op)}, derive_seed(seed, 2));
  const Tensor ax = apply_operator(op, x);
  const Tensor atr = adjoint_operator(op, r);
  const double lhs = dot(ax.values(), r.values());
  const double rhs = dot(x.values(), atr.values());
  return std::abs(lhs - rhs) / (norm(ax.values()) * norm(r.values()));
}

Outcome operator_adjointness() {
  const MeasurementOperator gauss = make_gaussian(200, 784, 11);
  const MeasurementOperator fourier = make_radial_mask(28, 28, 6);
  double worst_g = 0, worst_f = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    worst_g = std::max(worst_g, dot_test(gauss, s));
    worst_f = std::max(worst_f, dot_test(fourier, 1000 + s));
  }
  const FourierOperator full = FourierOperator::full(32, 32);
  const Tensor x = random_tensor({1, 32, 32}, 5);
  const double round_trip = relative_error(full.adjoint(full.apply(x)).values(), x.values());
  return {worst_g <= 1e-10 && worst_f <= 1e-10 && round_trip <= 1e-10,
          fmt("dot test gaussian %.1e fourier %.1e, full-mask round trip %.1e", worst_g, worst_f,
              round_trip)};
}

// ---------------------------------------------------------------------------
// 2. Gradients against central differences
// ---------------------------------------------------------------------------

/// Relative gap between an analytic gradient and central differences of f.
double fd_gap(const std::function<double()>& f, std::span<double> x, std::span<const double> analytic) {
  const auto numeric = fixtures::numeric_gradient(f, x);
  return relative_error(analytic, numeric);
}

Outcome gradient_checks() {
  std::vector<std::pair<std::string, double>> gaps;

  {  // transposed convolution
    Tensor in = random_tensor({3, 4, 4}, 1), k = random_tensor({3, 2, 4, 4}, 2);
    const Tensor g = random_tensor({2, 8, 8}, 3);
    auto f = [&] { return dot(conv_transpose2d(in, k, 2, 1).values(), g.values()); };
    const auto grads = conv_transpose2d_backward(in, k, g, 2, 1);
    gaps.emplace_back("conv_transpose input", fd_gap(f, in.values(), grads.input.values()));
    gaps.emplace_back("conv_transpose kernels", fd_gap(f, k.values(), grads.kernels.values()));
  }
  for (Activation a : {Activation::relu, Activation::tanh}) {
    Tensor x = random_tensor({2, 5, 5}, 4);
    for (double& v : x.values())
      if (std::abs(v) < 1e-3) v = 0.5;
    const Tensor g = random_tensor({2, 5, 5}, 5);
    auto f = [&] { return dot(activation(x, a).values(), g.values()); };
    gaps.emplace_back(std::string(to_string(a)),
                      fd_gap(f, x.values(), activation_backward(x, g, a).values()));
  }
  {  // channel normalization
    Tensor x = random_tensor({3, 5, 5}, 6), gain = random_tensor({3}, 7), bias = random_tensor({3}, 8);
    const Tensor g = random_tensor({3, 5, 5}, 9);
    auto f = [&] { return dot(channel_norm(x, gain, bias).values(), g.values()); };
    const auto grads = channel_norm_backward(x, gain, bias, g);
    gaps.emplace_back("channel_norm input", fd_gap(f, x.values(), grads.input.values()));
    gaps.emplace_back("channel_norm gain", fd_gap(f, gain.values(), grads.gain.values()));
    gaps.emplace_back("channel_norm bias", fd_gap(f, bias.values(), grads.bias.values()));
  }
  {  // total variation
    Tensor img = random_tensor({2, 6, 7}, 10);
    auto f = [&] { return tv(img).value; };
    gaps.emplace_back("tv", fd_gap(f, img.values(), tv(img).grad.values()));
  }

  GeneratorConfig tiny;
  tiny.latent_dim = 8;
  tiny.layers = {{8, 6, 4, 1, 0, true, Activation::relu}, {6, 4, 4, 2, 1, true, Activation::relu},
                 {4, 1, 4, 2, 1, false, Activation::tanh}};
  tiny.output_shape = tiny.composed_shape();
  const GeneratorWeights w0 = init_weights(tiny, 12, 0.3);
  const PriorStats prior({0.01, -0.02, 0.03}, {0.05, 0.2, 0.5});
  {  // learned regularization
    std::vector<double> flat = w0.flatten();
    GeneratorWeights w = w0;
    auto f = [&] {
      w.assign_flat(flat);
      return lr_penalty(w, prior).value;
    };
    w.assign_flat(flat);
    gaps.emplace_back("lr", fd_gap(f, flat, lr_penalty(w, prior).grad.flatten()));
  }
  {  // full objective
    const Tensor z = make_latent(tiny.latent_dim, 13).z;
    const MeasurementOperator op = make_gaussian(40, tiny.output_size(), 14);
    const Tensor y = random_tensor({40}, 15);
    std::vector<double> flat = w0.flatten();
    GeneratorWeights w = w0;
    auto f = [&] {
      w.assign_flat(flat);
      return objective_and_grad(w, z, y, op, 0.05, 0.1, &prior).objective;
    };
    w.assign_flat(flat);
    const auto analytic = objective_and_grad(w, z, y, op, 0.05, 0.1, &prior).grad.flatten();
    gaps.emplace_back(fmt("objective (%zu params)", flat.size()), fd_gap(f, flat, analytic));
  }
  {  // one-hidden-layer loss
    Rng rng(16);
    const Eigen::VectorXd y = theory::random_unit_vector(4, rng);
    theory::OneLayerNet net = theory::sample_net(4, 30, 3, 1.0, rng);
    std::span<double> wspan(net.W.data(), static_cast<std::size_t>(net.W.size()));
    auto f = [&] { return theory::loss_and_grad(net, y).loss; };
    const Eigen::MatrixXd g = theory::loss_and_grad(net, y).grad;
    gaps.emplace_back("theory loss",
                      fd_gap(f, wspan, std::span<const double>(g.data(), static_cast<std::size_t>(g.size()))));
  }

  double worst = 0;
  std::string worst_name;
  for (const auto& [name, gap] : gaps) {
    if (gap >= worst) {
      worst = gap;
      worst_name = name;
    }
  }
  return {worst <= 1e-4, fmt("%zu checks, worst %.1e (%s)", gaps.size(), worst, worst_name.c_str())};
}

// ---------------------------------------------------------------------------
// 3-4. One-hidden-layer theory
// ---------------------------------------------------------------------------

Outcome descent_bound() {
  const auto trials = theory::theorem_trials(10, 2000, 16, 1.0, 5000, 20, 2024);
  std::size_t ok = 0;
  double worst_ratio = 0;
  for (const auto& t : trials) {
    ok += t.trace.bound_holds();
    for (std::size_t i = 0; i < t.trace.residual_norms.size(); ++i)
      worst_ratio = std::max(worst_ratio, t.trace.residual_norms[i] / t.trace.bound_curve[i]);
  }
  return {ok >= 19, fmt("%zu/20 trials under the bound, max residual/bound %.3f", ok, worst_ratio)};
}

Outcome lemma_suite() {
  const auto rep = theory::verify_lemmas(2, 7656, 10, 20, 2024);
  const std::size_t l1 = rep.count(&theory::LemmaTrial::min_singular_ok);
  const std::size_t l3 = rep.count(&theory::LemmaTrial::spectral_ok);
  const std::size_t l4 = rep.count(&theory::LemmaTrial::misfit_ok);
  const std::size_t l5 = rep.count(&theory::LemmaTrial::sign_change_ok);
  return {l1 >= 19 && l3 >= 19 && l4 >= 19 && l5 >= 19,
          fmt("sigma_min %zu/20, spectral %zu/20, misfit %zu/20, sign changes %zu/20", l1, l3, l4, l5)};
}

// ---------------------------------------------------------------------------
// 5. Realizable recovery
// ---------------------------------------------------------------------------

Outcome realizable_recovery() {
  const GeneratorConfig gen = default_generator_config(1, 32, 32);
  SolverConfig cfg;
  cfg.lambda_T = 0.0;
  cfg.steps = 1000;
  cfg.seed = 7;
  const LatentSeed z = make_latent(gen.latent_dim, restart_seeds(cfg.seed, 0).latent);
  const Tensor truth = forward(init_weights(gen, 12345), z.z);
  const MeasurementOperator op = make_gaussian(512, 1024, 99);
  const Tensor y = apply_operator(op, truth);
  const auto res = recover(y, op, gen, cfg);
  const double rel_loss = res.measurement_loss_trace[res.chosen_step] / squared_norm(y.values());
  const double err = mse(res.image, truth);
  return {rel_loss <= 1e-3 && err <= 1e-2,
          fmt("loss/||y||^2 %.2e, mse %.2e at step %zu", rel_loss, err, res.chosen_step)};
}

// ---------------------------------------------------------------------------
// 6. Early stopping under pixel noise
// ---------------------------------------------------------------------------

Outcome early_stopping() {
  const GeneratorConfig gen = default_generator_config(1, 32, 32);
  const std::size_t trials = 10;
  std::size_t ok = 0;
  std::string picks;
  for (std::size_t t = 0; t < trials; ++t) {
    const Tensor truth = fixtures::texture_image(t);
    Tensor noisy = truth;
    Rng rng(derive_seed(606, t));
    for (double& v : noisy.values()) v += 0.1 * rng.normal();
    const MeasurementOperator op = IdentityOperator(truth.size());
    SolverConfig cfg;
    cfg.lambda_T = 0.0;
    cfg.steps = 3000;
    cfg.seed = derive_seed(60, t);
    std::vector<double> true_mse;
    std::vector<double> loss;
    recover(noisy.reshaped({truth.size()}), op, gen, cfg, nullptr,
            [&](std::size_t, std::size_t, const Tensor& img, double l) {
              true_mse.push_back(mse(img, truth));
              loss.push_back(l);
            });
    const std::size_t best = static_cast<std::size_t>(
        std::min_element(true_mse.begin(), true_mse.end()) - true_mse.begin());
    const bool earlier = best + 1 < true_mse.size();
    const bool still_fitting = loss.back() < loss[best];
    ok += earlier && still_fitting;
    picks += fmt("%s%zu", t ? "," : "", best);
  }
  return {ok >= 8, fmt("%zu/%zu trials, best-mse steps [%s] of 3000", ok, trials, picks.c_str())};
}

// ---------------------------------------------------------------------------
// 7. CS-DIP against Lasso-DCT at m = 100
// ---------------------------------------------------------------------------

Outcome baseline_dominance() {
  const GeneratorConfig gen = default_generator_config(1, 28, 28);
  const DctBasis basis(28, 28);
  const std::vector<double> tv_grid{0.0, 1e-3, 1e-2, 1e-1};
  const std::vector<double> lasso_grid = log_grid(1e-4, 1.0, 9);
  double dip_total = 0, lasso_total = 0;
  std::size_t dip_wins = 0;
  for (int d = 0; d < 10; ++d) {
    const Tensor truth = fixtures::digit_image(d);
    const GaussianOperator a = make_gaussian(100, truth.size(), derive_seed(700, d));
    const Tensor y = a.apply(truth.reshaped({truth.size()}));

    SolverConfig cfg;
    cfg.seed = derive_seed(70, d);
    cfg.restarts = 2;
    double dip = INFINITY;
    for (const auto& e : sweep_lambda_tv(y, a, gen, cfg, tv_grid)) dip = std::min(dip, mse(e.result.image, truth));

    double las = INFINITY;
    for (const auto& e : lasso_sweep(y, a, basis, LassoConfig{}, lasso_grid))
      las = std::min(las, mse(e.result.image.reshaped(truth.shape()), truth));
    dip_total += dip;
    lasso_total += las;
    dip_wins += dip < las;
  }
  return {dip_total < lasso_total, fmt("mean mse cs-dip %.4f, lasso-dct %.4f (cs-dip better on %zu/10)",
                                       dip_total / 10, lasso_total / 10, dip_wins)};
}

// ---------------------------------------------------------------------------
// 8. Learned regularization under heavy noise
// ---------------------------------------------------------------------------

Outcome learned_regularization() {
  const GeneratorConfig gen = default_generator_config(1, 32, 32);
  const std::size_t n = gen.output_size(), m = n / 4;

  struct Instance {
    Tensor truth, y;
    MeasurementOperator op;
    std::uint64_t solver_seed;
  };
  auto instance = [&](std::uint64_t id, double sigma2) {
    const std::uint64_t solver_seed = derive_seed(80, id);
    const LatentSeed z = make_latent(gen.latent_dim, restart_seeds(solver_seed, 0).latent);
    Tensor truth = forward(init_weights(gen, derive_seed(81, id)), z.z);
    MeasurementOperator op = make_gaussian(m, n, derive_seed(82, id));
    Tensor y = add_noise(apply_operator(op, truth), {sigma2, derive_seed(83, id)}, m);
    return Instance{std::move(truth), std::move(y), std::move(op), solver_seed};
  };

  std::vector<GeneratorWeights> solved;
  for (std::uint64_t q = 0; q < 5; ++q) {
    const Instance inst = instance(q, 0.0);
    SolverConfig cfg;
    cfg.seed = inst.solver_seed;
    solved.push_back(recover(inst.y, inst.op, gen, cfg).weights);
  }
  const PriorStats prior = estimate_prior(solved, 1000, 200, 88);

  double with_lr = 0, without = 0;
  for (std::uint64_t q = 5; q < 10; ++q) {
    const Instance inst = instance(q, 1000.0);
    SolverConfig cfg;
    cfg.seed = inst.solver_seed;
    without += mse(recover(inst.y, inst.op, gen, cfg).image, inst.truth);
    cfg.lambda_L = 100.0;
    with_lr += mse(recover(inst.y, inst.op, gen, cfg, &prior).image, inst.truth);
  }
  with_lr /= 5;
  without /= 5;
  return {with_lr <= without,
          fmt("mean mse lambda_L=100 %.4f, lambda_L=0 %.4f (%.1f%% decrease)", with_lr, without,
              100.0 * (without - with_lr) / without)};
}

// ---------------------------------------------------------------------------
// 9. Radial mask sizes
// ---------------------------------------------------------------------------

Outcome radial_counts() {
  const std::size_t lines[] = {3, 5, 10, 20};
  const double target[] = {381, 634, 1260, 2500};
  bool pass = true;
  std::string detail;
  for (int i = 0; i < 4; ++i) {
    const auto count = static_cast<double>(make_radial_mask(256, 256, lines[i]).independent_count());
    pass &= std::abs(count - target[i]) <= 0.1 * target[i];
    detail += fmt("%s%zu lines: %.0f", i ? ", " : "", lines[i], count);
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 10. Planted sparse recovery
// ---------------------------------------------------------------------------

Outcome sparse_recovery() {
  const DctBasis basis(16, 16);
  Rng rng(1010);
  Tensor c({1, 16, 16});
  for (std::size_t placed = 0; placed < 5;) {
    const std::size_t i = rng.uniform_index(256);
    if (c[i] != 0.0) continue;
    c[i] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.5 + rng.uniform());
    ++placed;
  }
  const Tensor x = basis.inverse(c);
  const GaussianOperator a = make_gaussian(120, 256, 1011);
  const Tensor y = a.apply(x.reshaped({256}));
  double best = INFINITY, best_lambda = 0;
  for (const auto& e : lasso_sweep(y, a, basis, LassoConfig{}, log_grid(1e-5, 1e-1, 9))) {
    const double err = relative_error(e.result.image.values(), x.values());
    if (err < best) {
      best = err;
      best_lambda = e.lambda;
    }
  }
  return {best <= 1e-2, fmt("relative error %.2e at lambda %.0e", best, best_lambda)};
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion criteria[] = {
      {1, "operator adjointness", 5, operator_adjointness},
      {2, "gradient checks", 60, gradient_checks},
      {3, "descent bound", 120, descent_bound},
      {4, "random-init lemmas", 120, lemma_suite},
      {5, "realizable recovery", 180, realizable_recovery},
      {6, "early stopping", 300, early_stopping},
      {7, "baseline dominance", 1200, baseline_dominance},
      {8, "learned regularization", 1800, learned_regularization},
      {9, "radial mask counts", 1, radial_counts},
      {10, "sparse recovery", 30, sparse_recovery},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.limit_seconds;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("%s %2d %s: %s [%.2f s, limit %.0f s%s]\n", pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs, c.limit_seconds, in_time ? "" : ", over time");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
