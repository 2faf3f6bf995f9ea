#pragma once

// Fitting generator weights to measurements:
//   minimize ||y - A G(z; w)||^2 + lambda_T TV(G(z; w)) + lambda_L LR(w)
// with RMSProp plus momentum, random restarts, and selection of the iterate
// with least measurement loss over the final stop_window steps.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "csdip/generator.hpp"
#include "csdip/linops.hpp"
#include "csdip/parallel.hpp"
#include "csdip/random.hpp"
#include "csdip/regularization.hpp"
#include "csdip/tensor.hpp"

namespace csdip {

struct SolverConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::size_t steps = 1000;
  double lambda_T = 0.01;
  double lambda_L = 0.0;
  std::size_t restarts = 1;
  std::size_t stop_window = 20;
  double rms_decay = 0.99;
  double rms_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("solver: learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("solver: momentum must be in [0, 1)");
    if (!(rms_decay > 0.0 && rms_decay < 1.0)) throw ConfigError("solver: rms_decay must be in (0, 1)");
    if (!(rms_eps > 0.0)) throw ConfigError("solver: rms_eps must be > 0");
    if (!(lambda_T >= 0.0) || !(lambda_L >= 0.0)) throw ConfigError("solver: lambdas must be >= 0");
    if (restarts < 1) throw ConfigError("solver: restarts must be >= 1");
    if (stop_window < 1 || steps < stop_window) {
      throw ConfigError("solver: steps (" + std::to_string(steps) + ") must be >= stop_window (" +
                        std::to_string(stop_window) + ")");
    }
  }
};

struct ObjectiveEval {
  double objective = 0.0;
  double measurement_loss = 0.0;  ///< ||y - A G||^2
  double tv = 0.0;
  double lr = 0.0;
  Tensor image;                   ///< G(z; w)
  GeneratorWeights grad;
};

/// Objective value and weight gradient. stats must be given iff lambda_L > 0.
inline ObjectiveEval objective_and_grad(const GeneratorWeights& weights, const Tensor& z,
                                        const Tensor& y, const MeasurementOperator& op,
                                        double lambda_T, double lambda_L,
                                        const PriorStats* stats = nullptr) {
  if (lambda_L > 0.0 && stats == nullptr) {
    throw ConfigError("objective: lambda_L > 0 requires prior statistics");
  }
  if (output_size(op) != y.size()) {
    throw ShapeError("objective: operator produces " + std::to_string(output_size(op)) +
                     " measurements, y has " + std::to_string(y.size()));
  }
  ForwardCache cache = forward_cached(weights, z);
  const Tensor& image = cache.output;

  Tensor residual = y.reshaped({y.size()}) - apply_operator(op, image);  // y - A G
  ObjectiveEval e;
  e.measurement_loss = squared_norm(residual.values());
  Tensor grad_image = adjoint_operator(op, residual).reshaped(image.shape()) * -2.0;
  if (lambda_T > 0.0) {
    TvResult t = tv(image);
    e.tv = t.value;
    grad_image += t.grad * lambda_T;
  }
  e.grad = backward(weights, cache, grad_image);
  if (lambda_L > 0.0) {
    LrResult lr = lr_penalty(weights, *stats);
    e.lr = lr.value;
    auto dst = e.grad.spans();
    auto src = lr.grad.spans();
    for (std::size_t t = 0; t < dst.size(); ++t)
      for (std::size_t i = 0; i < dst[t].size(); ++i) dst[t][i] += lambda_L * src[t][i];
  }
  e.objective = e.measurement_loss + lambda_T * e.tv + lambda_L * e.lr;
  e.image = std::move(cache.output);
  return e;
}

/// Per-parameter RMSProp accumulators (s) and momentum buffers (b).
struct RmsPropState {
  GeneratorWeights square_avg;
  GeneratorWeights momentum_buf;

  static RmsPropState zeros(const GeneratorWeights& like) {
    return {like.zeros_like(), like.zeros_like()};
  }
};

/// s <- decay*s + (1-decay)*g^2;  b <- momentum*b + g/sqrt(s + eps);  w <- w - lr*b.
inline void rmsprop_update(GeneratorWeights& weights, const GeneratorWeights& grads,
                           RmsPropState& state, const SolverConfig& cfg) {
  weights.require_same_layout(grads, "rmsprop_update");
  weights.require_same_layout(state.square_avg, "rmsprop_update");
  weights.require_same_layout(state.momentum_buf, "rmsprop_update");
  auto w = weights.spans();
  auto g = grads.spans();
  auto s = state.square_avg.spans();
  auto b = state.momentum_buf.spans();
  const double decay = cfg.rms_decay, mom = cfg.momentum, lr = cfg.learning_rate, eps = cfg.rms_eps;
  for (std::size_t t = 0; t < w.size(); ++t) {
    double* __restrict wp = w[t].data();
    const double* __restrict gp = g[t].data();
    double* __restrict sp = s[t].data();
    double* __restrict bp = b[t].data();
    for (std::size_t i = 0, n = w[t].size(); i < n; ++i) {
      const double gi = gp[i];
      sp[i] = decay * sp[i] + (1.0 - decay) * gi * gi;
      bp[i] = mom * bp[i] + gi / std::sqrt(sp[i] + eps);
      wp[i] -= lr * bp[i];
    }
  }
}

struct RestartSeeds {
  std::uint64_t weights;
  std::uint64_t latent;
};

/// Restart r draws fresh weights and a fresh latent, both derived from the run seed.
inline RestartSeeds restart_seeds(std::uint64_t seed, std::size_t restart) {
  return {derive_seed(seed, 0x77656967ULL, restart), derive_seed(seed, 0x6c6174ULL, restart)};
}

struct RestartSummary {
  std::size_t index = 0;
  bool ok = false;
  double best_loss = std::numeric_limits<double>::infinity();
  std::string diagnostic;
};

struct ReconstructionResult {
  Tensor image;
  std::vector<double> measurement_loss_trace;
  std::vector<double> objective_trace;
  std::size_t chosen_step = 0;
  std::size_t restart_index = 0;
  double final_objective = 0.0;
  GeneratorWeights weights;  ///< weights of the chosen iterate
  LatentSeed latent;
  std::vector<RestartSummary> restarts;
};

/// Called once per step with the current generator output (before the update).
using StepObserver =
    std::function<void(std::size_t restart, std::size_t step, const Tensor& image, double measurement_loss)>;

namespace detail {

struct RestartOutcome {
  RestartSummary summary;
  std::optional<ReconstructionResult> result;
};

inline RestartOutcome run_restart(const Tensor& y, const MeasurementOperator& op,
                                  const GeneratorConfig& gen, const SolverConfig& cfg,
                                  const PriorStats* stats, std::size_t r,
                                  const StepObserver& observer) {
  const RestartSeeds seeds = restart_seeds(cfg.seed, r);
  ReconstructionResult res;
  res.restart_index = r;
  res.latent = make_latent(gen.latent_dim, seeds.latent);
  GeneratorWeights w = init_weights(gen, seeds.weights);
  RmsPropState state = RmsPropState::zeros(w);
  res.measurement_loss_trace.reserve(cfg.steps);
  res.objective_trace.reserve(cfg.steps);

  RestartOutcome out;
  out.summary.index = r;
  const std::size_t window_start = cfg.steps - cfg.stop_window;
  double best = std::numeric_limits<double>::infinity();
  try {
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      ObjectiveEval e = objective_and_grad(w, res.latent.z, y, op, cfg.lambda_T, cfg.lambda_L, stats);
      if (!std::isfinite(e.objective)) {
        throw NumericalError("non-finite objective at step " + std::to_string(step));
      }
      res.measurement_loss_trace.push_back(e.measurement_loss);
      res.objective_trace.push_back(e.objective);
      if (observer) observer(r, step, e.image, e.measurement_loss);
      if (step >= window_start && e.measurement_loss < best) {
        best = e.measurement_loss;
        res.chosen_step = step;
        res.final_objective = e.objective;
        res.image = std::move(e.image);
        res.weights = w;
      }
      rmsprop_update(w, e.grad, state, cfg);
    }
  } catch (const NumericalError& ex) {
    out.summary.diagnostic = "restart " + std::to_string(r) + ": " + ex.what();
    return out;
  }
  out.summary.ok = true;
  out.summary.best_loss = best;
  out.result = std::move(res);
  return out;
}

}  // namespace detail

/// Reconstructs an image from y = A x + noise. The ground truth is never an
/// input. Restarts run in parallel and the winner is the lowest window loss,
/// ties going to the lower restart index.
inline ReconstructionResult recover(const Tensor& y, const MeasurementOperator& op,
                                    const GeneratorConfig& gen, const SolverConfig& cfg,
                                    const PriorStats* stats = nullptr,
                                    const StepObserver& observer = {}) {
  cfg.validate();
  gen.validate();
  if (cfg.lambda_L > 0.0 && stats == nullptr) {
    throw ConfigError("recover: lambda_L > 0 requires prior statistics");
  }
  if (stats != nullptr && stats->layer_count() != gen.layers.size()) {
    throw ShapeError("recover: prior has " + std::to_string(stats->layer_count()) +
                     " layers, generator has " + std::to_string(gen.layers.size()));
  }
  if (output_size(op) != y.size()) {
    throw ShapeError("recover: operator produces " + std::to_string(output_size(op)) +
                     " measurements, y has " + std::to_string(y.size()));
  }
  if (input_size(op) != gen.output_size()) {
    throw ShapeError("recover: operator expects " + std::to_string(input_size(op)) +
                     " signal entries, generator produces " + shape_string(gen.output_shape));
  }

  std::vector<detail::RestartOutcome> outcomes(cfg.restarts);
  parallel_for(cfg.restarts, [&](std::size_t r) {
    outcomes[r] = detail::run_restart(y, op, gen, cfg, stats, r, observer);
  });

  std::optional<std::size_t> winner;
  std::vector<RestartSummary> summaries;
  std::string diagnostics;
  for (std::size_t r = 0; r < outcomes.size(); ++r) {
    summaries.push_back(outcomes[r].summary);
    if (!outcomes[r].summary.ok) {
      diagnostics += outcomes[r].summary.diagnostic + "; ";
      continue;
    }
    if (!winner || outcomes[r].summary.best_loss < outcomes[*winner].summary.best_loss) winner = r;
  }
  if (!winner) throw NumericalError("recover: all restarts failed: " + diagnostics);
  ReconstructionResult result = std::move(*outcomes[*winner].result);
  result.restarts = std::move(summaries);
  return result;
}

struct SweepEntry {
  double lambda_T;
  ReconstructionResult result;
};

/// Runs recover once per lambda_T. Entries keep the input order; the best by
/// selected measurement loss is best_sweep_entry().
inline std::vector<SweepEntry> sweep_lambda_tv(const Tensor& y, const MeasurementOperator& op,
                                               const GeneratorConfig& gen, SolverConfig cfg,
                                               std::span<const double> lambdas,
                                               const PriorStats* stats = nullptr) {
  std::vector<SweepEntry> out;
  for (double l : lambdas) {
    cfg.lambda_T = l;
    out.push_back({l, recover(y, op, gen, cfg, stats)});
  }
  return out;
}

inline std::size_t best_sweep_entry(const std::vector<SweepEntry>& entries) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < entries.size(); ++i) {
    const auto& r = entries[i].result;
    const auto& b = entries[best].result;
    if (r.measurement_loss_trace[r.chosen_step] < b.measurement_loss_trace[b.chosen_step]) best = i;
  }
  return best;
}

/// log-spaced grid lo..hi with `count` points.
inline std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  std::vector<double> g;
  if (count == 1) return {lo};
  for (std::size_t i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(count - 1);
    g.push_back(std::pow(10.0, std::log10(lo) + t * (std::log10(hi) - std::log10(lo))));
  }
  return g;
}

}  // namespace csdip
