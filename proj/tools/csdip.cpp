// csdip: measurement generation, reconstruction, prior estimation, the Lasso
// baseline, one-hidden-layer checks and MSE tables.

#include <glob.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csdip/generator.hpp"
#include "csdip/io.hpp"
#include "csdip/lasso.hpp"
#include "csdip/measurement.hpp"
#include "csdip/metrics.hpp"
#include "csdip/parallel.hpp"
#include "csdip/regularization.hpp"
#include "csdip/solver.hpp"
#include "csdip/theory.hpp"

#ifndef CSDIP_VERSION
#define CSDIP_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace csdip;

namespace {

// Exit codes, one per error class.
enum Exit : int { ok = 0, usage = 2, config = 3, shape = 4, io = 5, numerical = 6, internal = 70 };

[[noreturn]] void fail(Exit code, std::string_view kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
  std::exit(code);
}

json manifest(const std::string& command, int argc, char** argv) {
  json m;
  m["command"] = command;
  m["argv"] = std::vector<std::string>(argv, argv + argc);
  m["version"] = CSDIP_VERSION;
  m["threads"] = worker_limit();
  return m;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << std::setprecision(17);
  return out;
}

json solver_config_json(const SolverConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"momentum", c.momentum},   {"steps", c.steps},
          {"lambda_T", c.lambda_T},           {"lambda_L", c.lambda_L},   {"restarts", c.restarts},
          {"stop_window", c.stop_window},     {"rms_decay", c.rms_decay}, {"rms_eps", c.rms_eps},
          {"seed", c.seed}};
}

void write_trace(const fs::path& path, const std::vector<double>& loss, const std::vector<double>& objective) {
  auto out = open_out(path);
  out << "step,measurement_loss,objective\n";
  for (std::size_t i = 0; i < loss.size(); ++i) out << i << ',' << loss[i] << ',' << objective[i] << '\n';
}

/// Shell-style pattern expansion, sorted. A pattern without matches is an error.
std::vector<fs::path> expand(const std::vector<std::string>& patterns) {
  std::vector<fs::path> out;
  for (const auto& p : patterns) {
    glob_t g{};
    const int rc = ::glob(p.c_str(), 0, nullptr, &g);
    if (rc == GLOB_NOMATCH) {
      globfree(&g);
      throw IoError("no files match '" + p + "'");
    }
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    globfree(&g);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------

struct MeasureArgs {
  std::string image, kind = "gaussian", out;
  std::size_t m = 0, lines = 0;
  double sigma2 = 0.0;
  std::uint64_t seed = 0;
};

void run_measure(const MeasureArgs& a, json man) {
  const Tensor img = read_image(a.image);
  const MeasurementSet set = measure(img, {a.kind, a.m, a.lines, a.sigma2, a.seed});
  write_measurements(a.out, set);
  man["operator"] = set.descriptor;
  man["inputs"] = {{"image", a.image}};
  man["outputs"] = {{"measurements", a.out}};
  write_json(a.out + ".manifest.json", man);
}

struct RecoverArgs {
  std::string measurements, gen_config, prior, out;
  SolverConfig solver;
  bool grid = false;
  double grid_lo = 1e-4, grid_hi = 1.0;
  std::size_t grid_count = 5;
};

void run_recover(const RecoverArgs& a, json man) {
  const MeasurementSet set = read_measurements(a.measurements);
  const GeneratorConfig gen = a.gen_config.empty()
                                  ? default_generator_config(set.image_shape[0], set.image_shape[1],
                                                             set.image_shape[2])
                                  : generator_config_from_json(read_json(a.gen_config));
  if (gen.output_shape != set.image_shape) {
    throw ShapeError("generator output " + shape_string(gen.output_shape) + " does not match image " +
                     shape_string(set.image_shape));
  }
  std::optional<PriorStats> prior;
  if (!a.prior.empty()) prior = prior_stats_from_json(read_json(a.prior));
  const PriorStats* stats = prior ? &*prior : nullptr;
  const fs::path dir(a.out);
  fs::create_directories(dir);

  ReconstructionResult res;
  SolverConfig chosen = a.solver;
  if (a.grid) {
    const auto lambdas = log_grid(a.grid_lo, a.grid_hi, a.grid_count);
    auto entries = sweep_lambda_tv(set.y, set.op, gen, a.solver, lambdas, stats);
    auto out = open_out(dir / "grid.csv");
    out << "lambda_T,measurement_loss,chosen_step,restart\n";
    for (const auto& e : entries) {
      const auto& r = e.result;
      out << e.lambda_T << ',' << r.measurement_loss_trace[r.chosen_step] << ',' << r.chosen_step << ','
          << r.restart_index << '\n';
    }
    const std::size_t best = best_sweep_entry(entries);
    chosen.lambda_T = entries[best].lambda_T;
    res = std::move(entries[best].result);
    man["grid"] = {{"lambdas", lambdas}, {"selected", chosen.lambda_T}};
  } else {
    res = recover(set.y, set.op, gen, a.solver, stats);
  }

  write_image(dir / "reconstruction.png", res.image);
  write_trace(dir / "loss.csv", res.measurement_loss_trace, res.objective_trace);
  write_weights(dir / "weights.bin", res.weights, &res.latent);

  json restarts = json::array();
  for (const auto& r : res.restarts) {
    restarts.push_back({{"index", r.index},
                        {"ok", r.ok},
                        {"best_loss", r.ok ? json(r.best_loss) : json(nullptr)},
                        {"weights_seed", restart_seeds(a.solver.seed, r.index).weights},
                        {"latent_seed", restart_seeds(a.solver.seed, r.index).latent},
                        {"diagnostic", r.diagnostic}});
  }
  man["method"] = "cs-dip";
  man["operator"] = set.descriptor;
  man["generator"] = to_json(gen);
  man["solver"] = solver_config_json(chosen);
  if (prior) man["prior"] = to_json(*prior);
  man["result"] = {{"restart_index", res.restart_index},
                   {"chosen_step", res.chosen_step},
                   {"measurement_loss", res.measurement_loss_trace[res.chosen_step]},
                   {"final_objective", res.final_objective},
                   {"restarts", restarts}};
  man["inputs"] = {{"measurements", a.measurements}, {"gen_config", a.gen_config}, {"prior", a.prior}};
  man["outputs"] = {{"image", (dir / "reconstruction.png").string()},
                    {"trace", (dir / "loss.csv").string()},
                    {"weights", (dir / "weights.bin").string()}};
  write_json(dir / "manifest.json", man);
}

struct PriorArgs {
  std::vector<std::string> weights;
  std::size_t S = 1000, T = 200;
  std::uint64_t seed = 0;
  std::string out;
};

void run_estimate_prior(const PriorArgs& a, json man) {
  const auto files = expand(a.weights);
  std::vector<GeneratorWeights> sets;
  for (const auto& f : files) sets.push_back(read_weights(f));
  const PriorStats stats = estimate_prior(sets, a.S, a.T, a.seed);
  write_json(a.out, to_json(stats));
  std::vector<std::string> names;
  for (const auto& f : files) names.push_back(f.string());
  man["inputs"] = {{"weights", names}};
  man["S"] = a.S;
  man["T"] = a.T;
  man["seed"] = a.seed;
  man["outputs"] = {{"prior", a.out}};
  write_json(a.out + ".manifest.json", man);
}

struct LassoArgs {
  std::string measurements, out;
  std::optional<double> lambda;
  std::size_t iterations = 2000;
  double tolerance = 1e-10;
};

void run_lasso(const LassoArgs& a, json man) {
  const MeasurementSet set = read_measurements(a.measurements);
  const auto* op = std::get_if<GaussianOperator>(&set.op);
  if (op == nullptr) throw ConfigError("baseline-lasso needs gaussian measurements, got " + kind_name(set.op));
  const DctBasis basis(set.image_shape[1], set.image_shape[2]);
  LassoConfig cfg;
  cfg.iterations = a.iterations;
  cfg.tolerance = a.tolerance;
  const fs::path dir(a.out);
  fs::create_directories(dir);

  LassoResult res;
  if (a.lambda) {
    cfg.lambda = *a.lambda;
    res = lasso_recover(set.y, *op, basis, cfg);
  } else {
    const auto lambdas = log_grid(1e-4, 1.0, 5);
    auto entries = lasso_sweep(set.y, *op, basis, cfg, lambdas);
    auto out = open_out(dir / "grid.csv");
    out << "lambda,measurement_loss,iterations\n";
    for (const auto& e : entries)
      out << e.lambda << ',' << e.result.measurement_loss << ',' << e.result.iterations << '\n';
    const std::size_t best = best_lasso_entry(entries);
    cfg.lambda = entries[best].lambda;
    res = std::move(entries[best].result);
    man["grid"] = {{"lambdas", lambdas}, {"selected", cfg.lambda}};
  }

  write_image(dir / "reconstruction.png", res.image.reshaped(set.image_shape));
  write_trace(dir / "loss.csv", res.measurement_loss_trace, res.objective_trace);
  man["method"] = "lasso-dct";
  man["operator"] = set.descriptor;
  man["lasso"] = {{"lambda", cfg.lambda},
                  {"iterations", cfg.iterations},
                  {"tolerance", cfg.tolerance},
                  {"iterations_run", res.iterations},
                  {"lipschitz", res.lipschitz}};
  man["result"] = {{"measurement_loss", res.measurement_loss}};
  man["inputs"] = {{"measurements", a.measurements}};
  man["outputs"] = {{"image", (dir / "reconstruction.png").string()}, {"trace", (dir / "loss.csv").string()}};
  write_json(dir / "manifest.json", man);
}

struct TheoryArgs {
  std::size_t n = 10, d = 2000, k = 16, trials = 20, tau_max = 5000;
  double eta_bar = 1.0;
  std::size_t sign_change_width = 4000;
  double radius = 0.1;
  std::uint64_t seed = 0;
  std::string out;
};

void run_theory(const TheoryArgs& a, json man) {
  const fs::path dir(a.out);
  fs::create_directories(dir);
  json summary;

  const auto trials = theory::theorem_trials(a.n, a.d, a.k, a.eta_bar, a.tau_max, a.trials, a.seed);
  {
    auto out = open_out(dir / "descent.csv");
    auto curve = open_out(dir / "descent_trajectory.csv");
    out << "trial,quantity,bound,pass\n";
    curve << "trial,tau,residual,bound\n";
    std::size_t passed = 0;
    for (const auto& t : trials) {
      const auto& tr = t.trace;
      std::size_t worst = 0;
      for (std::size_t i = 0; i < tr.residual_norms.size(); ++i) {
        if (tr.residual_norms[i] / tr.bound_curve[i] > tr.residual_norms[worst] / tr.bound_curve[worst]) worst = i;
        curve << t.trial << ',' << i << ',' << tr.residual_norms[i] << ',' << tr.bound_curve[i] << '\n';
      }
      const bool ok = tr.bound_holds();
      passed += ok;
      out << t.trial << ',' << tr.residual_norms[worst] << ',' << tr.bound_curve[worst] << ',' << ok << '\n';
    }
    summary["descent"] = {{"passed", passed}, {"trials", a.trials}, {"step", trials.empty() ? 0.0 : trials[0].trace.step}};
  }

  const auto rep = theory::verify_lemmas(a.n, a.d, a.k, a.trials, a.seed, {a.sign_change_width, a.radius});
  auto write_check = [&](const std::string& name, auto quantity, auto bound, bool (theory::LemmaTrial::*ok)() const) {
    auto out = open_out(dir / (name + ".csv"));
    out << "trial,quantity,bound,pass\n";
    for (const auto& t : rep.trials) out << t.trial << ',' << t.*quantity << ',' << t.*bound << ',' << (t.*ok)() << '\n';
    summary[name] = {{"passed", rep.count(ok)}, {"trials", a.trials}};
  };
  using LT = theory::LemmaTrial;
  write_check("min_singular", &LT::sigma_min, &LT::min_singular_bound, &LT::min_singular_ok);
  write_check("spectral", &LT::spectral, &LT::spectral_bound, &LT::spectral_ok);
  write_check("misfit", &LT::misfit, &LT::misfit_bound, &LT::misfit_ok);
  write_check("sign_changes", &LT::sign_changes, &LT::sign_change_bound, &LT::sign_change_ok);
  summary["min_singular"]["width_condition_met"] = a.d >= 3828 * a.n;

  man["parameters"] = {{"n", a.n},         {"d", a.d},           {"k", a.k},
                       {"trials", a.trials}, {"eta_bar", a.eta_bar}, {"tau_max", a.tau_max},
                       {"sign_change_width", a.sign_change_width}, {"radius", a.radius},
                       {"seed", a.seed}};
  man["summary"] = summary;
  man["outputs"] = {{"dir", a.out}};
  write_json(dir / "summary.json", summary);
  write_json(dir / "manifest.json", man);
}

struct CompareArgs {
  std::vector<std::string> runs;
  std::string truth, out;
};

void run_compare(const CompareArgs& a, json man) {
  const Tensor truth = read_image(a.truth);
  auto out = open_out(a.out);
  out << "run,method,kind,m,lines,sigma2,lambda,mse\n";
  for (const auto& run : a.runs) {
    const fs::path dir(run);
    const json rm = read_json(dir / "manifest.json");
    if (!rm.contains("method")) throw IoError("'" + run + "' is not a recover or baseline-lasso run");
    const Tensor img = read_image(dir / "reconstruction.png");
    const json& op = rm.at("operator");
    const double lambda = rm.at("method") == "cs-dip" ? rm.at("solver").at("lambda_T").get<double>()
                                                      : rm.at("lasso").at("lambda").get<double>();
    out << run << ',' << rm.at("method").get<std::string>() << ',' << op.at("kind").get<std::string>() << ','
        << op.at("m") << ',' << op.at("lines") << ',' << op.at("sigma2") << ',' << lambda << ','
        << mse(img, truth) << '\n';
  }
  man["inputs"] = {{"runs", a.runs}, {"truth", a.truth}};
  man["outputs"] = {{"csv", a.out}};
  write_json(a.out + ".manifest.json", man);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compressed sensing with an untrained generator prior"};
  app.set_version_flag("--version", CSDIP_VERSION);
  app.require_subcommand(1);

  MeasureArgs ma;
  auto* measure_cmd = app.add_subcommand("measure", "Measure an image: y = A x + noise");
  measure_cmd->add_option("--image", ma.image, "PNG or PGM image")->required()->check(CLI::ExistingFile);
  measure_cmd->add_option("--kind", ma.kind)->check(CLI::IsMember({"gaussian", "fourier", "identity"}));
  auto* m_opt = measure_cmd->add_option("--m", ma.m, "Gaussian measurement count");
  auto* lines_opt = measure_cmd->add_option("--lines", ma.lines, "Radial lines for the Fourier mask");
  m_opt->excludes(lines_opt);
  measure_cmd->add_option("--sigma2", ma.sigma2, "Total noise variance; entries get sigma2 / m");
  measure_cmd->add_option("--seed", ma.seed);
  measure_cmd->add_option("--out", ma.out, "Measurement container")->required();

  RecoverArgs ra;
  auto* recover_cmd = app.add_subcommand("recover", "Reconstruct from measurements");
  recover_cmd->add_option("--measurements", ra.measurements)->required()->check(CLI::ExistingFile);
  recover_cmd->add_option("--gen-config", ra.gen_config, "Generator JSON (default: built-in for the image size)")
      ->check(CLI::ExistingFile);
  recover_cmd->add_option("--lt", ra.solver.lambda_T, "TV weight")->capture_default_str();
  recover_cmd->add_option("--ll", ra.solver.lambda_L, "Learned-prior weight")->capture_default_str();
  recover_cmd->add_option("--restarts", ra.solver.restarts)->capture_default_str();
  recover_cmd->add_option("--steps", ra.solver.steps)->capture_default_str();
  recover_cmd->add_option("--lr", ra.solver.learning_rate)->capture_default_str();
  recover_cmd->add_option("--seed", ra.solver.seed)->capture_default_str();
  recover_cmd->add_option("--prior", ra.prior, "Prior JSON from estimate-prior")->check(CLI::ExistingFile);
  recover_cmd->add_option("--out", ra.out, "Output directory")->required();
  recover_cmd->add_flag("--grid", ra.grid, "Sweep the TV weight and keep the lowest measurement loss");
  recover_cmd->add_option("--grid-lo", ra.grid_lo)->capture_default_str();
  recover_cmd->add_option("--grid-hi", ra.grid_hi)->capture_default_str();
  recover_cmd->add_option("--grid-count", ra.grid_count)->capture_default_str();

  PriorArgs pa;
  auto* prior_cmd = app.add_subcommand("estimate-prior", "Layer-wise weight statistics from solved runs");
  prior_cmd->add_option("--weights", pa.weights, "Weight containers or glob patterns")->required();
  prior_cmd->add_option("--S", pa.S, "Draws per layer per trial")->capture_default_str();
  prior_cmd->add_option("--T", pa.T, "Trials")->capture_default_str();
  prior_cmd->add_option("--seed", pa.seed);
  prior_cmd->add_option("--out", pa.out, "Prior JSON")->required();

  LassoArgs la;
  double lambda = 0.0;
  auto* lasso_cmd = app.add_subcommand("baseline-lasso", "Lasso in the 2D DCT basis");
  lasso_cmd->add_option("--measurements", la.measurements)->required()->check(CLI::ExistingFile);
  auto* lambda_opt = lasso_cmd->add_option("--lambda", lambda, "Default: sweep 1e-4..1, keep the lowest measurement loss");
  lasso_cmd->add_option("--iterations", la.iterations)->capture_default_str();
  lasso_cmd->add_option("--tolerance", la.tolerance)->capture_default_str();
  lasso_cmd->add_option("--out", la.out, "Output directory")->required();

  TheoryArgs ta;
  auto* theory_cmd = app.add_subcommand("theory-verify", "One-hidden-layer descent and random-init checks");
  theory_cmd->add_option("--n", ta.n)->capture_default_str();
  theory_cmd->add_option("--d", ta.d)->capture_default_str();
  theory_cmd->add_option("--k", ta.k)->capture_default_str();
  theory_cmd->add_option("--trials", ta.trials)->capture_default_str();
  theory_cmd->add_option("--eta-bar", ta.eta_bar)->capture_default_str();
  theory_cmd->add_option("--tau-max", ta.tau_max)->capture_default_str();
  theory_cmd->add_option("--sign-change-width", ta.sign_change_width)->capture_default_str();
  theory_cmd->add_option("--radius", ta.radius)->capture_default_str();
  theory_cmd->add_option("--seed", ta.seed);
  theory_cmd->add_option("--out", ta.out, "Output directory")->required();

  CompareArgs ca;
  auto* compare_cmd = app.add_subcommand("compare", "MSE of reconstructions against the true image");
  compare_cmd->add_option("--runs", ca.runs, "recover / baseline-lasso output directories")
      ->required()
      ->check(CLI::ExistingDirectory);
  compare_cmd->add_option("--truth", ca.truth)->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("--out", ca.out, "CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail(usage, "usage", e.what());
  }

  const std::string command = app.get_subcommands().front()->get_name();
  const json man = manifest(command, argc, argv);
  try {
    if (*measure_cmd) {
      if (ma.kind == "gaussian" && ma.m == 0) throw ConfigError("measure: --kind gaussian needs --m");
      if (ma.kind == "fourier" && ma.lines == 0) throw ConfigError("measure: --kind fourier needs --lines");
      run_measure(ma, man);
    } else if (*recover_cmd) {
      run_recover(ra, man);
    } else if (*prior_cmd) {
      run_estimate_prior(pa, man);
    } else if (*lasso_cmd) {
      if (*lambda_opt) la.lambda = lambda;
      run_lasso(la, man);
    } else if (*theory_cmd) {
      run_theory(ta, man);
    } else if (*compare_cmd) {
      run_compare(ca, man);
    }
  } catch (const ConfigError& e) {
    fail(config, "config", e.what());
  } catch (const ShapeError& e) {
    fail(shape, "shape", e.what());
  } catch (const IoError& e) {
    fail(io, "io", e.what());
  } catch (const NumericalError& e) {
    fail(numerical, "numerical", e.what());
  } catch (const json::exception& e) {
    fail(io, "io", e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    fail(io, "io", e.what());
  } catch (const std::exception& e) {
    fail(internal, "internal", e.what());
  }
  return ok;
}
