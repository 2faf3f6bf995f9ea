#pragma once

// One-hidden-layer generator G(z; W, V) = V ReLU(W z) with V fixed and W
// trained by plain gradient descent on 1/2 ||V ReLU(W z) - y||^2. Provides the
// explicit Jacobian, its closed-form Gram matrix, and numerical checks of the
// convergence bound and the Jacobian/misfit/sign-change lemmas behind it.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "csdip/parallel.hpp"
#include "csdip/random.hpp"
#include "csdip/tensor.hpp"

namespace csdip::theory {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// phi'(x) = 1{x >= 0}.
inline VectorXd relu_derivative(const VectorXd& h) {
  return h.unaryExpr([](double v) { return v >= 0.0 ? 1.0 : 0.0; });
}

struct OneLayerNet {
  VectorXd z;   ///< [k]
  MatrixXd V;   ///< [n, d], i.i.d. N(0, nu^2), fixed
  MatrixXd W;   ///< [d, k], trained
  MatrixXd W0;  ///< [d, k], initialization
  double nu = 0.0;

  std::size_t n() const { return static_cast<std::size_t>(V.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(V.cols()); }
  std::size_t k() const { return static_cast<std::size_t>(z.size()); }

  VectorXd hidden() const { return W * z; }
  VectorXd output() const { return V * hidden().cwiseMax(0.0); }
};

/// nu = ||y|| / (sqrt(d n) ||z||).
inline double theorem_nu(double y_norm, double z_norm, std::size_t n, std::size_t d) {
  return y_norm / (std::sqrt(static_cast<double>(d) * static_cast<double>(n)) * z_norm);
}

/// Draws z ~ N(0, I_k), V ~ N(0, nu^2) with nu from the theorem, W0 ~ N(0, 1).
inline OneLayerNet sample_net(std::size_t n, std::size_t d, std::size_t k, double y_norm, Rng& rng) {
  OneLayerNet net;
  net.z = VectorXd(k);
  for (Eigen::Index i = 0; i < net.z.size(); ++i) net.z(i) = rng.normal();
  net.nu = theorem_nu(y_norm, net.z.norm(), n, d);
  net.V = MatrixXd(n, d);
  for (Eigen::Index i = 0; i < net.V.rows(); ++i)
    for (Eigen::Index j = 0; j < net.V.cols(); ++j) net.V(i, j) = net.nu * rng.normal();
  net.W0 = MatrixXd(d, k);
  for (Eigen::Index i = 0; i < net.W0.rows(); ++i)
    for (Eigen::Index j = 0; j < net.W0.cols(); ++j) net.W0(i, j) = rng.normal();
  net.W = net.W0;
  return net;
}

inline VectorXd random_unit_vector(std::size_t n, Rng& rng) {
  VectorXd y(n);
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = rng.normal();
  return y / y.norm();
}

struct LossGrad {
  double loss = 0.0;
  MatrixXd grad;  ///< [d, k]
  VectorXd residual;
};

/// L(W) = 1/2 ||V ReLU(W z) - y||^2 and its gradient by the chain rule.
inline LossGrad loss_and_grad(const OneLayerNet& net, const VectorXd& y) {
  if (static_cast<std::size_t>(y.size()) != net.n()) {
    throw ShapeError("theory loss: y has " + std::to_string(y.size()) + " entries, net outputs " +
                     std::to_string(net.n()));
  }
  const VectorXd h = net.hidden();
  LossGrad out;
  out.residual = net.V * h.cwiseMax(0.0) - y;
  out.loss = 0.5 * out.residual.squaredNorm();
  const VectorXd back = (net.V.transpose() * out.residual).cwiseProduct(relu_derivative(h));
  out.grad = back * net.z.transpose();
  return out;
}

/// J(W) = (V diag(phi'(W z))) * (1 z^T), the Khatri-Rao product whose row i is
/// (V_i . phi'(W z)) kron z^T. Columns follow vect(W), i.e. W row by row.
inline MatrixXd jacobian(const OneLayerNet& net) {
  const VectorXd act = relu_derivative(net.hidden());
  const std::size_t d = net.d(), k = net.k();
  MatrixXd J(net.n(), d * k);
  for (std::size_t i = 0; i < net.n(); ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double a = net.V(i, j) * act(j);
      for (std::size_t c = 0; c < k; ++c) J(i, j * k + c) = a * net.z(c);
    }
  return J;
}

/// Closed form J J^T = ||z||^2 V diag(phi' . phi') V^T.
inline MatrixXd jjt(const OneLayerNet& net) {
  const VectorXd act = relu_derivative(net.hidden());
  return net.z.squaredNorm() * (net.V * act.asDiagonal() * net.V.transpose());
}

/// loss_and_grad, also forming vect(grad) = J^T r and requiring agreement to 1e-10.
inline LossGrad loss_and_grad_checked(const OneLayerNet& net, const VectorXd& y) {
  LossGrad lg = loss_and_grad(net, y);
  const VectorXd via_j = jacobian(net).transpose() * lg.residual;
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      as_matrix(via_j.data(), static_cast<Eigen::Index>(net.d()), static_cast<Eigen::Index>(net.k()));
  const double diff = (as_matrix - lg.grad).norm();
  if (diff > 1e-10 * std::max(1.0, lg.grad.norm())) {
    throw NumericalError("theory gradient: chain rule and J^T r differ by " + std::to_string(diff));
  }
  return lg;
}

/// Extreme singular values of a matrix from the eigenvalues of its smaller Gram matrix.
struct SingularRange {
  double min = 0.0;
  double max = 0.0;
};

inline SingularRange singular_range_from_gram(const MatrixXd& gram) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  const VectorXd& ev = es.eigenvalues();
  return {std::sqrt(std::max(0.0, ev(0))), std::sqrt(std::max(0.0, ev(ev.size() - 1)))};
}

inline double spectral_norm(const MatrixXd& m) {
  const MatrixXd gram = m.rows() <= m.cols() ? MatrixXd(m * m.transpose()) : MatrixXd(m.transpose() * m);
  return singular_range_from_gram(gram).max;
}

struct DescentTrace {
  std::vector<double> residual_norms;  ///< ||V ReLU(W_tau z) - y||, tau = 0..tau_max
  std::vector<double> bound_curve;     ///< 3 (1 - eta_bar / (8 (4n + d)))^tau ||y||
  double eta_bar = 0.0;
  double step = 0.0;                   ///< eta = eta_bar / ||y||^2 * 8n / (4n + d)
  bool diverged = false;

  /// True when the residual never exceeds the bound.
  bool bound_holds() const {
    if (diverged) return false;
    for (std::size_t t = 0; t < residual_norms.size(); ++t)
      if (residual_norms[t] > bound_curve[t]) return false;
    return true;
  }
};

/// Gradient descent W <- W - eta grad L(W) for tau_max steps. Residuals above
/// 10 ||y|| mark the trace as diverged and stop the run.
inline DescentTrace gd_denoise(OneLayerNet& net, const VectorXd& y, double eta_bar,
                               std::size_t tau_max) {
  if (!(eta_bar > 0.0 && eta_bar <= 1.0)) throw ConfigError("gd_denoise: eta_bar must be in (0, 1]");
  const double n = static_cast<double>(net.n()), d = static_cast<double>(net.d());
  const double y_norm = y.norm();
  if (!(y_norm > 0.0)) throw ConfigError("gd_denoise: y must be nonzero");
  DescentTrace tr;
  tr.eta_bar = eta_bar;
  tr.step = eta_bar / (y_norm * y_norm) * 8.0 * n / (4.0 * n + d);
  const double rate = 1.0 - eta_bar / (8.0 * (4.0 * n + d));
  tr.residual_norms.reserve(tau_max + 1);
  tr.bound_curve.reserve(tau_max + 1);
  for (std::size_t tau = 0; tau <= tau_max; ++tau) {
    const VectorXd h = net.W * net.z;
    const VectorXd r = net.V * h.cwiseMax(0.0) - y;
    const double rn = r.norm();
    tr.residual_norms.push_back(rn);
    tr.bound_curve.push_back(3.0 * std::pow(rate, static_cast<double>(tau)) * y_norm);
    if (!std::isfinite(rn) || rn > 10.0 * y_norm) {
      tr.diverged = true;
      break;
    }
    if (tau == tau_max) break;
    const VectorXd back = (net.V.transpose() * r).cwiseProduct(relu_derivative(h));
    net.W.noalias() -= tr.step * back * net.z.transpose();
  }
  return tr;
}

struct TheoremTrial {
  std::size_t trial = 0;
  DescentTrace trace;
};

/// Independent descent runs on random unit targets, one seed stream per trial.
inline std::vector<TheoremTrial> theorem_trials(std::size_t n, std::size_t d, std::size_t k,
                                                double eta_bar, std::size_t tau_max,
                                                std::size_t trials, std::uint64_t seed) {
  std::vector<TheoremTrial> out(trials);
  parallel_for(trials, [&](std::size_t t) {
    Rng rng(derive_seed(seed, 0x746872ULL, t));
    const VectorXd y = random_unit_vector(n, rng);
    OneLayerNet net = sample_net(n, d, k, y.norm(), rng);
    out[t] = {t, gd_denoise(net, y, eta_bar, tau_max)};
  });
  return out;
}

/// |{l : sgn(<W_new row l, z>) != sgn(<W0 row l, z>)}|. Requires
/// ||W_new - W0|| <= R (spectral) unless enforce_radius is false.
inline std::size_t sign_change_count(const OneLayerNet& net, const MatrixXd& W_new, double R,
                                     bool enforce_radius = true) {
  if (W_new.rows() != net.W0.rows() || W_new.cols() != net.W0.cols()) {
    throw ShapeError("sign_change_count: W_new shape does not match W0");
  }
  if (enforce_radius) {
    const double dist = spectral_norm(W_new - net.W0);
    if (dist > R * (1.0 + 1e-9)) {
      throw ConfigError("sign_change_count: ||W_new - W0|| = " + std::to_string(dist) +
                        " exceeds R = " + std::to_string(R));
    }
  }
  const VectorXd a = W_new * net.z;
  const VectorXd b = net.W0 * net.z;
  auto sgn = [](double v) { return (v > 0.0) - (v < 0.0); };
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) count += sgn(a(i)) != sgn(b(i));
  return count;
}

/// 2 ceil((2 d R)^{2/3}).
inline double sign_change_bound(std::size_t d, double R) {
  return 2.0 * std::ceil(std::pow(2.0 * static_cast<double>(d) * R, 2.0 / 3.0));
}

struct LemmaOptions {
  std::size_t sign_change_width = 4000;  ///< hidden width d for the sign-change check
  double sign_change_radius = 0.1;       ///< R
};

struct LemmaTrial {
  std::size_t trial = 0;
  double sigma_min = 0, min_singular_bound = 0;  // sigma_min(J) >= nu sqrt(d) ||z|| / 2
  double spectral = 0, spectral_bound = 0;       // ||J|| <= nu (sqrt(d) + 2 sqrt(n)) ||z||
  double misfit = 0, misfit_bound = 0;           // ||V phi(W z) - y|| <= 3 ||y||
  double sign_changes = 0, sign_change_bound = 0;

  bool min_singular_ok() const { return sigma_min >= min_singular_bound; }
  bool spectral_ok() const { return spectral <= spectral_bound; }
  bool misfit_ok() const { return misfit <= misfit_bound; }
  bool sign_change_ok() const { return sign_changes <= sign_change_bound; }
};

struct LemmaReport {
  std::size_t n = 0, d = 0, k = 0;
  LemmaOptions options;
  std::vector<LemmaTrial> trials;

  std::size_t count(bool (LemmaTrial::*ok)() const) const {
    std::size_t c = 0;
    for (const auto& t : trials) c += (t.*ok)();
    return c;
  }
};

/// Random-initialization checks of the Jacobian spectrum, initial misfit and
/// activation sign changes. The minimum-singular-value bound assumes d >= 3828 n.
inline LemmaReport verify_lemmas(std::size_t n, std::size_t d, std::size_t k, std::size_t trials,
                                 std::uint64_t seed, const LemmaOptions& options = {}) {
  LemmaReport rep{n, d, k, options, std::vector<LemmaTrial>(trials)};
  parallel_for(trials, [&](std::size_t t) {
    Rng rng(derive_seed(seed, 0x6c656dULL, t));
    const VectorXd y = random_unit_vector(n, rng);
    const OneLayerNet net = sample_net(n, d, k, y.norm(), rng);
    LemmaTrial& lt = rep.trials[t];
    lt.trial = t;
    const double zn = net.z.norm();
    const SingularRange sr = singular_range_from_gram(jjt(net));
    lt.sigma_min = sr.min;
    lt.min_singular_bound = 0.5 * net.nu * std::sqrt(static_cast<double>(d)) * zn;
    lt.spectral = sr.max;
    lt.spectral_bound =
        net.nu * (std::sqrt(static_cast<double>(d)) + 2.0 * std::sqrt(static_cast<double>(n))) * zn;
    lt.misfit = (net.output() - y).norm();
    lt.misfit_bound = 3.0 * y.norm();

    const std::size_t d5 = options.sign_change_width;
    const OneLayerNet wide = sample_net(n, d5, k, y.norm(), rng);
    MatrixXd delta(d5, k);
    for (Eigen::Index i = 0; i < delta.rows(); ++i)
      for (Eigen::Index j = 0; j < delta.cols(); ++j) delta(i, j) = rng.normal();
    delta *= options.sign_change_radius / spectral_norm(delta);
    lt.sign_changes =
        static_cast<double>(sign_change_count(wide, wide.W0 + delta, options.sign_change_radius));
    lt.sign_change_bound = theory::sign_change_bound(d5, options.sign_change_radius);
  });
  return rep;
}

}  // namespace csdip::theory
