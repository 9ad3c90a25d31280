#pragma once

#include <cmath>
#include <vector>

#include "geolgm/errors.hpp"
#include "geolgm/likelihood.hpp"
#include "geolgm/model.hpp"
#include "geolgm/spacetime.hpp"
#include "geolgm/sparse_cholesky.hpp"

namespace geolgm {

/// Latent vector laid out as [field (time-major); beta_0; beta_1..k; noise],
/// with the linear predictor it implies.
struct LatentState {
  Eigen::VectorXd x;
  Eigen::VectorXd eta;
};

inline constexpr int kMaxNewtonIterations = 50;
inline constexpr double kNewtonStepTolerance = 1e-8;

/// Gaussian approximation of p(x | y, theta) at its mode, and the Laplace
/// approximation of log p(theta | y) built from it. Holds factorization
/// workspaces, so use one instance per thread.
class LaplaceEvaluator {
 public:
  struct Result {
    LatentState state;
    double log_likelihood = 0.0;
    double quadratic_form = 0.0;
    double log_det_prior = 0.0;
    double log_det_hessian = 0.0;
    double log_prior = 0.0;
    /// Laplace approximation of log p(y | theta).
    double log_marginal = 0.0;
    /// log_marginal + log p(theta), i.e. log p(theta | y) up to a constant.
    double log_posterior = 0.0;
    int iterations = 0;
    double gradient_norm = 0.0;
  };

  explicit LaplaceEvaluator(const ModelSpec& spec) : spec_(spec) {
    validate(spec_, false);
    const int n = spec_.n_observations();
    const int nf = spec_.field_size();
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(n) * (4 + spec_.n_covariates()));
    for (int i = 0; i < n; ++i) {
      for (const auto& e : spec_.projector.rows[static_cast<std::size_t>(i)]) {
        t.emplace_back(i, e.column, e.weight);
      }
      t.emplace_back(i, nf, 1.0);
      for (int j = 0; j < spec_.n_covariates(); ++j) t.emplace_back(i, nf + 1 + j, spec_.z(i, j));
      if (spec_.noise_term) t.emplace_back(i, nf + spec_.n_fixed() + i, 1.0);
    }
    a_.resize(n, spec_.latent_size());
    a_.setFromTriplets(t.begin(), t.end());
    a_.makeCompressed();
    at_ = a_.transpose();

    const Hypers probe = default_initial_hypers(spec_);
    const SparseMatrix q = joint_precision(probe);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    pattern_ = SparseMatrix(q + SparseMatrix(at_ * ones.asDiagonal() * a_));
    pattern_ *= 0.0;
    pattern_.makeCompressed();
    hessian_factor_.analyze(pattern_);
    spatial_factor_.analyze(spatial_precision_matrix(*spec_.fem, probe.kappa(), probe.tau()));
  }

  const ModelSpec& spec() const { return spec_; }
  const SparseMatrix& design() const { return a_; }

  /// Block-diagonal prior precision of the latent vector.
  SparseMatrix joint_precision(const Hypers& h) const {
    const SparseMatrix qs = spatial_precision_matrix(*spec_.fem, h.kappa(), h.tau());
    const SparseMatrix qst = kron(ar1_precision(spec_.time_slices, rho_of(h)).q, qs);
    const int nf = spec_.field_size();
    const int total = spec_.latent_size();
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(qst.nonZeros()) + static_cast<std::size_t>(total - nf));
    for (int j = 0; j < qst.outerSize(); ++j) {
      for (SparseMatrix::InnerIterator it(qst, j); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
    }
    for (int j = nf; j < nf + spec_.n_fixed(); ++j) {
      t.emplace_back(j, j, spec_.fixed_effect_prior_precision);
    }
    const double noise_precision = std::exp(h.log_noise_precision);
    for (int j = nf + spec_.n_fixed(); j < total; ++j) t.emplace_back(j, j, noise_precision);
    SparseMatrix q(total, total);
    q.setFromTriplets(t.begin(), t.end());
    q.makeCompressed();
    return q;
  }

  /// Q + A^T W A with W = -d2 evaluated at `x`.
  SparseMatrix hessian(const SparseMatrix& q, const Eigen::VectorXd& eta) const {
    Eigen::VectorXd w(eta.size());
    for (int i = 0; i < eta.size(); ++i) {
      w[i] = -loglik_terms(spec_.family, eta[i], spec_.y[i]).d2;
    }
    SparseMatrix h = pattern_ + q + SparseMatrix(at_ * w.asDiagonal() * a_);
    h.makeCompressed();
    return h;
  }

  Result evaluate(const Hypers& h, const Eigen::VectorXd* warm_start = nullptr) {
    const SparseMatrix q = joint_precision(h);
    const int n = spec_.n_observations();
    Eigen::VectorXd x = warm_start ? *warm_start : Eigen::VectorXd::Zero(spec_.latent_size());
    if (x.size() != spec_.latent_size()) x = Eigen::VectorXd::Zero(spec_.latent_size());

    auto objective = [&](const Eigen::VectorXd& xv, const Eigen::VectorXd& eta) {
      double ll = 0.0;
      for (int i = 0; i < n; ++i) ll += loglik(spec_.family, eta[i], spec_.y[i]);
      return ll - 0.5 * xv.dot(q * xv);
    };

    Result out;
    Eigen::VectorXd eta = a_ * x;
    double f = objective(x, eta);
    bool converged = false;
    for (int iter = 1; iter <= kMaxNewtonIterations; ++iter) {
      out.iterations = iter;
      const Eigen::VectorXd g = gradient(q, x, eta);
      hessian_factor_.factorize(hessian(q, eta));
      const Eigen::VectorXd delta = hessian_factor_.solve(g);
      double step = 1.0;
      Eigen::VectorXd x_new;
      Eigen::VectorXd eta_new;
      double f_new = 0.0;
      for (int halving = 0; halving < 40; ++halving) {
        x_new = x + step * delta;
        eta_new = a_ * x_new;
        f_new = objective(x_new, eta_new);
        if (std::isfinite(f_new) && f_new >= f - 1e-12 * (1.0 + std::abs(f))) break;
        step *= 0.5;
      }
      const double moved = step * delta.cwiseAbs().maxCoeff();
      x = std::move(x_new);
      eta = std::move(eta_new);
      f = f_new;
      if (moved < kNewtonStepTolerance) {
        converged = true;
        break;
      }
    }
    const Eigen::VectorXd g = gradient(q, x, eta);
    out.gradient_norm = g.cwiseAbs().maxCoeff();
    if (!converged) {
      throw ConvergenceError("inner Newton did not converge in " +
                                 std::to_string(kMaxNewtonIterations) + " iterations",
                             out.gradient_norm);
    }
    hessian_factor_.factorize(hessian(q, eta));

    double ll = 0.0;
    for (int i = 0; i < n; ++i) ll += loglik(spec_.family, eta[i], spec_.y[i]);
    out.log_likelihood = ll;
    out.quadratic_form = x.dot(q * x);
    out.log_det_prior = log_det_joint_precision(h);
    out.log_det_hessian = hessian_factor_.log_determinant();
    out.log_prior = log_hyper_prior(spec_, h);
    out.log_marginal = ll - 0.5 * out.quadratic_form + 0.5 * out.log_det_prior -
                       0.5 * out.log_det_hessian;
    out.log_posterior = out.log_marginal + out.log_prior;
    out.state = {std::move(x), std::move(eta)};
    return out;
  }

  /// Factorization of the Hessian at the mode from the last `evaluate`.
  const SparseCholesky& hessian_factor() const { return hessian_factor_; }

  double log_det_joint_precision(const Hypers& h) {
    spatial_factor_.factorize(spatial_precision_matrix(*spec_.fem, h.kappa(), h.tau()));
    const Ar1Precision qt = ar1_precision(spec_.time_slices, rho_of(h));
    double ld = spec_.n_vertices() * qt.log_determinant() +
                spec_.time_slices * spatial_factor_.log_determinant() +
                spec_.n_fixed() * std::log(spec_.fixed_effect_prior_precision);
    if (spec_.noise_term) ld += spec_.n_observations() * h.log_noise_precision;
    return ld;
  }

  Eigen::VectorXd gradient(const SparseMatrix& q, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& eta) const {
    Eigen::VectorXd d1(eta.size());
    for (int i = 0; i < eta.size(); ++i) d1[i] = loglik_terms(spec_.family, eta[i], spec_.y[i]).d1;
    return at_ * d1 - q * x;
  }

 private:
  double rho_of(const Hypers& h) const { return spec_.has_time() ? h.rho() : 0.0; }

  const ModelSpec& spec_;
  SparseMatrix a_;
  SparseMatrix at_;
  SparseMatrix pattern_;
  SparseCholesky hessian_factor_;
  SparseCholesky spatial_factor_;
};

struct InnerNewtonResult {
  LatentState mode;
  SparseMatrix hessian;
  int iterations = 0;
};

/// Mode of p(x | y, theta) and the negative Hessian of the log density there.
inline InnerNewtonResult inner_newton(const ModelSpec& spec, const Hypers& h) {
  LaplaceEvaluator eval(spec);
  auto r = eval.evaluate(h);
  const SparseMatrix q = eval.joint_precision(h);
  return {r.state, eval.hessian(q, r.state.eta), r.iterations};
}

inline double log_posterior_hypers(const ModelSpec& spec, const Hypers& h) {
  LaplaceEvaluator eval(spec);
  return eval.evaluate(h).log_posterior;
}

}  // namespace geolgm
