#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geolgm/errors.hpp"
#include "geolgm/likelihood.hpp"
#include "geolgm/model.hpp"
#include "geolgm/random.hpp"
#include "geolgm/spacetime.hpp"
#include "geolgm/spde.hpp"

namespace geolgm {

inline constexpr int kMaxOracleLatent = 200;

struct McmcOptions {
  double burn_in_fraction = 0.2;
  double target_acceptance = 0.23;
  int batches = 50;
  /// Holds the hyperparameters fixed; used to check against closed forms.
  std::optional<Hypers> fixed_hypers;
};

struct McmcResult {
  /// Fixed effects, then the transformed hyperparameters in `pack` order.
  std::vector<std::string> names;
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
  /// Batch-means Monte Carlo standard errors.
  Eigen::VectorXd mcse;
  Eigen::VectorXd latent_mean;
  /// Post-burn-in acceptance rate per block (latent, hyper, centred hyper).
  std::vector<double> acceptance;
  int iterations = 0;
  int burn_in = 0;

  int index(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return static_cast<int>(i);
    }
    throw DomainError("no oracle summary for '" + name + "'");
  }
};

namespace detail {

/// Random-walk block with a Gaussian proposal whose covariance and scale
/// adapt during burn-in.
class AdaptiveBlock {
 public:
  explicit AdaptiveBlock(Eigen::VectorXd initial_sd)
      : dim_(static_cast<int>(initial_sd.size())),
        chol_(initial_sd.asDiagonal()),
        mean_(Eigen::VectorXd::Zero(dim_)),
        m2_(Eigen::MatrixXd::Zero(dim_, dim_)) {}

  int dim() const { return dim_; }

  Eigen::VectorXd propose(const Eigen::VectorXd& x, CounterRng& rng) const {
    Eigen::VectorXd z(dim_);
    for (int i = 0; i < dim_; ++i) z[i] = rng.normal();
    return x + std::exp(log_scale_) * (chol_ * z);
  }

  /// Robbins-Monro step on the log scale; the proposal covariance tracks
  /// the running sample covariance.
  void adapt(const Eigen::VectorXd& x, bool accepted, double target) {
    ++steps_;
    const double gain = 1.0 / std::sqrt(1.0 + static_cast<double>(steps_) / 10.0);
    log_scale_ += gain * ((accepted ? 1.0 : 0.0) - target);
    ++count_;
    const Eigen::VectorXd delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (x - mean_).transpose();
    if (count_ >= 2 * dim_ + 20 && count_ % 200 == 0) {
      Eigen::MatrixXd cov = m2_ / static_cast<double>(count_ - 1);
      cov *= 2.38 * 2.38 / dim_;
      cov.diagonal().array() += 1e-10;
      Eigen::LLT<Eigen::MatrixXd> llt(cov);
      if (llt.info() == Eigen::Success) chol_ = llt.matrixL();
    }
  }

 private:
  int dim_;
  Eigen::MatrixXd chol_;
  double log_scale_ = 0.0;
  long count_ = 0;
  long steps_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;
};

/// Posterior of (latent, fixed effects, hypers) with the field written as
/// x = (U_t (x) U_s)^{-1} w, w ~ N(0, I), where U are Cholesky factors of
/// the temporal and spatial precisions.
class OracleTarget {
 public:
  explicit OracleTarget(const ModelSpec& spec) : spec_(spec) {
    const int nv = spec.n_vertices();
    c_ = spec.fem->c_lumped.asDiagonal();
    g_ = Eigen::MatrixXd(spec.fem->g);
    gcg_ = Eigen::MatrixXd(spec.fem->g_cinv_g);
    std::vector<Eigen::Triplet<double>> t;
    for (int i = 0; i < spec.n_observations(); ++i) {
      for (const auto& e : spec.projector.rows[static_cast<std::size_t>(i)]) {
        t.emplace_back(i, e.column, e.weight);
      }
    }
    p_.resize(spec.n_observations(), nv * spec.time_slices);
    p_.setFromTriplets(t.begin(), t.end());
  }

  /// Refactors the precisions; false when they are not positive definite.
  bool set_hypers(const Hypers& h) {
    const double k2 = h.kappa() * h.kappa();
    const Eigen::MatrixXd qs = h.tau() * h.tau() * (k2 * k2 * c_ + 2.0 * k2 * g_ + gcg_);
    if (!qs.allFinite()) return false;
    us_.compute(qs);
    if (us_.info() != Eigen::Success) return false;
    const double rho = spec_.has_time() ? h.rho() : 0.0;
    if (!(std::abs(rho) < 1.0)) return false;
    ut_.compute(Eigen::MatrixXd(ar1_precision(spec_.time_slices, rho).q));
    if (ut_.info() != Eigen::Success) return false;
    hypers_ = h;
    return true;
  }

  Eigen::VectorXd field(const Eigen::VectorXd& w) const {
    const int nv = spec_.n_vertices();
    const int t = spec_.time_slices;
    const Eigen::Map<const Eigen::MatrixXd> wm(w.data(), nv, t);
    const Eigen::MatrixXd y = us_.matrixU().solve(wm);
    const Eigen::MatrixXd x = ut_.matrixU().solve(y.transpose()).transpose();
    return Eigen::Map<const Eigen::VectorXd>(x.data(), nv * t);
  }

  /// Inverse of `field`: w = (U_t (x) U_s) x.
  Eigen::VectorXd whiten(const Eigen::VectorXd& x) const {
    const int nv = spec_.n_vertices();
    const int t = spec_.time_slices;
    const Eigen::Map<const Eigen::MatrixXd> xm(x.data(), nv, t);
    const Eigen::MatrixXd y = us_.matrixU() * xm;
    const Eigen::MatrixXd w = (ut_.matrixU() * y.transpose()).transpose();
    return Eigen::Map<const Eigen::VectorXd>(w.data(), nv * t);
  }

  /// State with the same latent values under the current hypers.
  Eigen::VectorXd recentre(const Eigen::VectorXd& x) const {
    const int nf = spec_.field_size();
    Eigen::VectorXd state = x;
    state.head(nf) = whiten(x.head(nf));
    if (spec_.noise_term) {
      state.tail(spec_.n_observations()) =
          x.tail(spec_.n_observations()) / std::sqrt(hypers_.noise_variance());
    }
    return state;
  }

  /// log |dw/dx| = half the log-determinant of the latent prior precision.
  double log_jacobian() const {
    const int nv = spec_.n_vertices();
    const int t = spec_.time_slices;
    const double ls = us_.matrixLLT().diagonal().array().log().sum();
    const double lt = ut_.matrixLLT().diagonal().array().log().sum();
    double out = t * ls + nv * lt;
    if (spec_.noise_term) out += 0.5 * spec_.n_observations() * hypers_.log_noise_precision;
    return out;
  }

  /// Latent layout follows the Laplace evaluator: field, fixed, noise.
  Eigen::VectorXd latent(const Eigen::VectorXd& state) const {
    const int nf = spec_.field_size();
    Eigen::VectorXd x(spec_.latent_size());
    x.head(nf) = field(state.head(nf));
    x.segment(nf, spec_.n_fixed()) = state.segment(nf, spec_.n_fixed());
    if (spec_.noise_term) {
      x.tail(spec_.n_observations()) =
          state.tail(spec_.n_observations()) * std::sqrt(hypers_.noise_variance());
    }
    return x;
  }

  double log_density(const Eigen::VectorXd& state) const {
    const int nf = spec_.field_size();
    const int n = spec_.n_observations();
    const Eigen::VectorXd x = latent(state);
    Eigen::VectorXd eta = p_ * x.head(nf);
    eta.array() += x[nf];
    if (spec_.n_covariates() > 0) eta += spec_.z * x.segment(nf + 1, spec_.n_covariates());
    if (spec_.noise_term) eta += x.tail(n);
    double lp = 0.0;
    for (int i = 0; i < n; ++i) lp += loglik(spec_.family, eta[i], spec_.y[i]);
    const Eigen::VectorXd beta = state.segment(nf, spec_.n_fixed());
    lp -= 0.5 * spec_.fixed_effect_prior_precision * beta.squaredNorm();
    lp -= 0.5 * state.head(nf).squaredNorm();
    if (spec_.noise_term) lp -= 0.5 * state.tail(n).squaredNorm();
    return std::isfinite(lp) ? lp : -std::numeric_limits<double>::infinity();
  }

  const Hypers& hypers() const { return hypers_; }

 private:
  const ModelSpec& spec_;
  Eigen::MatrixXd c_;
  Eigen::MatrixXd g_;
  Eigen::MatrixXd gcg_;
  Eigen::SparseMatrix<double, Eigen::RowMajor> p_;
  Eigen::LLT<Eigen::MatrixXd> us_;
  Eigen::LLT<Eigen::MatrixXd> ut_;
  Hypers hypers_;
};

}  // namespace detail

/// Reference posterior by adaptive random-walk Metropolis. Each sweep
/// updates a latent block (whitened field, fixed effects, noise), then a
/// one-dimensional level move that raises the intercept and lowers every
/// field value by the same amount (leaving the linear predictor unchanged),
/// then the hyperparameters twice: once holding the whitened latent fixed and once
/// holding the latent values themselves fixed. Adaptation runs over the
/// burn-in and is frozen afterwards.
inline McmcResult mh_oracle(const ModelSpec& spec, int iterations, std::uint64_t seed,
                            const McmcOptions& options = {}) {
  validate(spec, false);
  if (spec.latent_size() > kMaxOracleLatent) {
    throw DomainError("oracle latent dimension " + std::to_string(spec.latent_size()) +
                      " exceeds " + std::to_string(kMaxOracleLatent));
  }
  if (iterations < 10 * options.batches) throw DomainError("too few oracle iterations");
  const int nf = spec.field_size();
  const int nx = spec.latent_size();
  const int k = spec.n_fixed();
  const bool sample_hypers = !options.fixed_hypers;
  const Hypers start = options.fixed_hypers.value_or(default_initial_hypers(spec));

  detail::OracleTarget target(spec);
  if (!target.set_hypers(start)) throw NumericalError("oracle start is not a valid precision");
  std::vector<double> theta = pack(spec, start);
  const int d = static_cast<int>(theta.size());
  auto log_prior = [&](const std::vector<double>& th) {
    return sample_hypers ? log_hyper_prior(spec, unpack(spec, th)) : 0.0;
  };

  Eigen::VectorXd state = Eigen::VectorXd::Zero(nx);
  Eigen::VectorXd latent_sd = Eigen::VectorXd::Constant(nx, 0.1);
  detail::AdaptiveBlock latent_block(latent_sd);
  detail::AdaptiveBlock hyper_block(Eigen::VectorXd::Constant(d, 0.1));
  detail::AdaptiveBlock centred_block(Eigen::VectorXd::Constant(d, 0.1));
  detail::AdaptiveBlock level_block(Eigen::VectorXd::Constant(1, 0.1));
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(nf);
  double current = target.log_density(state) + log_prior(theta);

  const int burn_in = static_cast<int>(options.burn_in_fraction * iterations);
  const int kept = iterations - burn_in;
  const int tracked = k + d;
  Eigen::MatrixXd trace(tracked, kept);
  Eigen::VectorXd latent_sum = Eigen::VectorXd::Zero(nx);
  long accepted[3] = {0, 0, 0};
  const CounterRng root(seed);
  CounterRng rng = root.split(0);

  for (int it = 0; it < iterations; ++it) {
    const bool adapting = it < burn_in;
    {
      const Eigen::VectorXd proposal = latent_block.propose(state, rng);
      const double value = target.log_density(proposal) + log_prior(theta);
      const bool ok = std::log(rng.uniform()) < value - current;
      if (ok) {
        state = proposal;
        current = value;
      }
      if (adapting) latent_block.adapt(state, ok, options.target_acceptance);
      else if (ok) ++accepted[0];
    }
    {
      // Only the field and intercept prior terms change along this line.
      const Eigen::VectorXd c0 = Eigen::VectorXd::Zero(1);
      const double c = level_block.propose(c0, rng)[0];
      const Eigen::VectorXd shift = target.whiten(ones);
      const double b0 = state[nf];
      const double delta =
          -0.5 * ((state.head(nf) - c * shift).squaredNorm() - state.head(nf).squaredNorm()) -
          0.5 * spec.fixed_effect_prior_precision * ((b0 + c) * (b0 + c) - b0 * b0);
      const bool ok = std::log(rng.uniform()) < delta;
      if (ok) {
        state.head(nf) -= c * shift;
        state[nf] += c;
        current += delta;
      }
      if (adapting) level_block.adapt(state.segment(nf, 1), ok, options.target_acceptance);
    }
    if (sample_hypers) {
      const Eigen::Map<const Eigen::VectorXd> tv(theta.data(), d);
      const Eigen::VectorXd prop = hyper_block.propose(tv, rng);
      std::vector<double> th(prop.data(), prop.data() + d);
      const Hypers previous = target.hypers();
      bool ok = false;
      if (target.set_hypers(unpack(spec, th))) {
        const double value = target.log_density(state) + log_prior(th);
        ok = std::log(rng.uniform()) < value - current;
        if (ok) {
          theta = th;
          current = value;
        }
      }
      if (!ok) target.set_hypers(previous);
      const Eigen::Map<const Eigen::VectorXd> now(theta.data(), d);
      if (adapting) hyper_block.adapt(now, ok, options.target_acceptance);
      else if (ok) ++accepted[1];
    }
    if (sample_hypers) {
      const Eigen::Map<const Eigen::VectorXd> tv(theta.data(), d);
      const Eigen::VectorXd prop = centred_block.propose(tv, rng);
      std::vector<double> th(prop.data(), prop.data() + d);
      const Hypers previous = target.hypers();
      const Eigen::VectorXd x = target.latent(state);
      const double before = current + target.log_jacobian();
      bool ok = false;
      if (target.set_hypers(unpack(spec, th))) {
        const Eigen::VectorXd moved = target.recentre(x);
        const double value = target.log_density(moved) + log_prior(th);
        ok = std::log(rng.uniform()) < value + target.log_jacobian() - before;
        if (ok) {
          theta = th;
          state = moved;
          current = value;
        }
      }
      if (!ok) target.set_hypers(previous);
      const Eigen::Map<const Eigen::VectorXd> now(theta.data(), d);
      if (adapting) centred_block.adapt(now, ok, options.target_acceptance);
      else if (ok) ++accepted[2];
    }
    if (!adapting) {
      const int s = it - burn_in;
      const Eigen::VectorXd x = target.latent(state);
      trace.col(s).head(k) = x.segment(nf, k);
      for (int j = 0; j < d; ++j) trace(k + j, s) = theta[static_cast<std::size_t>(j)];
      latent_sum += x;
    }
  }

  McmcResult out;
  out.iterations = iterations;
  out.burn_in = burn_in;
  out.names.push_back("intercept");
  for (const auto& n : spec.covariate_names) out.names.push_back(n);
  out.names.push_back("log_kappa");
  out.names.push_back("log_tau");
  if (spec.has_time()) out.names.push_back("rho_transformed");
  if (spec.noise_term) out.names.push_back("log_noise_precision");
  out.mean = trace.rowwise().mean();
  out.sd.resize(tracked);
  out.mcse.resize(tracked);
  const int batch = kept / options.batches;
  for (int j = 0; j < tracked; ++j) {
    const Eigen::ArrayXd row = trace.row(j).array();
    out.sd[j] = std::sqrt((row - out.mean[j]).square().sum() / (kept - 1));
    Eigen::ArrayXd means(options.batches);
    for (int b = 0; b < options.batches; ++b) means[b] = row.segment(b * batch, batch).mean();
    const double var = (means - means.mean()).square().sum() / (options.batches - 1);
    out.mcse[j] = std::sqrt(var / options.batches);
  }
  out.latent_mean = latent_sum / static_cast<double>(kept);
  out.acceptance = {static_cast<double>(accepted[0]) / kept,
                    sample_hypers ? static_cast<double>(accepted[1]) / kept : 0.0,
                    sample_hypers ? static_cast<double>(accepted[2]) / kept : 0.0};
  return out;
}

}  // namespace geolgm
