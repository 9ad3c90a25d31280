#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "geolgm/errors.hpp"
#include "geolgm/laplace.hpp"
#include "geolgm/nelder_mead.hpp"
#include "geolgm/random.hpp"

namespace geolgm {

inline constexpr double kZ975 = 1.959963984540054;

/// Gaussian-marginal summary with an equal-tailed 95% interval.
struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

/// Hyperparameter summary on the natural scale. `mode` is the transform of
/// the posterior mode; mean/sd are moments over the exploration grid; the
/// interval maps the Gaussian approximation on the transformed scale.
struct HyperSummary {
  std::string name;
  double mode = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

struct FitOptions {
  ExploreOptions explore;
  std::optional<Hypers> init;
  int n_samples = 200;
  std::uint64_t seed = 20021013;
  int threads = 1;
};

struct FitResult {
  Family family = Family::kBernoulli;
  std::vector<ParameterSummary> fixed_effects;
  std::vector<HyperSummary> hypers;
  Hypers mode;
  std::vector<GridPoint> grid;
  int evaluations = 0;

  int n_vertices = 0;
  int time_slices = 1;
  int first_year = 0;
  Eigen::VectorXd field_mean;
  Eigen::VectorXd field_sd;

  /// Posterior mean of the linear predictor and draws from the mixture of
  /// Gaussian approximations (n x n_samples); used by DIC and WAIC.
  Eigen::VectorXd eta_mean;
  Eigen::MatrixXd eta_samples;

  double log_evidence = 0.0;
  double dic = 0.0;
  double p_d = 0.0;
  double waic = 0.0;
  double p_waic = 0.0;

  const ParameterSummary& fixed(const std::string& name) const {
    for (const auto& p : fixed_effects) {
      if (p.name == name) return p;
    }
    throw DomainError("unknown fixed effect '" + name + "'");
  }
  const HyperSummary& hyper(const std::string& name) const {
    for (const auto& p : hypers) {
      if (p.name == name) return p;
    }
    throw DomainError("unknown hyperparameter '" + name + "'");
  }
};

inline const std::string kInterceptName = "intercept";

struct OptimizeResult {
  Hypers mode;
  HyperExploration exploration;
  std::vector<std::pair<Hypers, double>> explored;
};

namespace detail {

/// One Laplace evaluator per worker; workers warm-start every evaluation
/// from `anchor` so results do not depend on scheduling.
class EvaluatorPool {
 public:
  EvaluatorPool(const ModelSpec& spec, int workers) : spec_(spec) {
    for (int w = 0; w < std::max(1, workers); ++w) {
      pool_.push_back(std::make_unique<LaplaceEvaluator>(spec));
    }
  }
  LaplaceEvaluator& at(int worker) { return *pool_[static_cast<std::size_t>(worker)]; }
  int size() const { return static_cast<int>(pool_.size()); }

 private:
  const ModelSpec& spec_;
  std::vector<std::unique_ptr<LaplaceEvaluator>> pool_;
};

}  // namespace detail

/// Nelder-Mead search for the mode of the Laplace-approximated hyperparameter
/// posterior, then the weighted exploration grid around it.
inline OptimizeResult optimize_hypers(const ModelSpec& spec, const Hypers& init,
                                      const ExploreOptions& options = {}) {
  detail::EvaluatorPool pool(spec, options.threads);
  Eigen::VectorXd warm;
  Eigen::VectorXd anchor;
  bool sequential = true;
  HyperObjective objective = [&](const std::vector<double>& theta, int worker) {
    LaplaceEvaluator& eval = pool.at(worker);
    const Eigen::VectorXd* start = sequential ? (warm.size() ? &warm : nullptr)
                                              : (anchor.size() ? &anchor : nullptr);
    try {
      auto r = eval.evaluate(unpack(spec, theta), start);
      if (sequential) warm = r.state.x;
      return r.log_posterior;
    } catch (const ConvergenceError&) {
      return -std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  ExploreOptions opt = options;
  opt.threads = pool.size();

  // Mode search runs sequentially with warm starts; everything after is
  // anchored at the mode's latent solution.
  int nm_evals = 0;
  auto nm = nelder_mead_maximize([&](const std::vector<double>& x) { return objective(x, 0); },
                                 pack(spec, init), opt.simplex, &nm_evals);
  auto mode_eval = pool.at(0).evaluate(unpack(spec, nm.argmax), warm.size() ? &warm : nullptr);
  anchor = mode_eval.state.x;
  sequential = false;

  HyperExploration ex =
      explore_around_mode(objective, nm.argmax, mode_eval.log_posterior, opt, nm_evals);

  OptimizeResult out{unpack(spec, ex.mode), ex, {}};
  for (const auto& gp : ex.grid) out.explored.emplace_back(unpack(spec, gp.theta), gp.weight);
  return out;
}

/// Log of the predictive density terms for DIC and WAIC.
struct InformationCriteria {
  double dic = 0.0;
  double p_d = 0.0;
  double waic = 0.0;
  double p_waic = 0.0;
};

inline InformationCriteria information_criteria(Family family, const Eigen::VectorXd& y,
                                                const Eigen::VectorXd& eta_mean,
                                                const Eigen::MatrixXd& eta_samples) {
  InformationCriteria ic;
  const int n = static_cast<int>(y.size());
  const int s = static_cast<int>(eta_samples.cols());
  double ll_at_mean = 0.0;
  for (int i = 0; i < n; ++i) ll_at_mean += loglik(family, eta_mean[i], y[i]);
  if (s == 0) {
    ic.dic = -2.0 * ll_at_mean;
    ic.waic = -2.0 * ll_at_mean;
    return ic;
  }
  double mean_ll = 0.0;
  double lppd = 0.0;
  double penalty = 0.0;
  std::vector<double> terms(static_cast<std::size_t>(s));
  for (int i = 0; i < n; ++i) {
    double top = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (int k = 0; k < s; ++k) {
      const double l = loglik(family, eta_samples(i, k), y[i]);
      terms[static_cast<std::size_t>(k)] = l;
      top = std::max(top, l);
      sum += l;
    }
    const double mean = sum / s;
    double acc = 0.0;
    double var = 0.0;
    for (double l : terms) {
      acc += std::exp(l - top);
      var += (l - mean) * (l - mean);
    }
    lppd += top + std::log(acc / s);
    penalty += s > 1 ? var / (s - 1) : 0.0;
    mean_ll += mean;
  }
  ic.p_d = 2.0 * (ll_at_mean - mean_ll);
  ic.dic = -2.0 * ll_at_mean + 2.0 * ic.p_d;
  ic.p_waic = penalty;
  ic.waic = -2.0 * (lppd - penalty);
  return ic;
}

inline InformationCriteria dic_waic(const ModelSpec& spec, const FitResult& fit) {
  return information_criteria(spec.family, spec.y, fit.eta_mean, fit.eta_samples);
}

namespace detail {

inline HyperSummary summarize_hyper(const std::string& name, const FitResult& fit,
                                    const Eigen::VectorXd& coeffs, double offset,
                                    const HyperExploration& ex,
                                    double (*transform)(double)) {
  const int d = static_cast<int>(coeffs.size());
  auto linear = [&](const std::vector<double>& theta) {
    double v = offset;
    for (int i = 0; i < d; ++i) v += coeffs[i] * theta[static_cast<std::size_t>(i)];
    return v;
  };
  HyperSummary s;
  s.name = name;
  const double centre = linear(ex.mode);
  s.mode = transform(centre);
  double m1 = 0.0;
  double m2 = 0.0;
  for (const auto& gp : fit.grid) {
    const double v = transform(linear(gp.theta));
    m1 += gp.weight * v;
    m2 += gp.weight * v * v;
  }
  s.mean = m1;
  s.sd = std::sqrt(std::max(0.0, m2 - m1 * m1));
  const double sd = std::sqrt(std::max(0.0, coeffs.dot(ex.covariance * coeffs)));
  s.q025 = transform(centre - kZ975 * sd);
  s.q975 = transform(centre + kZ975 * sd);
  return s;
}

inline double exp_transform(double x) { return std::exp(x); }
inline double tanh_transform(double x) { return std::tanh(x); }

}  // namespace detail

/// Full approximate posterior: mode search, grid exploration, mixture of
/// Gaussian approximations for the latent vector, and DIC/WAIC.
inline FitResult fit(const ModelSpec& spec, const FitOptions& options = {}) {
  validate(spec);
  const Hypers init = options.init.value_or(default_initial_hypers(spec));
  ExploreOptions explore = options.explore;
  explore.threads = options.threads;
  OptimizeResult opt = optimize_hypers(spec, init, explore);
  const HyperExploration& ex = opt.exploration;

  FitResult out;
  out.family = spec.family;
  out.mode = opt.mode;
  out.grid = ex.grid;
  out.evaluations = ex.evaluations;
  out.n_vertices = spec.n_vertices();
  out.time_slices = spec.time_slices;
  out.first_year = spec.first_year;

  const int d = static_cast<int>(ex.mode.size());
  out.log_evidence = ex.mode_value + 0.5 * d * std::log(2.0 * std::numbers::pi) -
                     0.5 * std::log(std::max(ex.covariance.inverse().determinant(), 1e-300));

  // Sample-to-component assignment is drawn before any component is processed.
  CounterRng rng(options.seed);
  CounterRng assign = rng.split(1);
  std::vector<int> owner(static_cast<std::size_t>(options.n_samples));
  for (auto& o : owner) {
    double u = assign.uniform();
    int g = 0;
    for (; g + 1 < static_cast<int>(ex.grid.size()); ++g) {
      u -= ex.grid[static_cast<std::size_t>(g)].weight;
      if (u <= 0.0) break;
    }
    o = g;
  }

  const int latent = spec.latent_size();
  const int n = spec.n_observations();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(latent);
  Eigen::VectorXd second = Eigen::VectorXd::Zero(latent);
  out.eta_samples.resize(n, options.n_samples);

  const std::size_t n_grid = ex.grid.size();
  const int workers = std::max(1, std::min<int>(options.threads, static_cast<int>(n_grid)));
  std::vector<Eigen::VectorXd> comp_mean(n_grid);
  std::vector<Eigen::VectorXd> comp_var(n_grid);
  detail::EvaluatorPool pool(spec, workers);
  LaplaceEvaluator& anchor_eval = pool.at(0);
  const Eigen::VectorXd anchor = anchor_eval.evaluate(opt.mode).state.x;

  auto process = [&](int worker) {
    LaplaceEvaluator& eval = pool.at(worker);
    for (std::size_t g = static_cast<std::size_t>(worker); g < n_grid; g += static_cast<std::size_t>(workers)) {
      const auto& gp = ex.grid[g];
      const bool sampled = std::find(owner.begin(), owner.end(), static_cast<int>(g)) != owner.end();
      if (gp.weight < 1e-12 && !sampled) continue;
      auto r = eval.evaluate(unpack(spec, gp.theta), &anchor);
      comp_var[g] = eval.hessian_factor().inverse_diagonal();
      for (int s = 0; s < options.n_samples; ++s) {
        if (owner[static_cast<std::size_t>(s)] != static_cast<int>(g)) continue;
        CounterRng draw = rng.split(1000 + static_cast<std::uint64_t>(s));
        const Eigen::VectorXd x = r.state.x + eval.hessian_factor().sample(draw);
        out.eta_samples.col(s) = eval.design() * x;
      }
      comp_mean[g] = std::move(r.state.x);
    }
  };
  if (workers == 1) {
    process(0);
  } else {
    std::vector<std::jthread> threads;
    std::exception_ptr failure;
    std::mutex m;
    for (int w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          process(w);
        } catch (...) {
          std::lock_guard lock(m);
          if (!failure) failure = std::current_exception();
        }
      });
    }
    threads.clear();
    if (failure) std::rethrow_exception(failure);
  }
  double used_weight = 0.0;
  for (std::size_t g = 0; g < n_grid; ++g) {
    if (comp_mean[g].size() == 0) continue;
    const double w = ex.grid[g].weight;
    used_weight += w;
    mean += w * comp_mean[g];
    second += w * (comp_var[g] + comp_mean[g].cwiseAbs2());
  }
  mean /= used_weight;
  second /= used_weight;
  const Eigen::VectorXd var = (second - mean.cwiseAbs2()).cwiseMax(0.0);

  const int nf = spec.field_size();
  out.field_mean = mean.head(nf);
  out.field_sd = var.head(nf).cwiseSqrt();
  for (int j = 0; j < spec.n_fixed(); ++j) {
    ParameterSummary p;
    p.name = j == 0 ? kInterceptName : spec.covariate_names[static_cast<std::size_t>(j - 1)];
    p.mean = mean[nf + j];
    p.sd = std::sqrt(var[nf + j]);
    p.q025 = p.mean - kZ975 * p.sd;
    p.q975 = p.mean + kZ975 * p.sd;
    out.fixed_effects.push_back(p);
  }
  out.eta_mean = anchor_eval.design() * mean;

  Eigen::VectorXd c = Eigen::VectorXd::Zero(d);
  auto unit = [&](int i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
    e[i] = 1.0;
    return e;
  };
  out.hypers.push_back(detail::summarize_hyper("kappa", out, unit(0), 0.0, ex, detail::exp_transform));
  out.hypers.push_back(detail::summarize_hyper("tau", out, unit(1), 0.0, ex, detail::exp_transform));
  int next = 2;
  if (spec.has_time()) {
    out.hypers.push_back(detail::summarize_hyper("rho", out, unit(next++), 0.0, ex, detail::tanh_transform));
  }
  if (spec.noise_term) {
    out.hypers.push_back(detail::summarize_hyper("noise_variance", out, -unit(next++), 0.0, ex,
                                                 detail::exp_transform));
  }
  c = Eigen::VectorXd::Zero(d);
  c[0] = -2.0;
  c[1] = -2.0;
  out.hypers.push_back(detail::summarize_hyper("sigma2_field", out, c, -std::log(4.0 * std::numbers::pi),
                                               ex, detail::exp_transform));
  out.hypers.push_back(detail::summarize_hyper("range_km", out, -unit(0),
                                               std::log(std::sqrt(8.0) * spec.radius_km), ex,
                                               detail::exp_transform));

  const auto ic = information_criteria(spec.family, spec.y, out.eta_mean, out.eta_samples);
  out.dic = ic.dic;
  out.p_d = ic.p_d;
  out.waic = ic.waic;
  out.p_waic = ic.p_waic;
  return out;
}

struct ScenarioEffect {
  double z = 0.0;
  double eta = 0.0;
  double response = 0.0;
  double baseline = 0.0;
  double change = 0.0;
};

/// Response at a standardized covariate value `z` with every other term at
/// zero: logistic(beta z) for Bernoulli, exp(beta z) for Poisson.
inline ScenarioEffect scenario_effect(Family family, double beta, double z) {
  ScenarioEffect e;
  e.z = z;
  e.eta = beta * z;
  e.response = inverse_link(family, e.eta);
  e.baseline = inverse_link(family, 0.0);
  e.change = e.response - e.baseline;
  return e;
}

/// Same, starting from a raw-scale change of `raw_delta` applied at the raw
/// mean of the covariate.
inline ScenarioEffect scenario_effect(const FitResult& fit, const std::string& covariate,
                                      double raw_delta, double raw_mean, double raw_sd) {
  if (covariate == kInterceptName) throw DomainError("intercept is not a covariate");
  const double beta = fit.fixed(covariate).mean;
  if (!(raw_sd > 0.0)) throw DomainError("raw standard deviation must be positive");
  const double z = ((raw_mean + raw_delta) - raw_mean) / raw_sd;
  return scenario_effect(fit.family, beta, z);
}

// CSV exports: parameter summary and per-node field summary.

inline void write_fit_summary(std::ostream& os, const FitResult& fit) {
  os << "name,mean,sd,q025,q975\n" << std::setprecision(10);
  for (const auto& p : fit.fixed_effects) {
    os << p.name << ',' << p.mean << ',' << p.sd << ',' << p.q025 << ',' << p.q975 << '\n';
  }
  for (const auto& p : fit.hypers) {
    os << p.name << ',' << p.mean << ',' << p.sd << ',' << p.q025 << ',' << p.q975 << '\n';
  }
}

inline void write_field_summary(std::ostream& os, const FitResult& fit) {
  os << "node,year,mean,sd\n" << std::setprecision(12);
  for (int t = 0; t < fit.time_slices; ++t) {
    for (int v = 0; v < fit.n_vertices; ++v) {
      const int i = t * fit.n_vertices + v;
      os << v << ',' << fit.first_year + t << ',' << fit.field_mean[i] << ',' << fit.field_sd[i]
         << '\n';
    }
  }
}

}  // namespace geolgm
