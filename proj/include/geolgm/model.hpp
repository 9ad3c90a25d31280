#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "geolgm/errors.hpp"
#include "geolgm/fem.hpp"
#include "geolgm/likelihood.hpp"
#include "geolgm/projector.hpp"
#include "geolgm/spde.hpp"

namespace geolgm {

/// Prior centred on the (kappa, tau) implied by a range and marginal
/// variance; otherwise log kappa and log tau are N(0, 1).
struct RangeSigmaPrior {
  double range_km = 500.0;
  double sigma2 = 50.0;
};

inline constexpr double kRhoPriorPrecision = 0.15;
inline constexpr double kNoisePriorShape = 1.0;
inline constexpr double kNoisePriorRate = 5e-5;

struct ModelSpec {
  Family family = Family::kBernoulli;
  std::shared_ptr<const FemMatrices> fem;
  int time_slices = 1;
  int first_year = 0;
  /// Space-time projector: one row per observation, n_vertices * T columns.
  Projector projector;
  /// Standardized covariates, n x k.
  Eigen::MatrixXd z;
  std::vector<std::string> covariate_names;
  Eigen::VectorXd y;
  std::optional<RangeSigmaPrior> range_sigma_prior;
  double fixed_effect_prior_precision = 0.001;
  /// Observation-level Gaussian term in the linear predictor.
  bool noise_term = false;
  double radius_km = kEarthRadiusKm;

  int n_observations() const { return static_cast<int>(y.size()); }
  int n_vertices() const { return fem ? fem->size() : 0; }
  int n_covariates() const { return static_cast<int>(z.cols()); }
  int field_size() const { return n_vertices() * time_slices; }
  int n_fixed() const { return 1 + n_covariates(); }
  int latent_size() const {
    return field_size() + n_fixed() + (noise_term ? n_observations() : 0);
  }
  bool has_time() const { return time_slices > 1; }
  /// Dimension of the transformed hyperparameter vector: log kappa,
  /// log tau, then rho when T > 1, then the noise precision when enabled.
  int n_hypers() const { return 2 + (has_time() ? 1 : 0) + (noise_term ? 1 : 0); }
};

inline void validate(const ModelSpec& spec, bool check_standardized = true) {
  if (!spec.fem) throw DomainError("model has no FEM matrices");
  if (spec.time_slices < 1) throw DomainError("model needs at least one time slice");
  const int n = spec.n_observations();
  if (spec.projector.n_rows() != n || spec.projector.n_columns != spec.field_size()) {
    throw DomainError("projector shape does not match observations and field");
  }
  if (spec.z.rows() != n && spec.z.cols() > 0) {
    throw DomainError("covariate matrix row count does not match observations");
  }
  if (static_cast<int>(spec.covariate_names.size()) != spec.n_covariates()) {
    throw DomainError("one name per covariate column is required");
  }
  for (int i = 0; i < n; ++i) {
    const double y = spec.y[i];
    if (!std::isfinite(y)) throw DomainError("non-finite response");
    if (spec.family == Family::kBernoulli && y != 0.0 && y != 1.0) {
      throw DomainError("Bernoulli responses must be 0 or 1");
    }
    if (spec.family == Family::kPoisson && (y < 0.0 || y != std::floor(y))) {
      throw DomainError("Poisson responses must be nonnegative integers");
    }
  }
  if (check_standardized && n > 1) {
    for (int j = 0; j < spec.n_covariates(); ++j) {
      const double mean = spec.z.col(j).mean();
      const double var = (spec.z.col(j).array() - mean).square().sum() / (n - 1);
      if (std::abs(mean) > 1e-8 || std::abs(std::sqrt(var) - 1.0) > 1e-6) {
        throw DomainError("covariate '" + spec.covariate_names[static_cast<std::size_t>(j)] +
                          "' is not standardized");
      }
    }
  }
  if (!(spec.fixed_effect_prior_precision > 0.0)) {
    throw DomainError("fixed-effect prior precision must be positive");
  }
}

/// Hyperparameters on the unconstrained scale used for optimization.
struct Hypers {
  double log_kappa = 0.0;
  double log_tau = 0.0;
  /// rho = tanh(rho_transformed).
  double rho_transformed = 0.0;
  /// log of the observation-noise precision; unused when the term is off.
  double log_noise_precision = 0.0;

  double kappa() const { return std::exp(log_kappa); }
  double tau() const { return std::exp(log_tau); }
  double rho() const { return std::tanh(rho_transformed); }
  double noise_variance() const { return std::exp(-log_noise_precision); }

  static Hypers from_natural(double kappa, double tau, double rho,
                             double noise_precision = 1.0) {
    return {std::log(kappa), std::log(tau), std::atanh(rho), std::log(noise_precision)};
  }
};

inline std::vector<double> pack(const ModelSpec& spec, const Hypers& h) {
  std::vector<double> v{h.log_kappa, h.log_tau};
  if (spec.has_time()) v.push_back(h.rho_transformed);
  if (spec.noise_term) v.push_back(h.log_noise_precision);
  return v;
}

inline Hypers unpack(const ModelSpec& spec, const std::vector<double>& v) {
  if (static_cast<int>(v.size()) != spec.n_hypers()) {
    throw DomainError("hyperparameter vector has the wrong dimension");
  }
  Hypers h;
  std::size_t k = 0;
  h.log_kappa = v[k++];
  h.log_tau = v[k++];
  if (spec.has_time()) h.rho_transformed = v[k++];
  if (spec.noise_term) h.log_noise_precision = v[k++];
  return h;
}

inline double log_normal_density(double x, double mean, double precision) {
  const double d = x - mean;
  return 0.5 * std::log(precision / (2.0 * std::numbers::pi)) - 0.5 * precision * d * d;
}

struct SpdePriorCentre {
  double log_kappa = 0.0;
  double log_tau = 0.0;
};

inline SpdePriorCentre spde_prior_centre(const ModelSpec& spec) {
  if (!spec.range_sigma_prior) return {};
  const auto kt = kappa_tau_from_range_sigma(spec.range_sigma_prior->range_km,
                                             spec.range_sigma_prior->sigma2, spec.radius_km);
  return {std::log(kt.kappa), std::log(kt.tau)};
}

/// Log prior density of the transformed hyperparameters:
/// N(centre, 1) on log kappa and log tau, N(0, 1/0.15) on
/// log((1+rho)/(1-rho)) = 2 rho_transformed, and a Gamma(1, 5e-5) prior on
/// the noise precision expressed on its log.
inline double log_hyper_prior(const ModelSpec& spec, const Hypers& h) {
  const auto centre = spde_prior_centre(spec);
  double lp = log_normal_density(h.log_kappa, centre.log_kappa, 1.0) +
              log_normal_density(h.log_tau, centre.log_tau, 1.0);
  if (spec.has_time()) {
    lp += log_normal_density(2.0 * h.rho_transformed, 0.0, kRhoPriorPrecision) + std::log(2.0);
  }
  if (spec.noise_term) {
    const double theta = h.log_noise_precision;
    lp += kNoisePriorShape * std::log(kNoisePriorRate) - std::lgamma(kNoisePriorShape) +
          kNoisePriorShape * theta - kNoisePriorRate * std::exp(theta);
  }
  return lp;
}

/// Starting point for hyperparameter search: a field with range of half a
/// radian and unit variance, moderate temporal correlation, or the
/// range/sigma prior centre when one is configured.
inline Hypers default_initial_hypers(const ModelSpec& spec) {
  Hypers h;
  if (spec.range_sigma_prior) {
    const auto c = spde_prior_centre(spec);
    h.log_kappa = c.log_kappa;
    h.log_tau = c.log_tau;
  } else {
    const double kappa = std::sqrt(8.0) / 0.5;
    h.log_kappa = std::log(kappa);
    h.log_tau = std::log(1.0 / (std::sqrt(4.0 * std::numbers::pi) * kappa));
  }
  h.rho_transformed = spec.time_slices > 1 ? std::atanh(0.5) : 0.0;
  h.log_noise_precision = std::log(10.0);
  return h;
}

}  // namespace geolgm
