#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "geolgm/errors.hpp"

namespace geolgm {

/// Observation model. `kGaussian` (identity link, unit noise variance) has a
/// closed-form marginal likelihood and exists to validate the Laplace
/// machinery.
enum class Family { kBernoulli, kPoisson, kGaussian };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::kBernoulli: return "bernoulli";
    case Family::kPoisson: return "poisson";
    case Family::kGaussian: return "gaussian";
  }
  return "unknown";
}

inline Family family_from_string(const std::string& s) {
  if (s == "bernoulli") return Family::kBernoulli;
  if (s == "poisson") return Family::kPoisson;
  if (s == "gaussian") return Family::kGaussian;
  throw DomainError("unknown likelihood '" + s + "'");
}

struct LogLikTerms {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

/// log(1 + e^x) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline constexpr double kMaxExponent = 700.0;

/// Log density of `y` given linear predictor `eta` and its first two
/// derivatives in `eta`.
inline LogLikTerms loglik_terms(Family family, double eta, double y) {
  switch (family) {
    case Family::kBernoulli: {
      const double p = logistic(eta);
      const double e = std::exp(-std::abs(eta));
      return {y * eta - softplus(eta), y - p, -e / ((1.0 + e) * (1.0 + e))};
    }
    case Family::kPoisson: {
      const double mu = std::exp(std::clamp(eta, -kMaxExponent, kMaxExponent));
      return {y * eta - mu - std::lgamma(y + 1.0), y - mu, -mu};
    }
    case Family::kGaussian: {
      const double r = y - eta;
      return {-0.5 * r * r - 0.5 * std::log(2.0 * std::numbers::pi), r, -1.0};
    }
  }
  return {};
}

inline double loglik(Family family, double eta, double y) {
  return loglik_terms(family, eta, y).value;
}

/// Inverse link: logistic for Bernoulli, exp for Poisson, identity otherwise.
inline double inverse_link(Family family, double eta) {
  switch (family) {
    case Family::kBernoulli: return logistic(eta);
    case Family::kPoisson: return std::exp(std::clamp(eta, -kMaxExponent, kMaxExponent));
    case Family::kGaussian: return eta;
  }
  return eta;
}

}  // namespace geolgm
