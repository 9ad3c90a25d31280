#pragma once

#include <cmath>
#include <numbers>
#include <utility>

#include "geolgm/errors.hpp"
#include "geolgm/fem.hpp"
#include "geolgm/geodesy.hpp"
#include "geolgm/sparse_cholesky.hpp"

namespace geolgm {

/// Matern smoothness is fixed at lambda = 1 (alpha = 2 on a 2-manifold).
inline constexpr double kMaternLambda = 1.0;

/// Correlation (kappa d) K_1(kappa d) of the lambda = 1 Matern family.
/// `distance` is in radians on the unit sphere, `kappa` in inverse radians.
inline double matern_correlation(double distance, double kappa) {
  const double x = kappa * distance;
  if (x <= 0.0) return 1.0;
  if (x > 700.0) return 0.0;
  return x * std::cyl_bessel_k(1.0, x);
}

/// Distance at which the correlation drops to about 0.14, in units of `radius`.
inline double range_from_kappa(double kappa, double radius = kEarthRadiusKm) {
  return std::sqrt(8.0 * kMaternLambda) / kappa * radius;
}

inline double kappa_from_range(double range, double radius = kEarthRadiusKm) {
  return std::sqrt(8.0 * kMaternLambda) / (range / radius);
}

/// Marginal variance of the stationary field, 1 / (4 pi kappa^2 tau^2).
inline double marginal_variance(double kappa, double tau) {
  return 1.0 / (4.0 * std::numbers::pi * kappa * kappa * tau * tau);
}

struct KappaTau {
  double kappa = 1.0;
  double tau = 1.0;
};

inline KappaTau kappa_tau_from_range_sigma(double range_km, double sigma2,
                                           double radius = kEarthRadiusKm) {
  if (!(range_km > 0.0) || !(sigma2 > 0.0)) {
    throw DomainError("range and marginal variance must be positive");
  }
  const double kappa = kappa_from_range(range_km, radius);
  const double tau =
      1.0 / (std::sqrt(4.0 * std::numbers::pi) * kappa * std::sqrt(sigma2));
  return {kappa, tau};
}

struct SpatialPrecision {
  SparseMatrix q;
  double kappa = 1.0;
  double tau = 1.0;
  static constexpr int alpha = 2;
};

/// tau^2 (kappa^4 C + 2 kappa^2 G + G C^{-1} G); no SPD check.
inline SparseMatrix spatial_precision_matrix(const FemMatrices& fem, double kappa,
                                             double tau) {
  const double k2 = kappa * kappa;
  const double t2 = tau * tau;
  SparseMatrix c(fem.size(), fem.size());
  c.reserve(Eigen::VectorXi::Constant(fem.size(), 1));
  for (int i = 0; i < fem.size(); ++i) c.insert(i, i) = fem.c_lumped[i];
  SparseMatrix q = t2 * (k2 * k2 * c + 2.0 * k2 * fem.g + fem.g_cinv_g);
  q.makeCompressed();
  return q;
}

inline SpatialPrecision spatial_precision(const FemMatrices& fem, double kappa,
                                          double tau) {
  if (!(kappa > 0.0) || !(tau > 0.0) || !std::isfinite(kappa) || !std::isfinite(tau)) {
    throw DomainError("kappa and tau must be finite and positive");
  }
  SpatialPrecision out{spatial_precision_matrix(fem, kappa, tau), kappa, tau};
  if (!out.q.coeffs().allFinite()) {
    throw NumericalError("spatial precision overflowed for kappa=" +
                         std::to_string(kappa) + ", tau=" + std::to_string(tau));
  }
  SparseCholesky check(out.q);
  return out;
}

}  // namespace geolgm
