#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <memory>
#include <numbers>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "geolgm/data.hpp"
#include "geolgm/fem.hpp"
#include "geolgm/likelihood.hpp"
#include "geolgm/mesh.hpp"
#include "geolgm/random.hpp"
#include "geolgm/spacetime.hpp"
#include "geolgm/sparse_cholesky.hpp"
#include "geolgm/spde.hpp"

namespace geolgm {

/// Draws `n_samples` columns x with x ~ N(0, Q^{-1}). Sample s uses stream
/// s of the seed, so any column can be reproduced on its own.
inline Eigen::MatrixXd sample_gmrf(const SparseMatrix& q, int n_samples, std::uint64_t seed) {
  if (n_samples < 0) throw DomainError("sample count must be nonnegative");
  SparseCholesky chol;
  chol.compute(q);
  const CounterRng root(seed);
  Eigen::MatrixXd out(q.rows(), n_samples);
  for (int s = 0; s < n_samples; ++s) {
    CounterRng rng = root.split(static_cast<std::uint64_t>(s));
    out.col(s) = chol.sample(rng);
  }
  return out;
}

inline Eigen::MatrixXd sample_gmrf(const SpaceTimePrecision& q, int n_samples,
                                   std::uint64_t seed) {
  return sample_gmrf(q.q, n_samples, seed);
}

struct SimConfig {
  int subdivisions = 3;
  int time_slices = 3;
  int first_year = 2002;
  Family family = Family::kBernoulli;
  int n = 2000;
  double beta0 = -0.5;
  /// Effects on the standardized covariate scale; one covariate per entry.
  std::vector<double> beta{0.3};
  double kappa = 4.0;
  double tau = 0.1;
  double rho = 0.9;
  std::uint64_t seed = 1;
};

struct SimulatedData {
  TriMesh mesh;
  std::shared_ptr<const FemMatrices> fem;
  Dataset dataset;
  /// True latent field, time-major.
  Eigen::VectorXd field;
  Eigen::VectorXd eta;
  std::vector<std::pair<std::string, double>> truth;
};

inline void validate(const SimConfig& cfg) {
  if (cfg.subdivisions < 0 || cfg.subdivisions > kMaxSubdivisions) {
    throw DomainError("simulation subdivisions out of range");
  }
  if (cfg.time_slices < 1) throw DomainError("simulation needs at least one time slice");
  if (cfg.n < 1) throw DomainError("simulation needs at least one observation");
  if (!(cfg.kappa > 0.0) || !(cfg.tau > 0.0)) throw DomainError("kappa and tau must be positive");
  if (!(std::abs(cfg.rho) < 1.0)) throw DomainError("rho must lie in (-1, 1)");
  if (cfg.family == Family::kGaussian) throw DomainError("simulation supports Bernoulli and Poisson");
}

/// Uniform point on the unit sphere.
inline GeoPoint uniform_sphere_point(CounterRng& rng) {
  const double z = 2.0 * rng.uniform() - 1.0;
  const double lon = 360.0 * rng.uniform() - 180.0;
  return normalize({std::asin(z) * kRadToDeg, lon});
}

/// Forward simulation on a fresh icosphere. Covariates are drawn N(0, 1)
/// on the raw scale, standardized, and the true effects apply to the
/// standardized columns.
inline SimulatedData simulate_dataset(const SimConfig& cfg) {
  validate(cfg);
  SimulatedData out;
  out.mesh = build_icosphere(cfg.subdivisions);
  out.fem = std::make_shared<const FemMatrices>(assemble_fem(out.mesh));
  const CounterRng root(cfg.seed);

  const SpatialPrecision qs = spatial_precision(*out.fem, cfg.kappa, cfg.tau);
  const auto qst = kron_precision(ar1_precision(cfg.time_slices, cfg.rho), qs);
  out.field = sample_gmrf(qst, 1, root.split(1)()).col(0);

  Dataset& d = out.dataset;
  d.family = cfg.family;
  d.window = {cfg.first_year, cfg.first_year + cfg.time_slices - 1};
  CounterRng place = root.split(2);
  for (int i = 0; i < cfg.n; ++i) {
    d.locations.push_back(uniform_sphere_point(place));
    const int slice = std::min(cfg.time_slices - 1,
                               static_cast<int>(place.uniform() * cfg.time_slices));
    d.years.push_back(cfg.first_year + slice);
  }

  const int k = static_cast<int>(cfg.beta.size());
  CounterRng cov = root.split(3);
  d.raw.resize(cfg.n, k);
  for (int j = 0; j < k; ++j) {
    d.covariate_names.push_back("x" + std::to_string(j + 1));
    for (int i = 0; i < cfg.n; ++i) d.raw(i, j) = cov.normal();
  }
  if (k > 0) {
    auto st = standardize(d.raw, d.covariate_names);
    d.z = std::move(st.z);
    d.transforms = std::move(st.transforms);
  } else {
    d.z.resize(cfg.n, 0);
  }

  std::vector<int> slice(d.years.size());
  for (std::size_t i = 0; i < d.years.size(); ++i) slice[i] = d.years[i] - cfg.first_year;
  const Projector a = spacetime_projector(barycentric_projector(out.mesh, d.locations), slice,
                                          cfg.time_slices);
  out.eta = a.apply(out.field).array() + cfg.beta0;
  for (int j = 0; j < k; ++j) out.eta += cfg.beta[static_cast<std::size_t>(j)] * d.z.col(j);

  CounterRng resp = root.split(4);
  d.y.resize(cfg.n);
  for (int i = 0; i < cfg.n; ++i) {
    const double mean = inverse_link(cfg.family, out.eta[i]);
    d.y[i] = cfg.family == Family::kBernoulli ? (resp.bernoulli(mean) ? 1.0 : 0.0)
                                              : static_cast<double>(resp.poisson(mean));
  }

  out.truth = {{"intercept", cfg.beta0}};
  for (int j = 0; j < k; ++j) {
    out.truth.emplace_back(d.covariate_names[static_cast<std::size_t>(j)],
                           cfg.beta[static_cast<std::size_t>(j)]);
  }
  out.truth.emplace_back("kappa", cfg.kappa);
  out.truth.emplace_back("tau", cfg.tau);
  if (cfg.time_slices > 1) out.truth.emplace_back("rho", cfg.rho);
  out.truth.emplace_back("range_km", range_from_kappa(cfg.kappa));
  out.truth.emplace_back("sigma2_field", marginal_variance(cfg.kappa, cfg.tau));
  return out;
}

inline void write_truth(std::ostream& os, const SimulatedData& sim) {
  os << "parameter,value\n" << std::setprecision(17);
  for (const auto& [name, value] : sim.truth) os << name << ',' << value << '\n';
}

}  // namespace geolgm
