#pragma once

#include <cmath>
#include <numbers>

#include "geolgm/data.hpp"
#include "geolgm/simulate.hpp"

namespace geolgm::testing {

inline KappaTau from_range_rad(double range_rad, double sigma2) {
  const double kappa = std::sqrt(8.0) / range_rad;
  return {kappa, 1.0 / (std::sqrt(4.0 * std::numbers::pi * sigma2) * kappa)};
}

inline SimConfig small_config(Family family, int subdivisions, int slices, int n,
                              std::uint64_t seed) {
  SimConfig cfg;
  cfg.family = family;
  cfg.subdivisions = subdivisions;
  cfg.time_slices = slices;
  cfg.n = n;
  cfg.seed = seed;
  const auto kt = from_range_rad(1.0, 1.0);
  cfg.kappa = kt.kappa;
  cfg.tau = kt.tau;
  cfg.rho = 0.7;
  return cfg;
}

inline ModelSpec spec_from(const SimulatedData& sim, const ModelOptions& options = {}) {
  return make_model_spec(sim.dataset, sim.mesh, sim.fem, options);
}

}  // namespace geolgm::testing
