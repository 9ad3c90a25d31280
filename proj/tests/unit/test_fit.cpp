#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "geolgm/fit.hpp"
#include "geolgm/nelder_mead.hpp"
#include "support.hpp"

using namespace geolgm;
using geolgm::testing::small_config;
using geolgm::testing::spec_from;

namespace {

void expect_invariants(const FitResult& r) {
  for (const auto& p : r.fixed_effects) {
    EXPECT_LE(p.q025, p.mean) << p.name;
    EXPECT_LE(p.mean, p.q975) << p.name;
    EXPECT_GE(p.sd, 0.0) << p.name;
  }
  for (const auto& h : r.hypers) {
    EXPECT_LE(h.q025, h.mode) << h.name;
    EXPECT_LE(h.mode, h.q975) << h.name;
    EXPECT_TRUE(std::isfinite(h.mean)) << h.name;
  }
  EXPECT_GE(r.field_sd.minCoeff(), 0.0);
  EXPECT_TRUE(r.field_mean.allFinite());
  double total = 0.0;
  for (const auto& g : r.grid) total += g.weight;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_GE(r.p_waic, 0.0);
  EXPECT_TRUE(std::isfinite(r.dic));
  EXPECT_TRUE(std::isfinite(r.waic));
}

}  // namespace

TEST(Explore, QuadraticSurrogateModeRecovered) {
  const Eigen::Vector3d m(0.7, -1.3, 2.1);
  Eigen::Matrix3d a;
  a << 4.0, 1.0, 0.5, 1.0, 3.0, -0.4, 0.5, -0.4, 2.0;
  HyperObjective f = [&](const std::vector<double>& t, int) {
    const Eigen::Vector3d d = Eigen::Vector3d(t[0], t[1], t[2]) - m;
    return -0.5 * d.dot(a * d);
  };
  auto ex = explore_hypers(f, {0.0, 0.0, 0.0});
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(ex.mode[static_cast<std::size_t>(i)], m[i], 1e-4);
  EXPECT_TRUE(ex.precision.isApprox(a, 1e-6));
  ASSERT_EQ(ex.grid.size(), 27u);
  double total = 0.0;
  for (const auto& g : ex.grid) total += g.weight;
  EXPECT_NEAR(total, 1.0, 1e-12);
  // An exactly Gaussian target reproduces the Gauss-Hermite weights.
  std::vector<double> w;
  for (const auto& g : ex.grid) w.push_back(g.weight);
  std::sort(w.begin(), w.end());
  EXPECT_NEAR(w.back(), 8.0 / 27.0, 1e-9);
  EXPECT_NEAR(w.front(), 1.0 / 216.0, 1e-9);
  EXPECT_LE(ex.evaluations, NelderMeadOptions{}.max_evaluations);
}

TEST(Explore, BudgetErrorCarriesBestSoFar) {
  HyperObjective f = [](const std::vector<double>& t, int) { return -t[0] * t[0] - t[1] * t[1]; };
  ExploreOptions opt;
  opt.simplex.max_evaluations = 10;
  try {
    explore_hypers(f, {3.0, 3.0}, opt);
    FAIL() << "expected a budget error";
  } catch (const BudgetError& e) {
    EXPECT_EQ(e.best_point.size(), 2u);
    EXPECT_GT(e.best_value, -18.0);
  }
}

TEST(Fit, InvariantsAndReproducibility) {
  auto sim = simulate_dataset(small_config(Family::kBernoulli, 1, 2, 300, 2));
  ModelSpec spec = spec_from(sim);
  auto r = fit(spec);
  expect_invariants(r);
  EXPECT_EQ(r.field_mean.size(), spec.field_size());
  EXPECT_EQ(r.grid.size(), 27u);
  EXPECT_EQ(r.eta_samples.cols(), 200);
  auto again = fit(spec);
  EXPECT_EQ(r.fixed_effects[1].mean, again.fixed_effects[1].mean);
  EXPECT_EQ(r.waic, again.waic);
}

TEST(Fit, PoissonAndNoiseTermInvariants) {
  auto sim = simulate_dataset(small_config(Family::kPoisson, 1, 1, 300, 3));
  ModelOptions mo;
  mo.noise_term = true;
  ModelSpec spec = spec_from(sim, mo);
  auto r = fit(spec);
  expect_invariants(r);
  // log kappa, log tau and the noise precision; no rho when T = 1.
  EXPECT_EQ(r.grid.size(), 27u);
  EXPECT_EQ(r.grid.front().theta.size(), 3u);
  EXPECT_NO_THROW(r.hyper("noise_variance"));
  EXPECT_THROW(r.hyper("rho"), DomainError);
}

TEST(Fit, PerturbedInitReachesSameMode) {
  auto sim = simulate_dataset(small_config(Family::kBernoulli, 1, 2, 300, 6));
  ModelSpec spec = spec_from(sim);
  const Hypers init = default_initial_hypers(spec);
  const auto base = optimize_hypers(spec, init);
  CounterRng rng(4);
  for (int rep = 0; rep < 3; ++rep) {
    Hypers p = init;
    p.log_kappa += rng.uniform() - 0.5;
    p.log_tau += rng.uniform() - 0.5;
    p.rho_transformed += rng.uniform() - 0.5;
    const auto other = optimize_hypers(spec, p);
    EXPECT_NEAR(other.exploration.mode_value, base.exploration.mode_value, 0.1);
  }
}

TEST(Fit, InterceptOnlyPoissonRecoversLogMean) {
  // Counts of 2 and 3 mixed so the sample mean is e.
  const int n = 10000;
  const int twos = static_cast<int>(std::lround((3.0 - std::exp(1.0)) * n));
  Dataset d;
  d.family = Family::kPoisson;
  d.window = {2002, 2002};
  CounterRng rng(12);
  for (int i = 0; i < n; ++i) {
    d.locations.push_back(uniform_sphere_point(rng));
    d.years.push_back(2002);
  }
  d.y.resize(n);
  for (int i = 0; i < n; ++i) d.y[i] = i < twos ? 2.0 : 3.0;
  d.z.resize(n, 0);
  auto mesh = build_icosphere(1);
  auto fem = std::make_shared<const FemMatrices>(assemble_fem(mesh));
  ModelOptions mo;
  mo.range_sigma_prior = RangeSigmaPrior{6371.0, 1e-4};
  auto r = fit(make_model_spec(d, mesh, fem, mo));
  expect_invariants(r);
  EXPECT_NEAR(r.fixed(kInterceptName).mean, 1.0, 0.05);
}

TEST(Fit, FieldUncertaintyLowerNearData) {
  auto cfg = small_config(Family::kBernoulli, 2, 1, 20000, 7);
  auto sim = simulate_dataset(cfg);
  // Keep only observations in one cap.
  const Dataset& d = sim.dataset;
  Dataset kept = d;
  kept.locations.clear();
  kept.years.clear();
  std::vector<int> rows;
  for (int i = 0; i < d.size(); ++i) {
    if (great_circle_distance(d.locations[static_cast<std::size_t>(i)], {20.0, 10.0}) < 4000.0) rows.push_back(i);
  }
  kept.y.resize(static_cast<int>(rows.size()));
  kept.raw.resize(static_cast<int>(rows.size()), d.raw.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    kept.locations.push_back(d.locations[static_cast<std::size_t>(rows[k])]);
    kept.years.push_back(d.years[static_cast<std::size_t>(rows[k])]);
    kept.y[static_cast<int>(k)] = d.y[rows[k]];
    kept.raw.row(static_cast<int>(k)) = d.raw.row(rows[k]);
  }
  kept.z = standardize(kept.raw, kept.covariate_names).z;

  const double radius_km = 0.15 * kEarthRadiusKm;  // about one k=2 edge
  std::vector<int> nearby(static_cast<std::size_t>(sim.mesh.n_vertices()), 0);
  for (int v = 0; v < sim.mesh.n_vertices(); ++v) {
    const GeoPoint node = to_geopoint(sim.mesh.vertices[static_cast<std::size_t>(v)]);
    for (const auto& p : kept.locations) {
      if (great_circle_distance(p, node) < radius_km) ++nearby[static_cast<std::size_t>(v)];
    }
  }

  ModelOptions informative;
  informative.range_sigma_prior = RangeSigmaPrior{6371.0, 1.0};
  for (const auto& options : {ModelOptions{}, informative}) {
    auto r = fit(make_model_spec(kept, sim.mesh, sim.fem, options));
    expect_invariants(r);
    double dense_sum = 0.0;
    double empty_sum = 0.0;
    double max_dense = 0.0;
    double min_empty = std::numeric_limits<double>::infinity();
    int dense = 0;
    int empty = 0;
    for (int v = 0; v < sim.mesh.n_vertices(); ++v) {
      const int c = nearby[static_cast<std::size_t>(v)];
      if (c >= 10) {
        ++dense;
        dense_sum += r.field_sd[v];
        max_dense = std::max(max_dense, r.field_sd[v]);
      } else if (c == 0) {
        ++empty;
        empty_sum += r.field_sd[v];
        min_empty = std::min(min_empty, r.field_sd[v]);
      }
    }
    ASSERT_GT(dense, 5);
    ASSERT_GT(empty, 5);
    EXPECT_LT(dense_sum / dense, empty_sum / empty);
    if (options.range_sigma_prior) EXPECT_LT(max_dense, min_empty);
  }
}

TEST(Fit, StandardizedEffectsInvariantToRawScale) {
  auto cfg = small_config(Family::kBernoulli, 1, 2, 300, 9);
  cfg.beta = {0.4, -0.2};
  auto sim = simulate_dataset(cfg);
  auto r1 = fit(spec_from(sim));
  Dataset d = sim.dataset;
  d.raw.col(0) *= 1000.0;
  d.raw.col(1) *= 0.003;
  auto st = standardize(d.raw, d.covariate_names);
  d.z = st.z;
  auto r2 = fit(make_model_spec(d, sim.mesh, sim.fem));
  for (std::size_t j = 0; j < r1.fixed_effects.size(); ++j) {
    EXPECT_NEAR(r1.fixed_effects[j].mean, r2.fixed_effects[j].mean, 1e-8);
  }
}

TEST(InformationCriteria, DegenerateAndPenalty) {
  Eigen::VectorXd y(4);
  y << 1, 0, 1, 1;
  Eigen::VectorXd eta(4);
  eta << 0.3, -0.2, 1.0, 0.0;
  Eigen::MatrixXd same = eta.replicate(1, 200);
  auto ic = information_criteria(Family::kBernoulli, y, eta, same);
  double ll = 0.0;
  for (int i = 0; i < 4; ++i) ll += loglik(Family::kBernoulli, eta[i], y[i]);
  EXPECT_NEAR(ic.p_d, 0.0, 1e-12);
  EXPECT_NEAR(ic.dic, -2.0 * ll, 1e-12);
  EXPECT_NEAR(ic.p_waic, 0.0, 1e-12);
  EXPECT_NEAR(ic.waic, -2.0 * ll, 1e-12);

  CounterRng rng(3);
  Eigen::MatrixXd spread(4, 200);
  for (int s = 0; s < 200; ++s) {
    for (int i = 0; i < 4; ++i) spread(i, s) = eta[i] + 0.5 * rng.normal();
  }
  auto noisy = information_criteria(Family::kPoisson, y, eta, spread);
  EXPECT_GT(noisy.p_waic, 0.0);
}

TEST(Scenario, WorkedExamples) {
  EXPECT_NEAR(scenario_effect(Family::kBernoulli, -0.11, 0.73).response, 0.480, 0.001);
  EXPECT_NEAR(scenario_effect(Family::kPoisson, 0.51, 0.25).response, 1.136, 0.001);
  EXPECT_NEAR(scenario_effect(Family::kBernoulli, -0.11, 0.73).change, -0.02, 0.001);
  EXPECT_NEAR(scenario_effect(Family::kPoisson, 0.51, 0.25).change, 0.14, 0.005);
  EXPECT_EQ(scenario_effect(Family::kBernoulli, 0.7, 0.0).response, 0.5);
  EXPECT_EQ(scenario_effect(Family::kPoisson, 0.7, 0.0).response, 1.0);
}

TEST(Scenario, RawScaleConversionAndErrors) {
  FitResult r;
  r.family = Family::kBernoulli;
  r.fixed_effects = {{kInterceptName, 0.2, 0.1, 0.0, 0.4}, {"luminosity", -0.11, 0.02, -0.15, -0.07}};
  // A raw change of 0.73 sd from the mean.
  auto e = scenario_effect(r, "luminosity", 7.3, 40.0, 10.0);
  EXPECT_NEAR(e.z, 0.73, 1e-12);
  EXPECT_NEAR(e.response, 0.480, 0.001);
  EXPECT_THROW(scenario_effect(r, "population", 1.0, 0.0, 1.0), DomainError);
  EXPECT_THROW(scenario_effect(r, kInterceptName, 1.0, 0.0, 1.0), DomainError);
}

TEST(FitExport, SummaryCsvLayout) {
  auto sim = simulate_dataset(small_config(Family::kBernoulli, 0, 2, 100, 1));
  auto r = fit(spec_from(sim));
  std::ostringstream os;
  write_fit_summary(os, r);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "name,mean,sd,q025,q975");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, static_cast<int>(r.fixed_effects.size() + r.hypers.size()));
  std::ostringstream fs;
  write_field_summary(fs, r);
  EXPECT_EQ(fs.str().substr(0, 17), "node,year,mean,sd");
}
