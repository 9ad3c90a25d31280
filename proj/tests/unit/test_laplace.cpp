#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "geolgm/laplace.hpp"
#include "support.hpp"

using namespace geolgm;
using geolgm::testing::small_config;
using geolgm::testing::spec_from;

namespace {

// Exact log N(y; 0, I + A Q^{-1} A^T) for the Gaussian test likelihood.
double gaussian_marginal(const LaplaceEvaluator& eval, const Hypers& h) {
  const Eigen::MatrixXd a(eval.design());
  const Eigen::MatrixXd q(eval.joint_precision(h));
  const Eigen::VectorXd& y = eval.spec().y;
  const Eigen::MatrixXd sigma =
      Eigen::MatrixXd::Identity(y.size(), y.size()) + a * q.llt().solve(a.transpose());
  const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * y.dot(llt.solve(y)) - 0.5 * log_det -
         0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi);
}

}  // namespace

TEST(Laplace, GaussianCaseMatchesClosedFormMarginal) {
  for (bool noise : {false, true}) {
    auto sim = simulate_dataset(small_config(Family::kBernoulli, 1, 2, 80, 3));
    ModelOptions mo;
    mo.noise_term = noise;
    ModelSpec spec = spec_from(sim, mo);
    spec.family = Family::kGaussian;
    CounterRng rng(9);
    for (int i = 0; i < spec.n_observations(); ++i) spec.y[i] = sim.eta[i] + rng.normal();
    LaplaceEvaluator eval(spec);
    for (const auto& h : {Hypers::from_natural(2.0, 0.2, 0.5, 4.0), Hypers::from_natural(5.0, 0.05, -0.3, 1.5)}) {
      const auto r = eval.evaluate(h);
      EXPECT_NEAR(r.log_marginal, gaussian_marginal(eval, h), 1e-6) << "noise=" << noise;
    }
  }
}

TEST(Laplace, NoDataGivesPriorMode) {
  auto sim = simulate_dataset(small_config(Family::kBernoulli, 1, 2, 10, 1));
  ModelSpec spec = spec_from(sim);
  spec.y.resize(0);
  spec.z.resize(0, 0);
  spec.covariate_names.clear();
  spec.projector.rows.clear();
  const Hypers h = Hypers::from_natural(3.0, 0.1, 0.4);
  auto r = inner_newton(spec, h);
  EXPECT_EQ(r.mode.x.cwiseAbs().maxCoeff(), 0.0);
  LaplaceEvaluator eval(spec);
  EXPECT_LT(SparseMatrix(r.hessian - eval.joint_precision(h)).norm(), 1e-12);
}

TEST(Laplace, ModeIsStationaryAndEtaConsistent) {
  for (auto family : {Family::kBernoulli, Family::kPoisson}) {
    auto sim = simulate_dataset(small_config(family, 2, 3, 400, 4));
    ModelSpec spec = spec_from(sim);
    LaplaceEvaluator eval(spec);
    const Hypers h = Hypers::from_natural(3.0, 0.15, 0.6);
    auto r = eval.evaluate(h);
    EXPECT_LT(eval.gradient(eval.joint_precision(h), r.state.x, r.state.eta).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT(r.gradient_norm, 1e-6);
    EXPECT_LE(r.iterations, kMaxNewtonIterations);
    // eta = b0 + Z b + A field recomputed by hand.
    const int nf = spec.field_size();
    Eigen::VectorXd field = r.state.x.head(nf);
    Eigen::VectorXd eta = spec.projector.apply(field).array() + r.state.x[nf];
    for (int j = 0; j < spec.n_covariates(); ++j) eta += r.state.x[nf + 1 + j] * spec.z.col(j);
    EXPECT_LT((eta - r.state.eta).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Laplace, PoissonLargeCountsApproachWeightedLeastSquares) {
  auto cfg = small_config(Family::kPoisson, 0, 1, 150, 8);
  cfg.beta0 = 8.0;
  auto sim = simulate_dataset(cfg);
  ModelSpec spec = spec_from(sim);
  ASSERT_EQ(spec.n_vertices(), 12);
  const Hypers h = Hypers::from_natural(cfg.kappa, cfg.tau, 0.0);
  LaplaceEvaluator eval(spec);
  auto r = eval.evaluate(h);
  // Gaussian surrogate: log y with variance 1/y.
  const Eigen::MatrixXd a(eval.design());
  const Eigen::MatrixXd q(eval.joint_precision(h));
  const Eigen::VectorXd w = spec.y;
  const Eigen::VectorXd t = spec.y.array().log();
  const Eigen::MatrixXd lhs = q + a.transpose() * w.asDiagonal() * a;
  const Eigen::VectorXd x_wls = lhs.ldlt().solve(a.transpose() * w.cwiseProduct(t));
  const Eigen::VectorXd eta_wls = a * x_wls;
  for (int i = 0; i < spec.n_observations(); ++i) {
    EXPECT_NEAR(r.state.eta[i], eta_wls[i], 0.01 * std::abs(eta_wls[i]));
  }
  EXPECT_NEAR(r.state.x[spec.field_size()], x_wls[spec.field_size()], 0.01 * std::abs(x_wls[spec.field_size()]));
}

TEST(Laplace, HyperPriorShiftIsAdditive) {
  auto sim = simulate_dataset(small_config(Family::kBernoulli, 1, 2, 200, 5));
  ModelSpec base = spec_from(sim);
  ModelOptions mo;
  mo.range_sigma_prior = RangeSigmaPrior{3000.0, 2.0};
  ModelSpec shifted = spec_from(sim, mo);
  LaplaceEvaluator a(base);
  LaplaceEvaluator b(shifted);
  for (const auto& h : {Hypers::from_natural(2.0, 0.2, 0.5), Hypers::from_natural(6.0, 0.04, 0.9)}) {
    const double delta = log_hyper_prior(shifted, h) - log_hyper_prior(base, h);
    EXPECT_NEAR(b.evaluate(h).log_posterior - a.evaluate(h).log_posterior, delta, 1e-9);
    EXPECT_NEAR(b.evaluate(h).log_marginal, a.evaluate(h).log_marginal, 1e-9);
  }
}

TEST(Laplace, HyperPriorIsNormalizedInEachCoordinate) {
  auto sim = simulate_dataset(small_config(Family::kBernoulli, 0, 2, 20, 5));
  ModelOptions mo;
  mo.noise_term = true;
  ModelSpec spec = spec_from(sim, mo);
  const Hypers ref;
  const double lp0 = log_hyper_prior(spec, ref);
  // The prior factorizes, so integrating one coordinate leaves the other
  // factors: log of the integral = lp0 - (own log factor at the reference).
  auto log_integral = [&](auto setter, double lo, double hi) {
    const int n = 200000;
    const double step = (hi - lo) / n;
    double sum = 0.0;
    for (int i = 0; i <= n; ++i) {
      Hypers h = ref;
      setter(h, lo + i * step);
      sum += (i == 0 || i == n ? 0.5 : 1.0) * std::exp(log_hyper_prior(spec, h) - lp0);
    }
    return lp0 + std::log(sum * step);
  };
  const double own_normal = log_normal_density(0.0, 0.0, 1.0);
  const double own_rho = log_normal_density(0.0, 0.0, kRhoPriorPrecision) + std::log(2.0);
  const double own_noise = kNoisePriorShape * std::log(kNoisePriorRate) - kNoisePriorRate;
  EXPECT_NEAR(log_integral([](Hypers& h, double v) { h.log_kappa = v; }, -12.0, 12.0), lp0 - own_normal, 1e-6);
  EXPECT_NEAR(log_integral([](Hypers& h, double v) { h.log_tau = v; }, -12.0, 12.0), lp0 - own_normal, 1e-6);
  EXPECT_NEAR(log_integral([](Hypers& h, double v) { h.rho_transformed = v; }, -30.0, 30.0), lp0 - own_rho, 1e-6);
  EXPECT_NEAR(log_integral([](Hypers& h, double v) { h.log_noise_precision = v; }, -40.0, 20.0), lp0 - own_noise, 1e-6);
}

TEST(Laplace, LogKappaProfileFavoursGeneratingValue) {
  auto cfg = small_config(Family::kBernoulli, 0, 1, 4000, 21);
  const auto kt = geolgm::testing::from_range_rad(1.0, 3.0);
  cfg.kappa = kt.kappa;
  cfg.tau = kt.tau;
  cfg.beta0 = 0.0;
  auto sim = simulate_dataset(cfg);
  // Refine around one site so the mesh has about 30 nodes.
  TriMesh mesh = refine_near(sim.mesh, {{20.0, 30.0}}, 1);
  ASSERT_GE(mesh.n_vertices(), 20);
  ASSERT_LE(mesh.n_vertices(), 50);
  auto fem = std::make_shared<const FemMatrices>(assemble_fem(mesh));
  const auto qs = spatial_precision(*fem, cfg.kappa, cfg.tau);
  const Eigen::VectorXd field = sample_gmrf(qs.q, 1, 77).col(0);
  Dataset d = sim.dataset;
  const Projector p = barycentric_projector(mesh, d.locations);
  const Eigen::VectorXd eta = p.apply(field).array() + cfg.beta0 + cfg.beta[0] * d.z.col(0).array();
  CounterRng rng(78);
  for (int i = 0; i < d.size(); ++i) d.y[i] = rng.bernoulli(logistic(eta[i])) ? 1.0 : 0.0;
  ModelSpec spec = make_model_spec(d, mesh, fem);
  LaplaceEvaluator eval(spec);
  const double truth = std::log(cfg.kappa);
  auto profile = [&](double log_kappa) {
    Hypers h = Hypers::from_natural(cfg.kappa, cfg.tau, 0.0);
    h.log_kappa = log_kappa;
    // hold the marginal variance fixed while kappa moves
    h.log_tau = std::log(cfg.tau) - (log_kappa - truth);
    return eval.evaluate(h).log_posterior;
  };
  double best = truth;
  double best_value = -std::numeric_limits<double>::infinity();
  for (double v = truth - 2.0; v <= truth + 2.0 + 1e-9; v += 0.05) {
    const double f = profile(v);
    if (f > best_value) {
      best_value = f;
      best = v;
    }
  }
  EXPECT_LT(std::abs(best - truth), 1.0);
  EXPECT_GT(profile(truth), profile(truth - 1.0));
  EXPECT_GT(profile(truth), profile(truth + 1.0));
}
