#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>
#include <vector>

#include "geolgm/errors.hpp"

namespace geolgm {

struct NelderMeadOptions {
  /// Stop when the spread of objective values over the simplex falls below
  /// `ftol` and every vertex lies within `xtol` of the best one.
  double ftol = 1e-5;
  double xtol = 1e-2;
  double initial_step = 0.5;
  int max_evaluations = 400;
};

struct NelderMeadResult {
  std::vector<double> argmax;
  double value = 0.0;
  int evaluations = 0;
};

/// Maximizes `f` with the Nelder-Mead simplex method. Non-finite objective
/// values are treated as -infinity.
template <class F>
NelderMeadResult nelder_mead_maximize(F&& f, std::vector<double> start,
                                      const NelderMeadOptions& opt = {},
                                      int* evaluation_counter = nullptr) {
  const std::size_t d = start.size();
  int evals = 0;
  std::vector<double> best_point = start;
  double best_value = -std::numeric_limits<double>::infinity();
  auto eval = [&](const std::vector<double>& x) {
    if (evals >= opt.max_evaluations) {
      throw BudgetError("hyperparameter search exceeded " +
                            std::to_string(opt.max_evaluations) + " evaluations",
                        best_point, best_value);
    }
    ++evals;
    if (evaluation_counter) ++*evaluation_counter;
    double v = f(x);
    if (!std::isfinite(v)) v = -std::numeric_limits<double>::infinity();
    if (v > best_value) {
      best_value = v;
      best_point = x;
    }
    return v;
  };

  std::vector<std::vector<double>> simplex(d + 1, start);
  std::vector<double> values(d + 1);
  for (std::size_t i = 0; i < d; ++i) simplex[i + 1][i] += opt.initial_step;
  for (std::size_t i = 0; i <= d; ++i) values[i] = eval(simplex[i]);

  std::vector<std::size_t> order(d + 1);
  auto point = [&](const std::vector<double>& centroid, const std::vector<double>& worst,
                   double t) {
    std::vector<double> p(d);
    for (std::size_t i = 0; i < d; ++i) p[i] = centroid[i] + t * (worst[i] - centroid[i]);
    return p;
  };

  while (true) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second_worst = order[d > 0 ? d - 1 : 0];

    double spread = values[best] - values[worst];
    double size = 0.0;
    for (std::size_t i = 0; i <= d; ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        size = std::max(size, std::abs(simplex[i][k] - simplex[best][k]));
      }
    }
    if (d == 0 || (std::isfinite(spread) && spread < opt.ftol && size < opt.xtol)) break;

    std::vector<double> centroid(d, 0.0);
    for (std::size_t i = 0; i <= d; ++i) {
      if (i == worst) continue;
      for (std::size_t k = 0; k < d; ++k) centroid[k] += simplex[i][k] / static_cast<double>(d);
    }
    const auto reflected = point(centroid, simplex[worst], -1.0);
    const double fr = eval(reflected);
    if (fr > values[best]) {
      const auto expanded = point(centroid, simplex[worst], -2.0);
      const double fe = eval(expanded);
      if (fe > fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
      continue;
    }
    if (fr > values[second_worst]) {
      simplex[worst] = reflected;
      values[worst] = fr;
      continue;
    }
    const bool outside = fr > values[worst];
    const auto contracted = point(centroid, outside ? reflected : simplex[worst], 0.5);
    const double fc = eval(contracted);
    if (fc > std::max(fr, values[worst])) {
      simplex[worst] = contracted;
      values[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i <= d; ++i) {
      if (i == best) continue;
      for (std::size_t k = 0; k < d; ++k) {
        simplex[i][k] = simplex[best][k] + 0.5 * (simplex[i][k] - simplex[best][k]);
      }
      values[i] = eval(simplex[i]);
    }
  }
  const auto top = static_cast<std::size_t>(
      std::max_element(values.begin(), values.end()) - values.begin());
  return {simplex[top], values[top], evals};
}

/// Objective used during exploration. `worker` identifies the calling
/// thread so callers can keep per-thread workspaces.
using HyperObjective = std::function<double(const std::vector<double>& theta, int worker)>;

struct ExploreOptions {
  NelderMeadOptions simplex;
  /// Central-difference step on the transformed scale.
  double fd_step = 0.05;
  /// Lower bound on Hessian eigenvalues; caps grid spacing at 1/sqrt(floor).
  double curvature_floor = 0.1;
  /// Grid offset along each principal axis in standard deviations. The
  /// default is the three-point Gauss-Hermite node.
  double grid_step = 1.7320508075688772;
  /// Largest coordinate change allowed for the Newton refinement of the mode.
  double max_newton_step = 0.5;
  int threads = 1;
};

struct GridPoint {
  std::vector<double> theta;
  double log_posterior = 0.0;
  double weight = 0.0;
};

struct HyperExploration {
  std::vector<double> mode;
  double mode_value = 0.0;
  /// Negative Hessian of the log posterior at the mode.
  Eigen::MatrixXd precision;
  /// Its inverse after eigenvalue flooring.
  Eigen::MatrixXd covariance;
  std::vector<GridPoint> grid;
  int evaluations = 0;
};

namespace detail {

/// Evaluates `points` with up to `threads` workers. Result order matches the
/// input order regardless of scheduling.
inline std::vector<double> evaluate_batch(const HyperObjective& f,
                                          const std::vector<std::vector<double>>& points,
                                          int threads) {
  std::vector<double> out(points.size());
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(points.size())));
  auto run = [&](int w) {
    for (std::size_t i = static_cast<std::size_t>(w); i < points.size(); i += static_cast<std::size_t>(workers)) {
      double v = f(points[i], w);
      out[i] = std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
    }
  };
  if (workers == 1) {
    run(0);
    return out;
  }
  std::vector<std::jthread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        run(w);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace detail

/// Finite-difference curvature at `mode`, an optional Newton refinement of
/// the mode, then a 3-point-per-axis grid
/// along its principal axes. Each point's weight is the product of
/// three-point Gauss-Hermite weights (1/6, 2/3, 1/6) times the ratio of the
/// posterior density to its Gaussian approximation; weights sum to 1.
/// `evaluations_used` counts against the budget.
inline HyperExploration explore_around_mode(const HyperObjective& f, std::vector<double> mode,
                                            double mode_value, const ExploreOptions& opt,
                                            int evaluations_used = 0) {
  HyperExploration out;
  int evaluations = evaluations_used;
  out.mode = std::move(mode);
  out.mode_value = mode_value;
  const int d = static_cast<int>(out.mode.size());
  const double h = opt.fd_step;

  auto charge = [&](std::size_t count, const std::vector<double>& best) {
    if (evaluations + static_cast<int>(count) > opt.simplex.max_evaluations) {
      throw BudgetError("hyperparameter exploration exceeded " +
                            std::to_string(opt.simplex.max_evaluations) + " evaluations",
                        best, out.mode_value);
    }
    evaluations += static_cast<int>(count);
  };

  std::vector<std::vector<double>> probes;
  auto shifted = [&](int i, double si, int j, double sj) {
    auto p = out.mode;
    p[static_cast<std::size_t>(i)] += si;
    if (j >= 0) p[static_cast<std::size_t>(j)] += sj;
    return p;
  };
  for (int i = 0; i < d; ++i) {
    probes.push_back(shifted(i, h, -1, 0));
    probes.push_back(shifted(i, -h, -1, 0));
  }
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      probes.push_back(shifted(i, h, j, h));
      probes.push_back(shifted(i, h, j, -h));
      probes.push_back(shifted(i, -h, j, h));
      probes.push_back(shifted(i, -h, j, -h));
    }
  }
  charge(probes.size(), out.mode);
  const auto pv = detail::evaluate_batch(f, probes, opt.threads);
  Eigen::MatrixXd hess(d, d);
  std::size_t k = 0;
  for (int i = 0; i < d; ++i, k += 2) {
    hess(i, i) = -(pv[k] - 2.0 * out.mode_value + pv[k + 1]) / (h * h);
  }
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j, k += 4) {
      hess(i, j) = hess(j, i) = -(pv[k] - pv[k + 1] - pv[k + 2] + pv[k + 3]) / (4.0 * h * h);
    }
  }
  out.precision = hess;

  // One Newton step from the simplex optimum using the same probes; kept
  // only when it improves the objective.
  Eigen::VectorXd grad(d);
  for (int i = 0; i < d; ++i) grad[i] = (pv[2 * i] - pv[2 * i + 1]) / (2.0 * h);
  if (d > 0 && hess.allFinite() && grad.allFinite()) {
    Eigen::LLT<Eigen::MatrixXd> llt(hess);
    if (llt.info() == Eigen::Success) {
      const Eigen::VectorXd step = llt.solve(grad);
      if (step.cwiseAbs().maxCoeff() < opt.max_newton_step && step.cwiseAbs().maxCoeff() > 0.0) {
        auto p = out.mode;
        for (int i = 0; i < d; ++i) p[static_cast<std::size_t>(i)] += step[i];
        charge(1, out.mode);
        const double v = detail::evaluate_batch(f, {p}, 1).front();
        if (v > out.mode_value) {
          out.mode = std::move(p);
          out.mode_value = v;
        }
      }
    }
  }
  if (!hess.allFinite()) hess = Eigen::MatrixXd::Identity(d, d);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hess);
  Eigen::VectorXd lambda = eig.eigenvalues().cwiseMax(opt.curvature_floor);
  const Eigen::MatrixXd v = eig.eigenvectors();
  out.covariance = v * lambda.cwiseInverse().asDiagonal() * v.transpose();
  const Eigen::MatrixXd axes = v * lambda.cwiseSqrt().cwiseInverse().asDiagonal();

  std::vector<std::vector<double>> grid;
  std::vector<double> log_base;
  const int count = static_cast<int>(std::pow(3, d));
  for (int g = 0; g < count; ++g) {
    int code = g;
    Eigen::VectorXd zv(d);
    double lb = 0.0;
    for (int i = d - 1; i >= 0; --i) {
      const int node = code % 3 - 1;
      zv[i] = node * opt.grid_step;
      lb += std::log(node == 0 ? 2.0 / 3.0 : 1.0 / 6.0);
      code /= 3;
    }
    log_base.push_back(lb + 0.5 * zv.squaredNorm());
    const Eigen::VectorXd offset = axes * zv;
    auto p = out.mode;
    for (int i = 0; i < d; ++i) p[static_cast<std::size_t>(i)] += offset[i];
    grid.push_back(std::move(p));
  }
  const std::size_t centre = static_cast<std::size_t>(count / 2);
  std::vector<std::vector<double>> to_eval;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (g != centre) to_eval.push_back(grid[g]);
  }
  charge(to_eval.size(), out.mode);
  const auto gv = detail::evaluate_batch(f, to_eval, opt.threads);
  std::vector<double> values(grid.size());
  for (std::size_t g = 0, j = 0; g < grid.size(); ++g) {
    values[g] = g == centre ? out.mode_value : gv[j++];
  }
  std::vector<double> log_w(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) log_w[g] = values[g] + log_base[g];
  const double top = *std::max_element(log_w.begin(), log_w.end());
  double total = 0.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double w = std::exp(log_w[g] - top);
    out.grid.push_back({grid[g], values[g], w});
    total += w;
  }
  for (auto& gp : out.grid) gp.weight /= total;
  out.evaluations = evaluations;
  return out;
}

/// Nelder-Mead mode search followed by `explore_around_mode`.
inline HyperExploration explore_hypers(const HyperObjective& f, std::vector<double> start,
                                       const ExploreOptions& opt = {}) {
  int evaluations = 0;
  const auto nm = nelder_mead_maximize([&](const std::vector<double>& x) { return f(x, 0); },
                                       std::move(start), opt.simplex, &evaluations);
  return explore_around_mode(f, nm.argmax, nm.value, opt, evaluations);
}

}  // namespace geolgm
