#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <string>

#include "geolgm/errors.hpp"
#include "geolgm/random.hpp"

namespace geolgm {

/// Sparse LDL^T factorization with fill-reducing ordering, plus the
/// GMRF-specific queries built on it: log-determinant, sampling, and the
/// diagonal of the inverse by Takahashi recursions over the factor's
/// sparsity pattern.
class SparseCholesky {
 public:
  using Matrix = Eigen::SparseMatrix<double>;

  SparseCholesky() = default;
  explicit SparseCholesky(const Matrix& a) { compute(a); }

  SparseCholesky(const SparseCholesky&) = delete;
  SparseCholesky& operator=(const SparseCholesky&) = delete;

  /// Symbolic analysis; later `factorize` calls must use the same pattern.
  void analyze(const Matrix& pattern) {
    solver_.analyzePattern(pattern);
    analyzed_ = true;
  }

  void factorize(const Matrix& a) {
    if (!analyzed_) analyze(a);
    solver_.factorize(a);
    const auto& d = solver_.vectorD();
    if (solver_.info() != Eigen::Success || !(d.array() > 0.0).all() ||
        !d.allFinite()) {
      throw NumericalError("matrix is not symmetric positive definite");
    }
  }

  void compute(const Matrix& a) {
    analyzed_ = false;
    factorize(a);
  }

  int size() const { return static_cast<int>(solver_.vectorD().size()); }

  double log_determinant() const { return solver_.vectorD().array().log().sum(); }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return solver_.solve(b); }

  /// Maps standard normal `z` to a draw with covariance A^{-1}.
  Eigen::VectorXd sample_from_normal(const Eigen::VectorXd& z) const {
    Eigen::VectorXd y = z.cwiseQuotient(solver_.vectorD().cwiseSqrt());
    solver_.matrixU().solveInPlace(y);
    return solver_.permutationPinv() * y;
  }

  Eigen::VectorXd sample(CounterRng& rng) const {
    Eigen::VectorXd z(size());
    for (int i = 0; i < size(); ++i) z[i] = rng.normal();
    return sample_from_normal(z);
  }

  /// diag(A^{-1}) in the original ordering.
  Eigen::VectorXd inverse_diagonal() const {
    const Matrix& l = solver_.matrixL().nestedExpression();
    const Eigen::VectorXd& d = solver_.vectorD();
    const int n = size();
    const auto* outer = l.outerIndexPtr();
    const auto* inner = l.innerIndexPtr();
    const double* lval = l.valuePtr();
    // sigma_off[p] = Sigma(inner[p], c) for the column c owning slot p.
    std::vector<double> sigma_off(static_cast<std::size_t>(l.nonZeros()), 0.0);
    Eigen::VectorXd sigma_diag(n);
    Eigen::MatrixXd block;
    Eigen::VectorXd lcol;

    for (int i = n - 1; i >= 0; --i) {
      const int start = outer[i];
      const int m = outer[i + 1] - start;
      if (m == 0) {
        sigma_diag[i] = 1.0 / d[i];
        continue;
      }
      // Sigma restricted to the rows of column i; every pair lies in the
      // filled pattern of the smaller index's column.
      block.resize(m, m);
      lcol.resize(m);
      for (int a = 0; a < m; ++a) {
        const int j = inner[start + a];
        lcol[a] = lval[start + a];
        block(a, a) = sigma_diag[j];
        int q = outer[j];
        for (int b = a + 1; b < m; ++b) {
          const int r = inner[start + b];
          while (inner[q] < r) ++q;
          block(b, a) = sigma_off[static_cast<std::size_t>(q)];
        }
      }
      const Eigen::VectorXd s =
          -(block.selfadjointView<Eigen::Lower>() * lcol);
      for (int a = 0; a < m; ++a) sigma_off[static_cast<std::size_t>(start + a)] = s[a];
      sigma_diag[i] = 1.0 / d[i] - lcol.dot(s);
    }
    Eigen::VectorXd out(n);
    const auto& perm = solver_.permutationP().indices();
    for (int i = 0; i < n; ++i) out[i] = sigma_diag[perm[i]];
    return out;
  }

 private:
  Eigen::SimplicialLDLT<Matrix, Eigen::Lower, Eigen::AMDOrdering<int>> solver_;
  bool analyzed_ = false;
};

}  // namespace geolgm
