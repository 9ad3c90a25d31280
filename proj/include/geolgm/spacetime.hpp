#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "geolgm/errors.hpp"
#include "geolgm/fem.hpp"
#include "geolgm/projector.hpp"
#include "geolgm/spde.hpp"

namespace geolgm {

/// AR(1) precision over T slices, scaled so every slice has unit marginal
/// variance.
struct Ar1Precision {
  int time_slices = 1;
  double rho = 0.0;
  SparseMatrix q;

  /// log det Q_t = -(T-1) log(1 - rho^2).
  double log_determinant() const {
    return -(time_slices - 1) * std::log1p(-rho * rho);
  }
};

inline Ar1Precision ar1_precision(int time_slices, double rho) {
  if (time_slices < 1) throw DomainError("need at least one time slice");
  if (!(std::abs(rho) < 1.0)) throw DomainError("AR(1) coefficient must satisfy |rho| < 1");
  Ar1Precision out{time_slices, rho, SparseMatrix(time_slices, time_slices)};
  std::vector<Eigen::Triplet<double>> t;
  if (time_slices == 1) {
    t.emplace_back(0, 0, 1.0);
  } else {
    const double s = 1.0 / (1.0 - rho * rho);
    for (int i = 0; i < time_slices; ++i) {
      const bool end = i == 0 || i == time_slices - 1;
      t.emplace_back(i, i, s * (end ? 1.0 : 1.0 + rho * rho));
      if (i + 1 < time_slices) {
        t.emplace_back(i, i + 1, -s * rho);
        t.emplace_back(i + 1, i, -s * rho);
      }
    }
  }
  out.q.setFromTriplets(t.begin(), t.end());
  out.q.makeCompressed();
  return out;
}

/// Kronecker product a (x) b. Entry (i*nb + k, j*nb + l) = a(i,j) b(k,l), so
/// the first factor selects the block: time-major when `a` is temporal.
/// Explicitly stored zeros of either factor stay in the pattern.
inline SparseMatrix kron(const SparseMatrix& a, const SparseMatrix& b) {
  const long long rows = static_cast<long long>(a.rows()) * b.rows();
  const long long cols = static_cast<long long>(a.cols()) * b.cols();
  const long long nnz = static_cast<long long>(a.nonZeros()) * b.nonZeros();
  if (rows > std::numeric_limits<int>::max() || nnz > std::numeric_limits<int>::max()) {
    throw ResourceError("Kronecker product dimension overflow");
  }
  SparseMatrix out(static_cast<int>(rows), static_cast<int>(cols));
  Eigen::VectorXi per_col(out.cols());
  for (int j = 0; j < a.cols(); ++j) {
    const int a_nnz = a.outerIndexPtr()[j + 1] - a.outerIndexPtr()[j];
    for (int l = 0; l < b.cols(); ++l) {
      per_col[j * b.cols() + l] = a_nnz * (b.outerIndexPtr()[l + 1] - b.outerIndexPtr()[l]);
    }
  }
  out.reserve(per_col);
  for (int j = 0; j < a.cols(); ++j) {
    for (int l = 0; l < b.cols(); ++l) {
      const int col = j * static_cast<int>(b.cols()) + l;
      for (SparseMatrix::InnerIterator ia(a, j); ia; ++ia) {
        for (SparseMatrix::InnerIterator ib(b, l); ib; ++ib) {
          out.insert(static_cast<int>(ia.row() * b.rows() + ib.row()), col) =
              ia.value() * ib.value();
        }
      }
    }
  }
  out.makeCompressed();
  return out;
}

struct SpaceTimePrecision {
  int n_vertices = 0;
  int time_slices = 1;
  SparseMatrix q;

  /// Joint index of vertex `v` in slice `t`.
  int index(int v, int t) const { return t * n_vertices + v; }
};

inline SpaceTimePrecision kron_precision(const Ar1Precision& qt,
                                         const SpatialPrecision& qs) {
  return {static_cast<int>(qs.q.rows()), qt.time_slices, kron(qt.q, qs.q)};
}

/// Shifts each spatial row into the column block of its time slice.
inline Projector spacetime_projector(const Projector& spatial,
                                     const std::vector<int>& time_index,
                                     int time_slices) {
  if (time_index.size() != spatial.rows.size()) {
    throw DomainError("one time index per projector row is required");
  }
  Projector out;
  out.n_columns = spatial.n_columns * time_slices;
  out.rows.reserve(spatial.rows.size());
  for (std::size_t r = 0; r < spatial.rows.size(); ++r) {
    const int t = time_index[r];
    if (t < 0 || t >= time_slices) {
      throw DomainError("time index " + std::to_string(t) + " outside [0, " +
                        std::to_string(time_slices) + ")");
    }
    auto row = spatial.rows[r];
    for (auto& e : row) e.column += t * spatial.n_columns;
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace geolgm
