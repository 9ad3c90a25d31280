#pragma once

#include <Eigen/Sparse>
#include <vector>

#include "geolgm/errors.hpp"
#include "geolgm/mesh.hpp"

namespace geolgm {

struct ProjectorEntry {
  int column = 0;
  double weight = 0.0;
};

/// Sparse row-per-location interpolation operator. Every row is a convex
/// combination of at most three columns.
struct Projector {
  int n_columns = 0;
  std::vector<std::vector<ProjectorEntry>> rows;

  int n_rows() const { return static_cast<int>(rows.size()); }

  Eigen::SparseMatrix<double, Eigen::RowMajor> to_sparse() const {
    std::vector<Eigen::Triplet<double>> triplets;
    for (int r = 0; r < n_rows(); ++r) {
      for (const auto& e : rows[static_cast<std::size_t>(r)]) triplets.emplace_back(r, e.column, e.weight);
    }
    Eigen::SparseMatrix<double, Eigen::RowMajor> a(n_rows(), n_columns);
    a.setFromTriplets(triplets.begin(), triplets.end());
    return a;
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& field) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n_rows());
    for (int r = 0; r < n_rows(); ++r) {
      for (const auto& e : rows[static_cast<std::size_t>(r)]) out[r] += e.weight * field[e.column];
    }
    return out;
  }
};

/// Barycentric interpolation from mesh vertices to `sites`.
inline Projector barycentric_projector(const TriMesh& mesh,
                                       const std::vector<GeoPoint>& sites) {
  const TriangleLocator locator(mesh);
  Projector proj;
  proj.n_columns = mesh.n_vertices();
  proj.rows.reserve(sites.size());
  for (const auto& site : sites) {
    const auto hit = locator.locate(to_unit_vector(site).vec());
    const auto& tri = mesh.triangles[static_cast<std::size_t>(hit.triangle)];
    std::array<double, 3> w = hit.weights;
    double sum = 0.0;
    for (double& x : w) {
      x = std::max(x, 0.0);
      sum += x;
    }
    std::vector<ProjectorEntry> row;
    for (int k = 0; k < 3; ++k) {
      const double weight = w[static_cast<std::size_t>(k)] / sum;
      if (weight >= 1.0 - 1e-12) {
        row.assign(1, {tri[static_cast<std::size_t>(k)], 1.0});
        break;
      }
      if (weight > 0.0) row.push_back({tri[static_cast<std::size_t>(k)], weight});
    }
    proj.rows.push_back(std::move(row));
  }
  return proj;
}

}  // namespace geolgm
