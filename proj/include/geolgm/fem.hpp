#pragma once

#include <Eigen/Sparse>
#include <string>
#include <vector>

#include "geolgm/errors.hpp"
#include "geolgm/mesh.hpp"

namespace geolgm {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Piecewise-linear finite element matrices on a sphere mesh.
struct FemMatrices {
  /// Lumped mass: one third of the spherical area of each incident triangle.
  Eigen::VectorXd c_lumped;
  /// Stiffness matrix of the hat basis on the flat embedded triangles.
  SparseMatrix g;
  /// G * C^{-1} * G, cached because it does not depend on kappa or tau.
  SparseMatrix g_cinv_g;

  int size() const { return static_cast<int>(c_lumped.size()); }
};

inline constexpr double kDegenerateTriangleArea = 1e-14;

inline FemMatrices assemble_fem(const TriMesh& mesh) {
  const int n = mesh.n_vertices();
  FemMatrices fem;
  fem.c_lumped = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(mesh.n_triangles()) * 9);
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
    const std::array<Eigen::Vector3d, 3> p = {mesh.vertex(tri[0]), mesh.vertex(tri[1]),
                                              mesh.vertex(tri[2])};
    const double flat_area = 0.5 * (p[1] - p[0]).cross(p[2] - p[0]).norm();
    if (!(flat_area >= kDegenerateTriangleArea)) {
      throw AssemblyError("degenerate triangle " + std::to_string(t) + " (area " +
                          std::to_string(flat_area) + ")");
    }
    const double sphere_area = spherical_triangle_area(p[0], p[1], p[2]);
    // Edge opposite vertex i.
    const std::array<Eigen::Vector3d, 3> e = {p[2] - p[1], p[0] - p[2], p[1] - p[0]};
    for (int i = 0; i < 3; ++i) {
      fem.c_lumped[tri[static_cast<std::size_t>(i)]] += sphere_area / 3.0;
      for (int j = 0; j < 3; ++j) {
        triplets.emplace_back(tri[static_cast<std::size_t>(i)], tri[static_cast<std::size_t>(j)],
                              e[static_cast<std::size_t>(i)].dot(e[static_cast<std::size_t>(j)]) /
                                  (4.0 * flat_area));
      }
    }
  }
  fem.g.resize(n, n);
  fem.g.setFromTriplets(triplets.begin(), triplets.end());
  fem.g.makeCompressed();
  const Eigen::VectorXd cinv = fem.c_lumped.cwiseInverse();
  const SparseMatrix gcg = fem.g * cinv.asDiagonal() * fem.g;
  // The product is symmetric only up to rounding; average so Q is exactly so.
  fem.g_cinv_g = 0.5 * (gcg + SparseMatrix(gcg.transpose()));
  fem.g_cinv_g.makeCompressed();
  return fem;
}

}  // namespace geolgm
