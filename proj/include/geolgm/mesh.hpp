#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "geolgm/errors.hpp"
#include "geolgm/geodesy.hpp"

namespace geolgm {

using Triangle = std::array<int, 3>;

/// Closed, outward-oriented triangulation of the unit sphere.
struct TriMesh {
  std::vector<UnitVec3> vertices;
  std::vector<Triangle> triangles;

  int n_vertices() const { return static_cast<int>(vertices.size()); }
  int n_triangles() const { return static_cast<int>(triangles.size()); }

  Eigen::Vector3d vertex(int i) const { return vertices[static_cast<std::size_t>(i)].vec(); }
};

namespace detail {

inline std::pair<int, int> edge_key(int a, int b) {
  return a < b ? std::pair{a, b} : std::pair{b, a};
}

inline double triple(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                     const Eigen::Vector3d& c) {
  return a.dot(b.cross(c));
}

}  // namespace detail

/// Area of the spherical triangle spanned by three unit vectors
/// (Van Oosterom-Strackee formula).
inline double spherical_triangle_area(const Eigen::Vector3d& a,
                                      const Eigen::Vector3d& b,
                                      const Eigen::Vector3d& c) {
  const double det = std::abs(detail::triple(a, b, c));
  const double denom = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
  return 2.0 * std::atan2(det, denom);
}

inline double spherical_area(const TriMesh& mesh, int t) {
  const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
  return spherical_triangle_area(mesh.vertex(tri[0]), mesh.vertex(tri[1]),
                                 mesh.vertex(tri[2]));
}

inline double total_spherical_area(const TriMesh& mesh) {
  double total = 0.0;
  for (int t = 0; t < mesh.n_triangles(); ++t) total += spherical_area(mesh, t);
  return total;
}

/// Checks index validity, edge-manifoldness and outward orientation.
inline void validate(const TriMesh& mesh) {
  const int n = mesh.n_vertices();
  std::map<std::pair<int, int>, int> edge_use;
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
    for (int v : tri) {
      if (v < 0 || v >= n) {
        throw GeometryError("triangle " + std::to_string(t) +
                            " references invalid vertex " + std::to_string(v));
      }
    }
    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) {
      throw GeometryError("triangle " + std::to_string(t) +
                          " has repeated vertices");
    }
    if (detail::triple(mesh.vertex(tri[0]), mesh.vertex(tri[1]),
                       mesh.vertex(tri[2])) <= 0.0) {
      throw GeometryError("triangle " + std::to_string(t) +
                          " is not outward oriented");
    }
    for (int k = 0; k < 3; ++k) {
      ++edge_use[detail::edge_key(tri[k], tri[(k + 1) % 3])];
    }
  }
  for (const auto& [edge, count] : edge_use) {
    if (count != 2) {
      throw GeometryError("edge (" + std::to_string(edge.first) + "," +
                          std::to_string(edge.second) + ") is used by " +
                          std::to_string(count) + " triangles");
    }
  }
}

inline TriMesh icosahedron() {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  const std::array<Eigen::Vector3d, 12> raw = {{
      {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
      {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
      {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1},
  }};
  TriMesh mesh;
  for (const auto& v : raw) mesh.vertices.push_back(UnitVec3::from(v));
  mesh.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                    {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                    {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                    {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (auto& tri : mesh.triangles) {
    if (detail::triple(mesh.vertex(tri[0]), mesh.vertex(tri[1]),
                       mesh.vertex(tri[2])) < 0.0) {
      std::swap(tri[1], tri[2]);
    }
  }
  return mesh;
}

namespace detail {

/// Shared-midpoint bookkeeping for subdivision passes.
class MidpointCache {
 public:
  explicit MidpointCache(TriMesh& mesh) : mesh_(mesh) {}

  int operator()(int a, int b) {
    const auto key = edge_key(a, b);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const int id = mesh_.n_vertices();
    mesh_.vertices.push_back(UnitVec3::from(mesh_.vertex(a) + mesh_.vertex(b)));
    cache_.emplace(key, id);
    return id;
  }

 private:
  TriMesh& mesh_;
  std::map<std::pair<int, int>, int> cache_;
};

inline void split_red(const Triangle& t, MidpointCache& mid,
                      std::vector<Triangle>& out) {
  const int ab = mid(t[0], t[1]);
  const int bc = mid(t[1], t[2]);
  const int ca = mid(t[2], t[0]);
  out.push_back({t[0], ab, ca});
  out.push_back({ab, t[1], bc});
  out.push_back({ca, bc, t[2]});
  out.push_back({ab, bc, ca});
}

}  // namespace detail

inline constexpr int kMaxSubdivisions = 7;

/// Recursive 4-way subdivision of the icosahedron, midpoints pushed to the
/// sphere. Produces 10*4^k + 2 vertices and 20*4^k triangles.
inline TriMesh build_icosphere(int subdivisions) {
  if (subdivisions < 0) {
    throw DomainError("icosphere subdivisions must be nonnegative");
  }
  if (subdivisions > kMaxSubdivisions) {
    throw ResourceError("icosphere subdivision depth " +
                        std::to_string(subdivisions) + " exceeds the limit of " +
                        std::to_string(kMaxSubdivisions));
  }
  TriMesh mesh = icosahedron();
  for (int level = 0; level < subdivisions; ++level) {
    detail::MidpointCache mid(mesh);
    std::vector<Triangle> next;
    next.reserve(mesh.triangles.size() * 4);
    for (const auto& t : mesh.triangles) detail::split_red(t, mid, next);
    mesh.triangles = std::move(next);
  }
  return mesh;
}

/// Point location on the sphere. Triangles are bucketed on a lat-lon grid by
/// their bounding caps; candidates are tested by the signs of the three
/// oriented volumes with the query point, which is the containment test of
/// the gnomonic projection onto each triangle's plane.
class TriangleLocator {
 public:
  struct Hit {
    int triangle = -1;
    std::array<double, 3> weights{};
  };

  explicit TriangleLocator(const TriMesh& mesh) : mesh_(mesh) {
    const int ntri = mesh.n_triangles();
    nlat_ = std::clamp(static_cast<int>(std::sqrt(ntri / 2.0)), 4, 360);
    nlon_ = 2 * nlat_;
    buckets_.assign(static_cast<std::size_t>(nlat_ * nlon_), {});
    for (int t = 0; t < ntri; ++t) insert(t);
  }

  /// Barycentric weights of `p` in triangle `t`; negative entries mean the
  /// point lies outside the corresponding edge.
  std::array<double, 3> weights_in(int t, const Eigen::Vector3d& p) const {
    const auto& tri = mesh_.triangles[static_cast<std::size_t>(t)];
    const Eigen::Vector3d a = mesh_.vertex(tri[0]);
    const Eigen::Vector3d b = mesh_.vertex(tri[1]);
    const Eigen::Vector3d c = mesh_.vertex(tri[2]);
    std::array<double, 3> w{detail::triple(p, b, c), detail::triple(a, p, c),
                            detail::triple(a, b, p)};
    const double sum = w[0] + w[1] + w[2];
    if (sum <= 0.0) return {-1.0, -1.0, -1.0};
    for (double& x : w) x /= sum;
    return w;
  }

  Hit locate(const Eigen::Vector3d& p) const {
    const GeoPoint g = to_geopoint(UnitVec3::from(p));
    Hit best;
    double best_min = -std::numeric_limits<double>::infinity();
    auto consider = [&](int t) {
      const auto w = weights_in(t, p);
      const double m = std::min({w[0], w[1], w[2]});
      if (m > best_min) {
        best_min = m;
        best = {t, w};
      }
    };
    for (int t : buckets_[static_cast<std::size_t>(bucket_of(g.lat, g.lon))]) consider(t);
    if (best_min < -kTolerance) {
      for (int t = 0; t < mesh_.n_triangles(); ++t) consider(t);
    }
    if (best_min < -kTolerance) {
      throw GeometryError("no containing triangle found for point (" +
                          std::to_string(g.lat) + ", " + std::to_string(g.lon) + ")");
    }
    return best;
  }

 private:
  static constexpr double kTolerance = 1e-10;

  int lat_bin(double lat) const {
    return std::clamp(static_cast<int>((lat + 90.0) / 180.0 * nlat_), 0, nlat_ - 1);
  }
  int lon_bin(double lon) const {
    return std::clamp(static_cast<int>((lon + 180.0) / 360.0 * nlon_), 0, nlon_ - 1);
  }
  int bucket_of(double lat, double lon) const {
    return lat_bin(lat) * nlon_ + lon_bin(lon);
  }

  void insert(int t) {
    const auto& tri = mesh_.triangles[static_cast<std::size_t>(t)];
    const Eigen::Vector3d centre =
        (mesh_.vertex(tri[0]) + mesh_.vertex(tri[1]) + mesh_.vertex(tri[2])).normalized();
    double radius = 0.0;
    for (int v : tri) radius = std::max(radius, central_angle(centre, mesh_.vertex(v)));
    radius = radius * 1.01 + 1e-9;
    const GeoPoint c = to_geopoint(UnitVec3::from(centre));
    const double rdeg = radius * kRadToDeg;
    const double lat_lo = c.lat - rdeg;
    const double lat_hi = c.lat + rdeg;
    bool all_lon = lat_lo <= -90.0 || lat_hi >= 90.0;
    double dlon = 180.0;
    if (!all_lon) {
      const double s = std::sin(radius) / std::cos(c.lat * kDegToRad);
      if (s >= 1.0) {
        all_lon = true;
      } else {
        dlon = std::asin(s) * kRadToDeg;
      }
    }
    const int r0 = lat_bin(std::max(lat_lo, -90.0));
    const int r1 = lat_bin(std::min(lat_hi, 90.0));
    for (int r = r0; r <= r1; ++r) {
      if (all_lon) {
        for (int q = 0; q < nlon_; ++q) buckets_[static_cast<std::size_t>(r * nlon_ + q)].push_back(t);
        continue;
      }
      const int span = static_cast<int>(std::ceil(dlon / 360.0 * nlon_)) + 1;
      const int q0 = lon_bin(c.lon);
      std::set<int> cols;
      for (int d = -span; d <= span; ++d) cols.insert(((q0 + d) % nlon_ + nlon_) % nlon_);
      for (int q : cols) buckets_[static_cast<std::size_t>(r * nlon_ + q)].push_back(t);
    }
  }

  const TriMesh& mesh_;
  int nlat_ = 0;
  int nlon_ = 0;
  std::vector<std::vector<int>> buckets_;
};

/// Locally refines the mesh around `sites`. At each level the triangles that
/// contain a site, or share a vertex with one that does, are split 4-way;
/// the red closure is propagated until every other triangle has at most one
/// split edge, and those are bisected so no hanging nodes remain.
inline TriMesh refine_near(const TriMesh& input, const std::vector<GeoPoint>& sites,
                           int levels) {
  TriMesh mesh = input;
  if (levels <= 0 || sites.empty()) return mesh;
  for (int level = 0; level < levels; ++level) {
    const int ntri = mesh.n_triangles();
    std::vector<char> red(static_cast<std::size_t>(ntri), 0);
    {
      const TriangleLocator locator(mesh);
      std::set<int> hot_vertices;
      for (const auto& s : sites) {
        const auto hit = locator.locate(to_unit_vector(s).vec());
        for (int v : mesh.triangles[static_cast<std::size_t>(hit.triangle)]) hot_vertices.insert(v);
      }
      for (int t = 0; t < ntri; ++t) {
        for (int v : mesh.triangles[static_cast<std::size_t>(t)]) {
          if (hot_vertices.count(v)) red[static_cast<std::size_t>(t)] = 1;
        }
      }
    }
    std::set<std::pair<int, int>> split;
    bool changed = true;
    while (changed) {
      changed = false;
      split.clear();
      for (int t = 0; t < ntri; ++t) {
        if (!red[static_cast<std::size_t>(t)]) continue;
        const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
        for (int k = 0; k < 3; ++k) split.insert(detail::edge_key(tri[k], tri[(k + 1) % 3]));
      }
      for (int t = 0; t < ntri; ++t) {
        if (red[static_cast<std::size_t>(t)]) continue;
        const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
        int count = 0;
        for (int k = 0; k < 3; ++k) count += static_cast<int>(split.count(detail::edge_key(tri[k], tri[(k + 1) % 3])));
        if (count >= 2) {
          red[static_cast<std::size_t>(t)] = 1;
          changed = true;
        }
      }
    }
    detail::MidpointCache mid(mesh);
    std::vector<Triangle> next;
    next.reserve(static_cast<std::size_t>(ntri) * 2);
    const std::vector<Triangle> old = mesh.triangles;
    for (int t = 0; t < ntri; ++t) {
      const Triangle& tri = old[static_cast<std::size_t>(t)];
      if (red[static_cast<std::size_t>(t)]) {
        detail::split_red(tri, mid, next);
        continue;
      }
      int split_edge = -1;
      for (int k = 0; k < 3; ++k) {
        if (split.count(detail::edge_key(tri[k], tri[(k + 1) % 3]))) split_edge = k;
      }
      if (split_edge < 0) {
        next.push_back(tri);
        continue;
      }
      const int a = tri[static_cast<std::size_t>(split_edge)];
      const int b = tri[static_cast<std::size_t>((split_edge + 1) % 3)];
      const int c = tri[static_cast<std::size_t>((split_edge + 2) % 3)];
      const int m = mid(a, b);
      next.push_back({a, m, c});
      next.push_back({m, b, c});
    }
    mesh.triangles = std::move(next);
  }
  return mesh;
}

/// Length of the longest edge (radians) among triangles with a vertex within
/// `angle` radians of `centre`.
inline double max_edge_near(const TriMesh& mesh, const Eigen::Vector3d& centre,
                            double angle) {
  double longest = 0.0;
  for (const auto& tri : mesh.triangles) {
    bool near = false;
    for (int v : tri) near = near || central_angle(centre, mesh.vertex(v)) <= angle;
    if (!near) continue;
    for (int k = 0; k < 3; ++k) {
      longest = std::max(longest, central_angle(mesh.vertex(tri[k]),
                                                mesh.vertex(tri[(k + 1) % 3])));
    }
  }
  return longest;
}

// Text format: "vertices N triangles M", N lines "x y z", M lines "i j k".

inline void write_mesh(std::ostream& os, const TriMesh& mesh) {
  os << "vertices " << mesh.n_vertices() << " triangles " << mesh.n_triangles() << '\n';
  os << std::setprecision(17);
  for (const auto& v : mesh.vertices) os << v.x << ' ' << v.y << ' ' << v.z << '\n';
  for (const auto& t : mesh.triangles) os << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

inline TriMesh read_mesh(std::istream& is) {
  std::string vword, tword;
  long long nv = -1, nt = -1;
  if (!(is >> vword >> nv >> tword >> nt) || vword != "vertices" ||
      tword != "triangles" || nv < 0 || nt < 0) {
    throw FormatError("mesh header must read 'vertices N triangles M'");
  }
  TriMesh mesh;
  mesh.vertices.resize(static_cast<std::size_t>(nv));
  for (auto& v : mesh.vertices) {
    if (!(is >> v.x >> v.y >> v.z)) throw FormatError("truncated mesh vertex list");
  }
  mesh.triangles.resize(static_cast<std::size_t>(nt));
  for (auto& t : mesh.triangles) {
    if (!(is >> t[0] >> t[1] >> t[2])) throw FormatError("truncated mesh triangle list");
  }
  validate(mesh);
  return mesh;
}

inline void save_mesh(const std::string& path, const TriMesh& mesh) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write mesh file " + path);
  write_mesh(os, mesh);
}

inline TriMesh load_mesh(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read mesh file " + path);
  return read_mesh(is);
}

}  // namespace geolgm
