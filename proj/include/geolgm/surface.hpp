#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include "json.hpp"

#include "geolgm/data.hpp"
#include "geolgm/errors.hpp"
#include "geolgm/fit.hpp"
#include "geolgm/likelihood.hpp"
#include "geolgm/mesh.hpp"
#include "geolgm/projector.hpp"

namespace geolgm {

/// Normal quantile used for the 95% surface and hot-spot bounds.
inline constexpr double kSurfaceZ = 1.96;

struct GridCell {
  int row = 0;  // 0 is the southernmost band
  int col = 0;  // 0 starts at -180
  GeoPoint centre;
  double eta_mean = 0.0;
  double eta_sd = 0.0;
  double resp_mean = 0.0;
  double resp_lo = 0.0;
  double resp_hi = 0.0;
};

struct GridSurface {
  double resolution = 1.0;
  int year = 0;
  Family family = Family::kBernoulli;
  int n_rows = 0;
  int n_cols = 0;
  /// Kept cells in row-major order; masked cells are absent.
  std::vector<GridCell> cells;
};

struct GridShape {
  int n_rows = 0;
  int n_cols = 0;
};

inline GridShape grid_shape(double resolution) {
  if (!(resolution > 0.0) || !std::isfinite(resolution)) {
    throw DomainError("grid resolution must be positive");
  }
  const double rows = 180.0 / resolution;
  const double rounded = std::round(rows);
  if (rounded < 1.0 || std::abs(rows - rounded) > 1e-9 * std::max(1.0, rows)) {
    throw DomainError("grid resolution must divide 180 degrees");
  }
  return {static_cast<int>(rounded), 2 * static_cast<int>(rounded)};
}

/// Fills one cell from the linear-predictor summary.
inline GridCell make_cell(Family family, int row, int col, const GeoPoint& centre,
                          double eta_mean, double eta_sd) {
  GridCell c;
  c.row = row;
  c.col = col;
  c.centre = centre;
  c.eta_mean = eta_mean;
  c.eta_sd = eta_sd;
  c.resp_mean = inverse_link(family, eta_mean);
  c.resp_lo = inverse_link(family, eta_mean - kSurfaceZ * eta_sd);
  c.resp_hi = inverse_link(family, eta_mean + kSurfaceZ * eta_sd);
  return c;
}

/// Posterior surface for one year at cell centres of a regular lat-lon grid,
/// with covariates held at their standardized means. A mask raster keeps
/// only cells whose centre samples to a nonzero value.
inline GridSurface predict_surface(const FitResult& fit, const TriMesh& mesh, double resolution,
                                   int year, const CovariateRaster* mask = nullptr) {
  const GridShape shape = grid_shape(resolution);
  const int slice = year - fit.first_year;
  if (slice < 0 || slice >= fit.time_slices) {
    throw DomainError("year " + std::to_string(year) + " is outside the fitted window");
  }
  if (mesh.n_vertices() != fit.n_vertices) {
    throw DomainError("mesh does not match the fitted field");
  }
  GridSurface s;
  s.resolution = resolution;
  s.year = year;
  s.family = fit.family;
  s.n_rows = shape.n_rows;
  s.n_cols = shape.n_cols;

  std::vector<std::pair<int, int>> index;
  std::vector<GeoPoint> centres;
  for (int r = 0; r < shape.n_rows; ++r) {
    for (int c = 0; c < shape.n_cols; ++c) {
      const GeoPoint p{-90.0 + (r + 0.5) * resolution, -180.0 + (c + 0.5) * resolution};
      if (mask) {
        const auto v = sample_raster(*mask, p);
        if (!v || *v == 0.0) continue;
      }
      index.emplace_back(r, c);
      centres.push_back(p);
    }
  }
  const Projector proj = barycentric_projector(mesh, centres);
  const auto n = static_cast<Eigen::Index>(fit.n_vertices);
  const Eigen::VectorXd mean = fit.field_mean.segment(slice * n, n);
  const Eigen::VectorXd sd = fit.field_sd.segment(slice * n, n);
  const Eigen::VectorXd eta_mean = proj.apply(mean).array() + fit.fixed(kInterceptName).mean;
  const Eigen::VectorXd eta_sd = proj.apply(sd);
  s.cells.reserve(centres.size());
  for (std::size_t i = 0; i < centres.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    s.cells.push_back(make_cell(fit.family, index[i].first, index[i].second, centres[i],
                                eta_mean[k], eta_sd[k]));
  }
  return s;
}

/// Lower 95% bound on the response scale.
inline double lower_bound(Family family, double eta_mean, double eta_sd) {
  return inverse_link(family, eta_mean - kSurfaceZ * eta_sd);
}

inline void check_epsilon(Family family, double epsilon) {
  if (family == Family::kBernoulli && !(epsilon > 0.0 && epsilon < 1.0)) {
    throw DomainError("Bernoulli hot-spot threshold must lie in (0, 1)");
  }
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw DomainError("hot-spot threshold must be positive");
  }
}

inline bool is_hotspot(Family family, double eta_mean, double eta_sd, double epsilon) {
  return lower_bound(family, eta_mean, eta_sd) > epsilon;
}

inline double default_epsilon(Family family) { return family == Family::kPoisson ? 5.0 : 0.5; }

struct Component {
  int id = 0;
  int cell_count = 0;
  int min_row = 0;
  int min_col = 0;
};

struct Labeling {
  /// Component id per input cell.
  std::vector<int> ids;
  std::vector<Component> components;
};

/// Edge-connected components of `cells` (row, col) on an n_rows x n_cols
/// grid. With `wrap` the first and last columns are adjacent. Ids follow
/// (min row, min col) of each component.
inline Labeling label_components(const std::vector<std::pair<int, int>>& cells, int n_rows,
                                 int n_cols, bool wrap = true) {
  Labeling out;
  out.ids.assign(cells.size(), -1);
  if (cells.empty()) return out;
  std::vector<int> at(static_cast<std::size_t>(n_rows) * static_cast<std::size_t>(n_cols), -1);
  auto slot = [&](int r, int c) {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(n_cols) + static_cast<std::size_t>(c);
  };
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto [r, c] = cells[i];
    if (r < 0 || r >= n_rows || c < 0 || c >= n_cols) throw DomainError("cell outside the grid");
    at[slot(r, c)] = static_cast<int>(i);
  }

  std::vector<int> raw(cells.size(), -1);
  std::vector<Component> found;
  std::vector<int> stack;
  for (std::size_t seed = 0; seed < cells.size(); ++seed) {
    if (raw[seed] >= 0) continue;
    const int label = static_cast<int>(found.size());
    Component comp{label, 0, cells[seed].first, cells[seed].second};
    raw[seed] = label;
    stack.push_back(static_cast<int>(seed));
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      const auto [r, c] = cells[static_cast<std::size_t>(i)];
      ++comp.cell_count;
      comp.min_row = std::min(comp.min_row, r);
      comp.min_col = std::min(comp.min_col, c);
      const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& nb : nbr) {
        int rr = nb[0];
        int cc = nb[1];
        if (rr < 0 || rr >= n_rows) continue;
        if (cc < 0 || cc >= n_cols) {
          if (!wrap) continue;
          cc = (cc + n_cols) % n_cols;
        }
        const int j = at[slot(rr, cc)];
        if (j >= 0 && raw[static_cast<std::size_t>(j)] < 0) {
          raw[static_cast<std::size_t>(j)] = label;
          stack.push_back(j);
        }
      }
    }
    found.push_back(comp);
  }
  std::vector<int> order(found.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& x = found[static_cast<std::size_t>(a)];
    const auto& y = found[static_cast<std::size_t>(b)];
    return std::pair(x.min_row, x.min_col) < std::pair(y.min_row, y.min_col);
  });
  std::vector<int> rename(found.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    rename[static_cast<std::size_t>(order[k])] = static_cast<int>(k);
    Component c = found[static_cast<std::size_t>(order[k])];
    c.id = static_cast<int>(k);
    out.components.push_back(c);
  }
  for (std::size_t i = 0; i < cells.size(); ++i) out.ids[i] = rename[static_cast<std::size_t>(raw[i])];
  return out;
}

struct HotspotSet {
  int year = 0;
  double epsilon = 0.0;
  /// Indices into the surface's cells, row-major.
  std::vector<int> members;
  std::vector<double> lower_bounds;
  /// Component id per member; filled by `label_hotspots`.
  std::vector<int> component_ids;
  std::vector<Component> components;
};

/// Cells whose lower 95% response bound exceeds `epsilon` (unlabeled).
inline HotspotSet hotspot_cells(const GridSurface& surface, double epsilon) {
  check_epsilon(surface.family, epsilon);
  HotspotSet h;
  h.year = surface.year;
  h.epsilon = epsilon;
  for (std::size_t i = 0; i < surface.cells.size(); ++i) {
    const auto& c = surface.cells[i];
    if (c.resp_lo > epsilon) {
      h.members.push_back(static_cast<int>(i));
      h.lower_bounds.push_back(c.resp_lo);
    }
  }
  return h;
}

inline void label_hotspots(const GridSurface& surface, HotspotSet& h) {
  std::vector<std::pair<int, int>> cells;
  cells.reserve(h.members.size());
  for (int i : h.members) {
    const auto& c = surface.cells[static_cast<std::size_t>(i)];
    cells.emplace_back(c.row, c.col);
  }
  auto lab = label_components(cells, surface.n_rows, surface.n_cols, true);
  h.component_ids = std::move(lab.ids);
  h.components = std::move(lab.components);
}

inline HotspotSet find_hotspots(const GridSurface& surface, double epsilon) {
  auto h = hotspot_cells(surface, epsilon);
  label_hotspots(surface, h);
  return h;
}

inline void write_surface_csv(std::ostream& os, const GridSurface& s) {
  os << "year,lat,lon,eta_mean,eta_sd,resp_mean,resp_lo,resp_hi\n" << std::setprecision(10);
  for (const auto& c : s.cells) {
    os << s.year << ',' << c.centre.lat << ',' << c.centre.lon << ',' << c.eta_mean << ','
       << c.eta_sd << ',' << c.resp_mean << ',' << c.resp_lo << ',' << c.resp_hi << '\n';
  }
}

/// GeoJSON FeatureCollection with one square Polygon per member cell,
/// ordered by component id and then row-major position.
inline nlohmann::ordered_json hotspot_geojson(const GridSurface& s, const HotspotSet& h) {
  std::vector<std::size_t> order(h.members.size());
  std::iota(order.begin(), order.end(), 0);
  if (h.component_ids.size() == h.members.size()) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return h.component_ids[a] < h.component_ids[b];
    });
  }
  nlohmann::ordered_json features = nlohmann::ordered_json::array();
  const double half = 0.5 * s.resolution;
  for (std::size_t k : order) {
    const auto& c = s.cells[static_cast<std::size_t>(h.members[k])];
    const double w = c.centre.lon - half;
    const double e = c.centre.lon + half;
    const double so = c.centre.lat - half;
    const double n = c.centre.lat + half;
    nlohmann::ordered_json f;
    f["type"] = "Feature";
    f["geometry"] = {{"type", "Polygon"},
                     {"coordinates", {{{w, so}, {e, so}, {e, n}, {w, n}, {w, so}}}}};
    f["properties"] = {{"year", h.year},
                       {"component_id", h.component_ids.empty() ? -1 : h.component_ids[k]},
                       {"lower_bound", h.lower_bounds[k]}};
    features.push_back(std::move(f));
  }
  nlohmann::ordered_json fc;
  fc["type"] = "FeatureCollection";
  fc["features"] = std::move(features);
  return fc;
}

}  // namespace geolgm
