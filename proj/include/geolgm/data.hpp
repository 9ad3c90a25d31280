#pragma once

#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "geolgm/errors.hpp"
#include "geolgm/fem.hpp"
#include "geolgm/geodesy.hpp"
#include "geolgm/likelihood.hpp"
#include "geolgm/mesh.hpp"
#include "geolgm/model.hpp"
#include "geolgm/projector.hpp"
#include "geolgm/spacetime.hpp"

namespace geolgm {

struct YearWindow {
  int first_year = 2002;
  int last_year = 2013;

  bool contains(int year) const { return year >= first_year && year <= last_year; }
  int slices() const { return last_year - first_year + 1; }
};

struct EventRecord {
  std::string id;
  GeoPoint location;
  int year = 0;
  std::optional<int> nkill;
  int specificity = 1;

  bool lethal() const { return nkill.has_value() && *nkill >= 1; }
};

struct LoadReport {
  int rows = 0;
  int invalid_coordinates = 0;
  int outside_window = 0;
  int filtered_specificity = 0;
};

namespace detail {

/// Splits one CSV line; double quotes group fields and "" escapes a quote.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(std::move(field));
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::map<std::string, std::size_t> header_index(const std::string& line,
                                                       const std::vector<std::string>& required,
                                                       const std::string& what) {
  std::map<std::string, std::size_t> index;
  auto cols = split_csv_line(line);
  if (!cols.empty() && cols[0].rfind("\xEF\xBB\xBF", 0) == 0) cols[0] = cols[0].substr(3);
  for (std::size_t i = 0; i < cols.size(); ++i) index[trim(cols[i])] = i;
  for (const auto& name : required) {
    if (!index.count(name)) {
      throw FormatError(what + " header is missing column '" + name + "'");
    }
  }
  return index;
}

inline std::optional<double> parse_double(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size()) return std::nullopt;
    return v;
  } catch (...) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Reads the event CSV (`id,latitude,longitude,year,nkill,specificity`).
/// Keeps rows inside `window` whose specificity is at most `min_specificity`
/// (so the default keeps only the most precise geocodes). Rows with invalid
/// coordinates are dropped and counted in `report`.
inline std::vector<EventRecord> load_events(std::istream& is, const YearWindow& window,
                                            int min_specificity = 1,
                                            LoadReport* report = nullptr) {
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  std::string line;
  if (!std::getline(is, line)) throw FormatError("event file is empty (no header)");
  const auto idx = detail::header_index(
      line, {"id", "latitude", "longitude", "year", "nkill", "specificity"}, "event");
  std::vector<EventRecord> out;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    ++rep.rows;
    const auto f = detail::split_csv_line(line);
    auto get = [&](const char* name) -> std::string {
      const auto i = idx.at(name);
      return i < f.size() ? f[i] : std::string();
    };
    const auto lat = detail::parse_double(get("latitude"));
    const auto lon = detail::parse_double(get("longitude"));
    const auto year = detail::parse_double(get("year"));
    const auto spec = detail::parse_double(get("specificity"));
    if (!year || !spec) {
      throw FormatError("event line " + std::to_string(line_no) +
                        " has a malformed year or specificity");
    }
    if (!lat || !lon || *lat < -90.0 || *lat > 90.0 || *lon < -180.0 || *lon > 180.0) {
      ++rep.invalid_coordinates;
      continue;
    }
    EventRecord e;
    e.id = detail::trim(get("id"));
    e.location = normalize({*lat, *lon});
    e.year = static_cast<int>(*year);
    e.specificity = static_cast<int>(*spec);
    if (const auto nk = detail::parse_double(get("nkill")); nk && *nk >= 0.0) {
      e.nkill = static_cast<int>(*nk);
    }
    if (!window.contains(e.year)) {
      ++rep.outside_window;
      continue;
    }
    if (e.specificity > min_specificity) {
      ++rep.filtered_specificity;
      continue;
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<EventRecord> load_events(const std::string& path, const YearWindow& window,
                                            int min_specificity = 1,
                                            LoadReport* report = nullptr) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read event file " + path);
  return load_events(is, window, min_specificity, report);
}

struct Site {
  std::string name;
  GeoPoint location;
};

inline std::vector<Site> load_sites(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("site file is empty (no header)");
  const auto idx = detail::header_index(line, {"name", "latitude", "longitude"}, "site");
  std::vector<Site> out;
  while (std::getline(is, line)) {
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv_line(line);
    auto get = [&](const char* name) {
      const auto i = idx.at(name);
      return i < f.size() ? f[i] : std::string();
    };
    const auto lat = detail::parse_double(get("latitude"));
    const auto lon = detail::parse_double(get("longitude"));
    if (!lat || !lon) throw FormatError("site '" + get("name") + "' has malformed coordinates");
    out.push_back({detail::trim(get("name")), normalize({*lat, *lon})});
  }
  return out;
}

inline std::vector<Site> load_sites(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read site file " + path);
  return load_sites(is);
}

/// Text grid raster: six "key value" header lines (ncols, nrows, xllcorner,
/// yllcorner, cellsize, nodata_value) then row-major values, north row first.
struct CovariateRaster {
  std::string name;
  int ncols = 0;
  int nrows = 0;
  double xllcorner = 0.0;
  double yllcorner = 0.0;
  double cellsize = 1.0;
  double nodata = -9999.0;
  std::vector<double> values;

  double at(int row, int col) const {
    return values[static_cast<std::size_t>(row) * static_cast<std::size_t>(ncols) +
                  static_cast<std::size_t>(col)];
  }

  /// Centre of the cell at (row, col); row 0 is the northernmost row.
  GeoPoint cell_centre(int row, int col) const {
    return {yllcorner + (nrows - row - 0.5) * cellsize, xllcorner + (col + 0.5) * cellsize};
  }
};

inline CovariateRaster read_raster(std::istream& is, const std::string& name) {
  CovariateRaster r;
  r.name = name;
  std::map<std::string, double> header;
  for (int i = 0; i < 6; ++i) {
    std::string key;
    double value = 0.0;
    if (!(is >> key >> value)) throw FormatError("raster '" + name + "' has a truncated header");
    for (auto& ch : key) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    header[key] = value;
  }
  for (const char* key : {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"}) {
    if (!header.count(key)) {
      throw FormatError("raster '" + name + "' header is missing '" + key + "'");
    }
  }
  r.ncols = static_cast<int>(header["ncols"]);
  r.nrows = static_cast<int>(header["nrows"]);
  r.xllcorner = header["xllcorner"];
  r.yllcorner = header["yllcorner"];
  r.cellsize = header["cellsize"];
  r.nodata = header["nodata_value"];
  if (r.ncols <= 0 || r.nrows <= 0 || !(r.cellsize > 0.0)) {
    throw FormatError("raster '" + name + "' has non-positive dimensions or cell size");
  }
  const std::size_t count = static_cast<std::size_t>(r.ncols) * static_cast<std::size_t>(r.nrows);
  r.values.resize(count);
  for (auto& v : r.values) {
    if (!(is >> v)) throw FormatError("raster '" + name + "' has fewer values than ncols*nrows");
  }
  return r;
}

inline CovariateRaster read_raster(const std::string& path, const std::string& name) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read raster " + path);
  return read_raster(is, name);
}

inline void write_raster(std::ostream& os, const CovariateRaster& r) {
  os << "ncols " << r.ncols << "\nnrows " << r.nrows << "\nxllcorner "
     << std::setprecision(17) << r.xllcorner << "\nyllcorner " << r.yllcorner << "\ncellsize "
     << r.cellsize << "\nnodata_value " << r.nodata << '\n';
  for (int row = 0; row < r.nrows; ++row) {
    for (int col = 0; col < r.ncols; ++col) os << (col ? " " : "") << r.at(row, col);
    os << '\n';
  }
}

/// Value of the cell containing `p`; nodata and out-of-extent give nullopt.
inline std::optional<double> sample_raster(const CovariateRaster& r, const GeoPoint& p) {
  const double fx = (p.lon - r.xllcorner) / r.cellsize;
  const double fy = (p.lat - r.yllcorner) / r.cellsize;
  if (!(fx >= 0.0) || !(fy >= 0.0) || fx >= r.ncols || fy >= r.nrows) return std::nullopt;
  const int col = static_cast<int>(fx);
  const int row = r.nrows - 1 - static_cast<int>(fy);
  const double v = r.at(row, col);
  if (v == r.nodata || !std::isfinite(v)) return std::nullopt;
  return v;
}

/// A named covariate: either one static raster or one raster per year.
struct CovariateSource {
  std::string name;
  std::optional<CovariateRaster> fixed;
  std::map<int, CovariateRaster> by_year;

  std::optional<double> value(const GeoPoint& p, int year) const {
    if (!by_year.empty()) {
      const auto it = by_year.find(year);
      if (it == by_year.end()) return std::nullopt;
      return sample_raster(it->second, p);
    }
    if (fixed) return sample_raster(*fixed, p);
    return std::nullopt;
  }
};

struct ColumnTransform {
  double mean = 0.0;
  double sd = 1.0;

  double apply(double raw) const { return (raw - mean) / sd; }
};

struct Standardized {
  Eigen::MatrixXd z;
  std::vector<ColumnTransform> transforms;
};

/// Centers and scales each column by its sample mean and (n-1) standard
/// deviation.
inline Standardized standardize(const Eigen::MatrixXd& columns,
                                const std::vector<std::string>& names = {}) {
  Standardized out;
  out.z.resize(columns.rows(), columns.cols());
  for (int j = 0; j < columns.cols(); ++j) {
    const std::string label =
        j < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(j)] : std::to_string(j);
    std::set<double> distinct;
    for (int i = 0; i < columns.rows() && distinct.size() < 2; ++i) {
      if (!std::isfinite(columns(i, j))) {
        throw DegenerateCovariateError("covariate '" + label + "' has non-finite values");
      }
      distinct.insert(columns(i, j));
    }
    if (distinct.size() < 2) {
      throw DegenerateCovariateError("covariate '" + label + "' has fewer than two distinct values");
    }
    const double mean = columns.col(j).mean();
    const double sd = std::sqrt((columns.col(j).array() - mean).square().sum() /
                                static_cast<double>(columns.rows() - 1));
    if (!(sd > 0.0)) throw DegenerateCovariateError("covariate '" + label + "' has zero variance");
    out.transforms.push_back({mean, sd});
    out.z.col(j) = (columns.col(j).array() - mean) / sd;
  }
  return out;
}

/// Modeling sample: one row per observation.
struct Dataset {
  Family family = Family::kBernoulli;
  YearWindow window;
  std::vector<GeoPoint> locations;
  std::vector<int> years;
  Eigen::VectorXd y;
  std::vector<std::string> covariate_names;
  /// Raw covariates and their standardized version.
  Eigen::MatrixXd raw;
  Eigen::MatrixXd z;
  std::vector<ColumnTransform> transforms;
  /// Site label per row (Poisson aggregation only).
  std::vector<std::string> site_names;

  int size() const { return static_cast<int>(y.size()); }
};

struct DatasetReport {
  int missing_nkill = 0;
  int missing_covariate = 0;
};

/// Lethality sample: y = 1 when an event caused at least one death. Events
/// without a death count, or with a missing covariate, are excluded.
inline Dataset build_bernoulli_dataset(const std::vector<EventRecord>& events,
                                       const std::vector<CovariateSource>& covariates,
                                       const YearWindow& window,
                                       DatasetReport* report = nullptr) {
  DatasetReport local;
  DatasetReport& rep = report ? *report : local;
  Dataset d;
  d.family = Family::kBernoulli;
  d.window = window;
  for (const auto& c : covariates) d.covariate_names.push_back(c.name);
  std::vector<double> y;
  std::vector<std::vector<double>> rows;
  for (const auto& e : events) {
    if (!window.contains(e.year)) continue;
    if (!e.nkill) {
      ++rep.missing_nkill;
      continue;
    }
    std::vector<double> row;
    bool missing = false;
    for (const auto& c : covariates) {
      const auto v = c.value(e.location, e.year);
      if (!v) {
        missing = true;
        break;
      }
      row.push_back(*v);
    }
    if (missing) {
      ++rep.missing_covariate;
      continue;
    }
    d.locations.push_back(e.location);
    d.years.push_back(e.year);
    y.push_back(e.lethal() ? 1.0 : 0.0);
    rows.push_back(std::move(row));
  }
  d.y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  d.raw.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(covariates.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < covariates.size(); ++j) {
      d.raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  if (!covariates.empty()) {
    auto s = standardize(d.raw, d.covariate_names);
    d.z = std::move(s.z);
    d.transforms = std::move(s.transforms);
  } else {
    d.z.resize(d.raw.rows(), 0);
  }
  return d;
}

/// Lethal-event tallies per site and year.
struct SiteCounts {
  std::vector<Site> sites;
  YearWindow window;
  /// counts[site][year - first_year]
  std::vector<std::vector<int>> counts;
  int lethal_events = 0;
  int dropped = 0;
};

/// Assigns every lethal event in the window to its nearest site within
/// `radius_deg` degrees of arc; events farther than that from every site are
/// dropped.
inline SiteCounts aggregate_counts(const std::vector<EventRecord>& events,
                                   const std::vector<Site>& sites, const YearWindow& window,
                                   double radius_deg = 0.5) {
  if (sites.empty()) throw DomainError("site list is empty");
  SiteCounts out;
  out.sites = sites;
  out.window = window;
  out.counts.assign(sites.size(), std::vector<int>(static_cast<std::size_t>(window.slices()), 0));
  std::vector<Eigen::Vector3d> site_vec;
  for (const auto& s : sites) site_vec.push_back(to_unit_vector(s.location).vec());
  const double limit = radius_deg * kDegToRad;
  for (const auto& e : events) {
    if (!e.lethal() || !window.contains(e.year)) continue;
    ++out.lethal_events;
    const Eigen::Vector3d p = to_unit_vector(e.location).vec();
    int nearest = -1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < sites.size(); ++s) {
      const double a = central_angle(p, site_vec[s]);
      if (a < best) {
        best = a;
        nearest = static_cast<int>(s);
      }
    }
    if (best > limit) {
      ++out.dropped;
      continue;
    }
    ++out.counts[static_cast<std::size_t>(nearest)][static_cast<std::size_t>(e.year - window.first_year)];
  }
  return out;
}

/// One row per site-year with all covariates available, zero counts included.
inline Dataset build_poisson_dataset(const SiteCounts& counts,
                                     const std::vector<CovariateSource>& covariates,
                                     DatasetReport* report = nullptr) {
  DatasetReport local;
  DatasetReport& rep = report ? *report : local;
  Dataset d;
  d.family = Family::kPoisson;
  d.window = counts.window;
  for (const auto& c : covariates) d.covariate_names.push_back(c.name);
  std::vector<double> y;
  std::vector<std::vector<double>> rows;
  for (std::size_t s = 0; s < counts.sites.size(); ++s) {
    for (int t = 0; t < counts.window.slices(); ++t) {
      const int year = counts.window.first_year + t;
      std::vector<double> row;
      bool missing = false;
      for (const auto& c : covariates) {
        const auto v = c.value(counts.sites[s].location, year);
        if (!v) {
          missing = true;
          break;
        }
        row.push_back(*v);
      }
      if (missing) {
        ++rep.missing_covariate;
        continue;
      }
      d.locations.push_back(counts.sites[s].location);
      d.years.push_back(year);
      d.site_names.push_back(counts.sites[s].name);
      y.push_back(counts.counts[s][static_cast<std::size_t>(t)]);
      rows.push_back(std::move(row));
    }
  }
  d.y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  d.raw.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(covariates.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < covariates.size(); ++j) {
      d.raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  if (!covariates.empty()) {
    auto st = standardize(d.raw, d.covariate_names);
    d.z = std::move(st.z);
    d.transforms = std::move(st.transforms);
  } else {
    d.z.resize(d.raw.rows(), 0);
  }
  return d;
}

// Dataset CSV: latitude,longitude,year,y,<raw covariates...>. Standardization
// is recomputed on load, so the file stays on the raw scale.

inline void write_dataset(std::ostream& os, const Dataset& d) {
  os << "latitude,longitude,year,y";
  for (const auto& n : d.covariate_names) os << ',' << n;
  os << '\n' << std::setprecision(17);
  for (int i = 0; i < d.size(); ++i) {
    os << d.locations[static_cast<std::size_t>(i)].lat << ','
       << d.locations[static_cast<std::size_t>(i)].lon << ',' << d.years[static_cast<std::size_t>(i)]
       << ',' << d.y[i];
    for (int j = 0; j < d.raw.cols(); ++j) os << ',' << d.raw(i, j);
    os << '\n';
  }
}

inline Dataset read_dataset(std::istream& is, Family family, const YearWindow& window,
                            const std::vector<std::string>& wanted) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("dataset file is empty (no header)");
  std::vector<std::string> required = {"latitude", "longitude", "year", "y"};
  required.insert(required.end(), wanted.begin(), wanted.end());
  const auto idx = detail::header_index(line, required, "dataset");
  Dataset d;
  d.family = family;
  d.window = window;
  d.covariate_names = wanted;
  std::vector<double> y;
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv_line(line);
    auto num = [&](const std::string& name) {
      const auto i = idx.at(name);
      const auto v = i < f.size() ? detail::parse_double(f[i]) : std::nullopt;
      if (!v) throw FormatError("dataset line " + std::to_string(line_no) + " has a bad '" + name + "'");
      return *v;
    };
    const int year = static_cast<int>(num("year"));
    if (!window.contains(year)) continue;
    d.locations.push_back(normalize({num("latitude"), num("longitude")}));
    d.years.push_back(year);
    y.push_back(num("y"));
    std::vector<double> row;
    for (const auto& n : wanted) row.push_back(num(n));
    rows.push_back(std::move(row));
  }
  d.y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  d.raw.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(wanted.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < wanted.size(); ++j) {
      d.raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  if (!wanted.empty()) {
    auto st = standardize(d.raw, wanted);
    d.z = std::move(st.z);
    d.transforms = std::move(st.transforms);
  } else {
    d.z.resize(d.raw.rows(), 0);
  }
  return d;
}

inline void write_transforms(std::ostream& os, const Dataset& d) {
  os << "name,mean,sd\n" << std::setprecision(17);
  for (std::size_t j = 0; j < d.transforms.size(); ++j) {
    os << d.covariate_names[j] << ',' << d.transforms[j].mean << ',' << d.transforms[j].sd << '\n';
  }
}

struct ModelOptions {
  std::optional<RangeSigmaPrior> range_sigma_prior;
  bool noise_term = false;
  double fixed_effect_prior_precision = 0.001;
};

/// Couples a dataset to a mesh: projector rows are shifted into the time
/// block of each observation's year.
inline ModelSpec make_model_spec(const Dataset& d, const TriMesh& mesh,
                                 std::shared_ptr<const FemMatrices> fem,
                                 const ModelOptions& options = {}) {
  ModelSpec spec;
  spec.family = d.family;
  spec.fem = std::move(fem);
  spec.time_slices = d.window.slices();
  spec.first_year = d.window.first_year;
  std::vector<int> slice;
  slice.reserve(d.years.size());
  for (int year : d.years) slice.push_back(year - d.window.first_year);
  spec.projector = spacetime_projector(barycentric_projector(mesh, d.locations), slice,
                                       spec.time_slices);
  spec.z = d.z;
  spec.covariate_names = d.covariate_names;
  spec.y = d.y;
  spec.range_sigma_prior = options.range_sigma_prior;
  spec.noise_term = options.noise_term;
  spec.fixed_effect_prior_precision = options.fixed_effect_prior_precision;
  return spec;
}

}  // namespace geolgm
