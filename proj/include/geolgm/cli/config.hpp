#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "geolgm/data.hpp"
#include "geolgm/errors.hpp"
#include "geolgm/geodesy.hpp"
#include "geolgm/likelihood.hpp"
#include "geolgm/mesh.hpp"
#include "geolgm/surface.hpp"
#include "json.hpp"

namespace geolgm::cli {

inline constexpr const char* kToolVersion = "0.1.0";

struct MeshConfig {
  int subdivisions = 3;
  std::vector<GeoPoint> refine_sites;
  int refine_levels = 0;
};

/// One named covariate: a single raster or one raster per year.
struct RasterConfig {
  std::string name;
  std::string path;
  std::map<int, std::string> by_year;
};

struct DataConfig {
  std::string events_path;
  std::vector<RasterConfig> rasters;
  std::string sites_path;
  YearWindow window;
  int min_specificity = 1;
  /// Prebuilt dataset CSV (from `ingest` or `simulate`); replaces ingestion.
  std::string dataset_path;
  double site_radius_deg = 0.5;
};

struct PriorConfig {
  std::string mode = "default";
  double r_km = 500.0;
  double sigma2 = 50.0;
};

struct ModelConfig {
  Family family = Family::kBernoulli;
  std::vector<std::string> covariates;
  bool noise_term = false;
  PriorConfig prior;
};

struct PredictConfig {
  double resolution_deg = 2.0;
  /// Empty means every year of the window.
  std::vector<int> years;
};

struct HotspotConfig {
  std::optional<double> epsilon;
};

/// Truth for the `simulate` command. Mesh size, window and likelihood come
/// from the mesh, data and model sections.
struct SimulateConfig {
  int n = 2000;
  double beta0 = -0.5;
  std::vector<double> beta{0.3};
  double range_km = 6371.0;
  double sigma2 = 1.0;
  double rho = 0.9;
};

struct RunConfig {
  MeshConfig mesh;
  DataConfig data;
  ModelConfig model;
  PredictConfig predict;
  HotspotConfig hotspot;
  std::string output_directory = "out";
  std::optional<SimulateConfig> simulate;
  std::uint64_t seed = 0;
  /// The parsed document, echoed into manifests.
  nlohmann::ordered_json source;
  std::filesystem::path base_dir;

  std::vector<int> prediction_years() const {
    if (!predict.years.empty()) return predict.years;
    std::vector<int> out;
    for (int y = data.window.first_year; y <= data.window.last_year; ++y) out.push_back(y);
    return out;
  }
  double epsilon() const { return hotspot.epsilon.value_or(default_epsilon(model.family)); }
};

namespace detail {

using Json = nlohmann::ordered_json;

/// Object view that rejects keys outside `allowed` and type-checks reads.
class Section {
 public:
  Section(const Json& j, std::string where, std::initializer_list<const char*> allowed)
      : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError("type", where_ + " must be a JSON object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j_.items()) {
      if (!ok.count(key)) throw ConfigError("unknown_key", "unknown key '" + key + "' in " + where_);
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const Json& raw(const char* key) const { return j_.at(key); }
  std::string path(const char* key) const { return where_ + "." + key; }

  std::optional<int> integer(const char* key) const {
    if (!has(key)) return std::nullopt;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError("type", path(key) + " must be an integer");
    return v.get<int>();
  }
  std::optional<double> number(const char* key) const {
    if (!has(key)) return std::nullopt;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError("type", path(key) + " must be a number");
    return v.get<double>();
  }
  std::optional<bool> boolean(const char* key) const {
    if (!has(key)) return std::nullopt;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError("type", path(key) + " must be true or false");
    return v.get<bool>();
  }
  std::optional<std::string> string(const char* key) const {
    if (!has(key)) return std::nullopt;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError("type", path(key) + " must be a string");
    return v.get<std::string>();
  }
  const Json* array(const char* key) const {
    if (!has(key)) return nullptr;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError("type", path(key) + " must be an array");
    return &v;
  }

 private:
  const Json& j_;
  std::string where_;
};

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

inline Family parse_family(const std::string& s) {
  if (s == "bernoulli") return Family::kBernoulli;
  if (s == "poisson") return Family::kPoisson;
  throw ConfigError("likelihood", "model.likelihood must be \"bernoulli\" or \"poisson\", got \"" + s + "\"");
}

inline void parse_mesh(const Json& j, MeshConfig& m) {
  Section s(j, "mesh", {"subdivisions", "refine_sites", "refine_levels"});
  m.subdivisions = s.integer("subdivisions").value_or(m.subdivisions);
  if (m.subdivisions < 0 || m.subdivisions > kMaxSubdivisions) {
    throw ConfigError("mesh_range", "mesh.subdivisions must lie in [0, " +
                                        std::to_string(kMaxSubdivisions) + "]");
  }
  m.refine_levels = s.integer("refine_levels").value_or(0);
  if (m.refine_levels < 0 || m.refine_levels > 4) {
    throw ConfigError("mesh_range", "mesh.refine_levels must lie in [0, 4]");
  }
  if (const auto* sites = s.array("refine_sites")) {
    for (const auto& p : *sites) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
        throw ConfigError("type", "mesh.refine_sites entries must be [latitude, longitude]");
      }
      const GeoPoint g{p[0].get<double>(), p[1].get<double>()};
      if (!in_bounds(g)) throw ConfigError("coordinates", "mesh.refine_sites entry is out of range");
      m.refine_sites.push_back(g);
    }
  }
}

inline void parse_data(const Json& j, const std::filesystem::path& base, DataConfig& d) {
  Section s(j, "data", {"events_path", "rasters", "sites_path", "window", "min_specificity",
                        "dataset_path", "site_radius_deg"});
  d.events_path = resolve(base, s.string("events_path").value_or(""));
  d.sites_path = resolve(base, s.string("sites_path").value_or(""));
  d.dataset_path = resolve(base, s.string("dataset_path").value_or(""));
  d.min_specificity = s.integer("min_specificity").value_or(1);
  if (d.min_specificity < 1 || d.min_specificity > 5) {
    throw ConfigError("specificity", "data.min_specificity must lie in [1, 5]");
  }
  d.site_radius_deg = s.number("site_radius_deg").value_or(0.5);
  if (!(d.site_radius_deg > 0.0) || d.site_radius_deg > 180.0) {
    throw ConfigError("site_radius", "data.site_radius_deg must lie in (0, 180]");
  }
  if (s.has("window")) {
    Section w(s.raw("window"), "data.window", {"first_year", "last_year"});
    d.window.first_year = w.integer("first_year").value_or(d.window.first_year);
    d.window.last_year = w.integer("last_year").value_or(d.window.last_year);
  }
  if (d.window.last_year < d.window.first_year) {
    throw ConfigError("window", "data.window.last_year precedes first_year");
  }
  if (d.window.slices() > 100) throw ConfigError("window", "data.window spans more than 100 years");
  if (s.has("rasters")) {
    const auto& r = s.raw("rasters");
    if (!r.is_object()) throw ConfigError("type", "data.rasters must map names to paths");
    for (const auto& [name, value] : r.items()) {
      RasterConfig rc;
      rc.name = name;
      if (value.is_string()) {
        rc.path = resolve(base, value.get<std::string>());
      } else if (value.is_object()) {
        for (const auto& [year, p] : value.items()) {
          if (!p.is_string()) throw ConfigError("type", "data.rasters." + name + " paths must be strings");
          int y = 0;
          try {
            std::size_t used = 0;
            y = std::stoi(year, &used);
            if (used != year.size()) throw std::invalid_argument(year);
          } catch (const std::exception&) {
            throw ConfigError("raster_year", "data.rasters." + name + " key '" + year + "' is not a year");
          }
          rc.by_year[y] = resolve(base, p.get<std::string>());
        }
        if (rc.by_year.empty()) throw ConfigError("raster_year", "data.rasters." + name + " lists no years");
      } else {
        throw ConfigError("type", "data.rasters." + name + " must be a path or a year-to-path map");
      }
      d.rasters.push_back(std::move(rc));
    }
  }
}

inline void parse_model(const Json& j, ModelConfig& m) {
  Section s(j, "model", {"likelihood", "covariates", "noise_term", "prior"});
  m.family = parse_family(s.string("likelihood").value_or("bernoulli"));
  m.noise_term = s.boolean("noise_term").value_or(false);
  if (const auto* cov = s.array("covariates")) {
    std::set<std::string> seen;
    for (const auto& c : *cov) {
      if (!c.is_string() || c.get<std::string>().empty()) {
        throw ConfigError("type", "model.covariates entries must be nonempty strings");
      }
      if (!seen.insert(c.get<std::string>()).second) {
        throw ConfigError("duplicate_covariate", "covariate '" + c.get<std::string>() + "' listed twice");
      }
      m.covariates.push_back(c.get<std::string>());
    }
  }
  if (s.has("prior")) {
    Section p(s.raw("prior"), "model.prior", {"mode", "r_km", "sigma2"});
    m.prior.mode = p.string("mode").value_or("default");
    if (m.prior.mode != "default" && m.prior.mode != "range_sigma") {
      throw ConfigError("prior_mode", "model.prior.mode must be \"default\" or \"range_sigma\"");
    }
    m.prior.r_km = p.number("r_km").value_or(m.prior.r_km);
    m.prior.sigma2 = p.number("sigma2").value_or(m.prior.sigma2);
    if (!(m.prior.r_km > 0.0) || !(m.prior.sigma2 > 0.0)) {
      throw ConfigError("prior_value", "model.prior.r_km and sigma2 must be positive");
    }
  }
}

inline void parse_simulate(const Json& j, SimulateConfig& c) {
  Section s(j, "simulate", {"n", "beta0", "beta", "range_km", "sigma2", "rho"});
  c.n = s.integer("n").value_or(c.n);
  c.beta0 = s.number("beta0").value_or(c.beta0);
  if (const auto* b = s.array("beta")) {
    c.beta.clear();
    for (const auto& v : *b) {
      if (!v.is_number()) throw ConfigError("type", "simulate.beta entries must be numbers");
      c.beta.push_back(v.get<double>());
    }
  }
  c.range_km = s.number("range_km").value_or(c.range_km);
  c.sigma2 = s.number("sigma2").value_or(c.sigma2);
  c.rho = s.number("rho").value_or(c.rho);
  if (c.n < 1 || !(c.range_km > 0.0) || !(c.sigma2 > 0.0) || !(std::abs(c.rho) < 1.0)) {
    throw ConfigError("simulate_value",
                      "simulate needs n >= 1, positive range_km and sigma2, and |rho| < 1");
  }
}

}  // namespace detail

/// Parses and validates a configuration document. Relative paths resolve
/// against `base_dir`.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  detail::Json j;
  try {
    j = detail::Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("parse", std::string("configuration is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  cfg.base_dir = base_dir;
  detail::Section top(j, "configuration",
                      {"mesh", "data", "model", "predict", "hotspot", "output", "seed", "simulate"});
  if (!top.has("seed")) throw ConfigError("missing_seed", "configuration has no seed");
  const auto& seed = top.raw("seed");
  if (!seed.is_number_unsigned()) throw ConfigError("seed", "seed must be a nonnegative integer");
  cfg.seed = seed.get<std::uint64_t>();

  if (top.has("mesh")) detail::parse_mesh(top.raw("mesh"), cfg.mesh);
  if (top.has("data")) detail::parse_data(top.raw("data"), base_dir, cfg.data);
  if (top.has("model")) detail::parse_model(top.raw("model"), cfg.model);
  if (top.has("predict")) {
    detail::Section s(top.raw("predict"), "predict", {"resolution_deg", "years"});
    cfg.predict.resolution_deg = s.number("resolution_deg").value_or(2.0);
    try {
      grid_shape(cfg.predict.resolution_deg);
    } catch (const DomainError& e) {
      throw ConfigError("resolution", std::string("predict.resolution_deg: ") + e.what());
    }
    if (const auto* years = s.array("years")) {
      for (const auto& y : *years) {
        if (!y.is_number_integer()) throw ConfigError("type", "predict.years entries must be integers");
        cfg.predict.years.push_back(y.get<int>());
      }
    }
  }
  for (int y : cfg.predict.years) {
    if (!cfg.data.window.contains(y)) {
      throw ConfigError("predict_year", "predict year " + std::to_string(y) + " is outside data.window");
    }
  }
  if (top.has("hotspot")) {
    detail::Section s(top.raw("hotspot"), "hotspot", {"epsilon"});
    cfg.hotspot.epsilon = s.number("epsilon");
    if (cfg.hotspot.epsilon) {
      try {
        check_epsilon(cfg.model.family, *cfg.hotspot.epsilon);
      } catch (const DomainError& e) {
        throw ConfigError("epsilon", std::string("hotspot.epsilon: ") + e.what());
      }
    }
  }
  if (top.has("output")) {
    detail::Section s(top.raw("output"), "output", {"directory"});
    cfg.output_directory = detail::resolve(base_dir, s.string("directory").value_or("out"));
  } else {
    cfg.output_directory = detail::resolve(base_dir, "out");
  }
  if (top.has("simulate")) {
    cfg.simulate.emplace();
    detail::parse_simulate(top.raw("simulate"), *cfg.simulate);
  }

  // Without a prebuilt dataset, every modeled covariate needs a raster.
  if (cfg.data.dataset_path.empty()) {
    for (const auto& c : cfg.model.covariates) {
      const bool found = std::any_of(cfg.data.rasters.begin(), cfg.data.rasters.end(),
                                     [&](const RasterConfig& r) { return r.name == c; });
      if (!found) throw ConfigError("covariate_raster", "covariate '" + c + "' has no raster in data.rasters");
    }
  }
  cfg.source = std::move(j);
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("path", "cannot read configuration file " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_config(text, std::filesystem::absolute(path).parent_path());
}

}  // namespace geolgm::cli
