#pragma once

#include <Eigen/Core>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <new>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "geolgm/cli/config.hpp"
#include "geolgm/data.hpp"
#include "geolgm/errors.hpp"
#include "geolgm/fem.hpp"
#include "geolgm/fit.hpp"
#include "geolgm/mesh.hpp"
#include "geolgm/simulate.hpp"
#include "geolgm/spde.hpp"
#include "geolgm/surface.hpp"
#include "json.hpp"

namespace geolgm::cli {

namespace fs = std::filesystem;

struct Invocation {
  std::string command;
  std::string config_path;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"mesh",    "ingest",  "simulate",   "fit",
                                                 "predict", "hotspot", "sensitivity"};
  return names;
}

// ---------------------------------------------------------------------------
// Building blocks shared by the commands and the acceptance harness.

inline TriMesh build_mesh(const MeshConfig& m) {
  TriMesh mesh = build_icosphere(m.subdivisions);
  if (m.refine_levels > 0 && !m.refine_sites.empty()) {
    mesh = refine_near(mesh, m.refine_sites, m.refine_levels);
  }
  return mesh;
}

inline std::vector<CovariateSource> load_covariates(const DataConfig& d,
                                                    const std::vector<std::string>& names) {
  std::vector<CovariateSource> out;
  for (const auto& name : names) {
    const auto it = std::find_if(d.rasters.begin(), d.rasters.end(),
                                 [&](const RasterConfig& r) { return r.name == name; });
    if (it == d.rasters.end()) throw ConfigError("covariate_raster", "covariate '" + name + "' has no raster");
    CovariateSource src;
    src.name = name;
    if (!it->path.empty()) src.fixed = read_raster(it->path, name);
    for (const auto& [year, path] : it->by_year) src.by_year.emplace(year, read_raster(path, name));
    out.push_back(std::move(src));
  }
  return out;
}

/// Events plus rasters to a modeling sample. `report` receives the
/// filtering and exclusion counts.
inline Dataset ingest(const RunConfig& cfg, nlohmann::ordered_json* report = nullptr) {
  LoadReport lr;
  const auto events = load_events(cfg.data.events_path, cfg.data.window, cfg.data.min_specificity, &lr);
  const auto covariates = load_covariates(cfg.data, cfg.model.covariates);
  DatasetReport dr;
  Dataset d;
  nlohmann::ordered_json rep;
  rep["rows"] = lr.rows;
  rep["invalid_coordinates"] = lr.invalid_coordinates;
  rep["outside_window"] = lr.outside_window;
  rep["filtered_specificity"] = lr.filtered_specificity;
  rep["kept_events"] = events.size();
  if (cfg.model.family == Family::kPoisson) {
    const auto counts = aggregate_counts(events, load_sites(cfg.data.sites_path), cfg.data.window,
                                         cfg.data.site_radius_deg);
    d = build_poisson_dataset(counts, covariates, &dr);
    rep["lethal_events"] = counts.lethal_events;
    rep["dropped_no_site"] = counts.dropped;
  } else {
    d = build_bernoulli_dataset(events, covariates, cfg.data.window, &dr);
    rep["missing_nkill"] = dr.missing_nkill;
  }
  rep["missing_covariate"] = dr.missing_covariate;
  rep["observations"] = d.size();
  if (report) *report = std::move(rep);
  return d;
}

/// The modeling sample for `fit` and `sensitivity`: a prebuilt dataset when
/// configured, otherwise fresh ingestion.
inline Dataset model_data(const RunConfig& cfg) {
  if (!cfg.data.dataset_path.empty()) {
    std::ifstream is(cfg.data.dataset_path);
    if (!is) throw ConfigError("path", "cannot read dataset " + cfg.data.dataset_path);
    return read_dataset(is, cfg.model.family, cfg.data.window, cfg.model.covariates);
  }
  return ingest(cfg);
}

inline ModelOptions model_options(const ModelConfig& m, bool range_sigma) {
  ModelOptions o;
  o.noise_term = m.noise_term;
  if (range_sigma) o.range_sigma_prior = RangeSigmaPrior{m.prior.r_km, m.prior.sigma2};
  return o;
}

inline SimConfig sim_config(const RunConfig& cfg) {
  if (!cfg.simulate) throw ConfigError("missing_section", "the simulate command needs a simulate section");
  const auto& s = *cfg.simulate;
  SimConfig out;
  out.subdivisions = cfg.mesh.subdivisions;
  out.time_slices = cfg.data.window.slices();
  out.first_year = cfg.data.window.first_year;
  out.family = cfg.model.family;
  out.n = s.n;
  out.beta0 = s.beta0;
  out.beta = s.beta;
  const auto kt = kappa_tau_from_range_sigma(s.range_km, s.sigma2);
  out.kappa = kt.kappa;
  out.tau = kt.tau;
  out.rho = s.rho;
  out.seed = cfg.seed;
  return out;
}

struct SensitivityRow {
  std::string parameter;
  std::string mode;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

/// Side-by-side rows: each parameter under the default prior, then under
/// the range/sigma prior.
inline std::vector<SensitivityRow> sensitivity_rows(const FitResult& by_default,
                                                    const FitResult& range_sigma) {
  std::vector<SensitivityRow> rows;
  for (std::size_t i = 0; i < by_default.fixed_effects.size(); ++i) {
    for (const auto* f : {&by_default, &range_sigma}) {
      const auto& p = f->fixed_effects[i];
      rows.push_back({p.name, f == &by_default ? "default" : "range_sigma", p.mean, p.sd, p.q025, p.q975});
    }
  }
  for (std::size_t i = 0; i < by_default.hypers.size(); ++i) {
    for (const auto* f : {&by_default, &range_sigma}) {
      const auto& p = f->hypers[i];
      rows.push_back({p.name, f == &by_default ? "default" : "range_sigma", p.mean, p.sd, p.q025, p.q975});
    }
  }
  return rows;
}

inline void write_sensitivity_csv(std::ostream& os, const std::vector<SensitivityRow>& rows) {
  os << "parameter,mode,mean,sd,q025,q975\n" << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.parameter << ',' << r.mode << ',' << r.mean << ',' << r.sd << ',' << r.q025 << ','
       << r.q975 << '\n';
  }
}

// ---------------------------------------------------------------------------
// Fit artifacts on disk.

inline constexpr const char* kMeshFile = "mesh.txt";
inline constexpr const char* kSummaryFile = "summary.csv";
inline constexpr const char* kFieldFile = "field.csv";
inline constexpr const char* kFitFile = "fit.json";

inline nlohmann::ordered_json fit_record(const FitResult& f, const ModelSpec& spec) {
  nlohmann::ordered_json j;
  j["family"] = to_string(f.family);
  j["first_year"] = f.first_year;
  j["time_slices"] = f.time_slices;
  j["n_vertices"] = f.n_vertices;
  j["n_observations"] = spec.n_observations();
  j["covariates"] = spec.covariate_names;
  j["noise_term"] = spec.noise_term;
  j["prior"] = spec.range_sigma_prior
                   ? nlohmann::ordered_json{{"mode", "range_sigma"},
                                            {"r_km", spec.range_sigma_prior->range_km},
                                            {"sigma2", spec.range_sigma_prior->sigma2}}
                   : nlohmann::ordered_json{{"mode", "default"}};
  j["evaluations"] = f.evaluations;
  j["mode"] = {{"log_kappa", f.mode.log_kappa},
               {"log_tau", f.mode.log_tau},
               {"rho_transformed", f.mode.rho_transformed},
               {"log_noise_precision", f.mode.log_noise_precision}};
  j["log_evidence"] = f.log_evidence;
  j["dic"] = f.dic;
  j["p_d"] = f.p_d;
  j["waic"] = f.waic;
  j["p_waic"] = f.p_waic;
  return j;
}

namespace detail {

inline std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path,
                                                          const std::string& expected_header) {
  std::ifstream is(path);
  if (!is) throw ConfigError("missing_artifact", "cannot read " + path.string() + "; run fit first");
  std::string line;
  if (!std::getline(is, line) || geolgm::detail::trim(line) != expected_header) {
    throw FormatError(path.string() + " does not have the expected header");
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (!geolgm::detail::trim(line).empty()) rows.push_back(geolgm::detail::split_csv_line(line));
  }
  return rows;
}

inline double to_double(const std::string& s, const fs::path& where) {
  const auto v = geolgm::detail::parse_double(s);
  if (!v) throw FormatError(where.string() + " has a malformed number '" + s + "'");
  return *v;
}

}  // namespace detail

/// Rebuilds the parts of a fit that prediction needs (family, window,
/// intercept and the field summary) from a fit output directory.
inline FitResult read_fit_artifacts(const fs::path& dir) {
  std::ifstream js(dir / kFitFile);
  if (!js) throw ConfigError("missing_artifact", "cannot read " + (dir / kFitFile).string() + "; run fit first");
  nlohmann::json rec;
  try {
    rec = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string(kFitFile) + " is not valid JSON: " + e.what());
  }
  FitResult f;
  try {
    f.family = family_from_string(rec.at("family").get<std::string>());
    f.first_year = rec.at("first_year").get<int>();
    f.time_slices = rec.at("time_slices").get<int>();
    f.n_vertices = rec.at("n_vertices").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string(kFitFile) + " is incomplete: " + e.what());
  }

  const fs::path summary = dir / kSummaryFile;
  for (const auto& r : detail::read_csv_rows(summary, "name,mean,sd,q025,q975")) {
    if (r.size() != 5) throw FormatError(summary.string() + " has a short row");
    ParameterSummary p{r[0], detail::to_double(r[1], summary), detail::to_double(r[2], summary),
                       detail::to_double(r[3], summary), detail::to_double(r[4], summary)};
    if (p.name == kInterceptName) f.fixed_effects.push_back(p);
  }
  if (f.fixed_effects.empty()) throw FormatError(summary.string() + " has no intercept row");

  const fs::path field = dir / kFieldFile;
  const auto rows = detail::read_csv_rows(field, "node,year,mean,sd");
  const auto total = static_cast<std::size_t>(f.n_vertices) * static_cast<std::size_t>(f.time_slices);
  if (rows.size() != total) throw FormatError(field.string() + " does not match " + kFitFile);
  f.field_mean.resize(static_cast<Eigen::Index>(total));
  f.field_sd.resize(static_cast<Eigen::Index>(total));
  for (std::size_t i = 0; i < total; ++i) {
    if (rows[i].size() != 4) throw FormatError(field.string() + " has a short row");
    f.field_mean[static_cast<Eigen::Index>(i)] = detail::to_double(rows[i][2], field);
    f.field_sd[static_cast<Eigen::Index>(i)] = detail::to_double(rows[i][3], field);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Command runner.

namespace detail {

inline bool readable(const std::string& path) {
  std::error_code ec;
  return fs::is_regular_file(path, ec);
}

inline void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError("missing_path", what + " is not configured");
  if (!readable(path)) throw ConfigError("path", what + " not found: " + path);
}

/// Every input a command will read is checked before any work starts.
inline void check_inputs(const RunConfig& cfg, const std::string& command) {
  auto ingestion = [&] {
    require_file(cfg.data.events_path, "data.events_path");
    for (const auto& r : cfg.data.rasters) {
      if (!r.path.empty()) require_file(r.path, "raster '" + r.name + "'");
      for (const auto& [year, p] : r.by_year) {
        require_file(p, "raster '" + r.name + "' for " + std::to_string(year));
      }
    }
    if (cfg.model.family == Family::kPoisson) require_file(cfg.data.sites_path, "data.sites_path");
  };
  if (command == "ingest") {
    ingestion();
  } else if (command == "fit" || command == "sensitivity") {
    if (!cfg.data.dataset_path.empty()) {
      require_file(cfg.data.dataset_path, "data.dataset_path");
    } else {
      ingestion();
    }
  } else if (command == "simulate") {
    if (!cfg.simulate) throw ConfigError("missing_section", "the simulate command needs a simulate section");
  }
}

class Runner {
 public:
  Runner(const Invocation& inv, RunConfig cfg, std::ostream& log)
      : inv_(inv), cfg_(std::move(cfg)), log_(log), start_(Clock::now()) {
    out_dir_ = inv.out ? fs::path(*inv.out) : fs::path(cfg_.output_directory);
  }

  void run() {
    check_inputs(cfg_, inv_.command);
    std::error_code ec;
    fs::create_directories(out_dir_, ec);
    if (ec || !fs::is_directory(out_dir_)) {
      throw ConfigError("path", "cannot create output directory " + out_dir_.string());
    }
    const std::string& c = inv_.command;
    if (c == "mesh") {
      mesh();
    } else if (c == "ingest") {
      ingest_cmd();
    } else if (c == "simulate") {
      simulate();
    } else if (c == "fit") {
      fit_cmd();
    } else if (c == "predict") {
      predict();
    } else if (c == "hotspot") {
      hotspot();
    } else if (c == "sensitivity") {
      sensitivity();
    } else {
      throw ConfigError("command", "unknown command '" + c + "'");
    }
    write_manifest();
  }

 private:
  using Clock = std::chrono::steady_clock;

  void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
    const fs::path path = out_dir_ / name;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ResourceError("cannot write " + path.string());
    body(os);
    os.flush();
    if (!os) throw ResourceError("write failed for " + path.string());
    outputs_.push_back(name);
    log_ << "wrote " << path.string() << '\n';
  }

  void write_json(const std::string& name, const nlohmann::ordered_json& j) {
    write(name, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  }

  void lap(const std::string& stage) {
    const auto now = Clock::now();
    timings_.emplace_back(stage, std::chrono::duration<double>(now - last_).count());
    last_ = now;
  }

  FitOptions fit_options() const {
    FitOptions o;
    o.seed = cfg_.seed;
    o.threads = inv_.threads;
    return o;
  }

  void mesh() {
    const TriMesh m = build_mesh(cfg_.mesh);
    write(kMeshFile, [&](std::ostream& os) { write_mesh(os, m); });
    lap("mesh");
  }

  void ingest_cmd() {
    nlohmann::ordered_json report;
    const Dataset d = ingest(cfg_, &report);
    lap("ingest");
    write("dataset.csv", [&](std::ostream& os) { write_dataset(os, d); });
    write("transforms.csv", [&](std::ostream& os) { write_transforms(os, d); });
    write_json("ingest.json", report);
  }

  void simulate() {
    const SimulatedData sim = simulate_dataset(sim_config(cfg_));
    lap("simulate");
    write("dataset.csv", [&](std::ostream& os) { write_dataset(os, sim.dataset); });
    write("truth.csv", [&](std::ostream& os) { write_truth(os, sim); });
    write(kMeshFile, [&](std::ostream& os) { write_mesh(os, sim.mesh); });
  }

  struct Fitted {
    TriMesh mesh;
    ModelSpec spec;
    FitResult fit;
  };

  Fitted run_fit(const Dataset& d, const TriMesh& mesh, std::shared_ptr<const FemMatrices> fem,
                 bool range_sigma) {
    Fitted out{mesh, make_model_spec(d, mesh, std::move(fem), model_options(cfg_.model, range_sigma)), {}};
    out.fit = geolgm::fit(out.spec, fit_options());
    return out;
  }

  void fit_cmd() {
    const Dataset d = model_data(cfg_);
    const TriMesh mesh = build_mesh(cfg_.mesh);
    auto fem = std::make_shared<const FemMatrices>(assemble_fem(mesh));
    lap("prepare");
    const Fitted f = run_fit(d, mesh, fem, cfg_.model.prior.mode == "range_sigma");
    lap("fit");
    write(kSummaryFile, [&](std::ostream& os) { write_fit_summary(os, f.fit); });
    write(kFieldFile, [&](std::ostream& os) { write_field_summary(os, f.fit); });
    write(kMeshFile, [&](std::ostream& os) { write_mesh(os, mesh); });
    write_json(kFitFile, fit_record(f.fit, f.spec));
  }

  std::pair<FitResult, TriMesh> load_fit() {
    FitResult f = read_fit_artifacts(out_dir_);
    const fs::path mp = out_dir_ / kMeshFile;
    if (!readable(mp.string())) throw ConfigError("missing_artifact", "cannot read " + mp.string());
    TriMesh mesh = load_mesh(mp.string());
    return {std::move(f), std::move(mesh)};
  }

  void predict() {
    const auto [f, mesh] = load_fit();
    for (int year : cfg_.prediction_years()) {
      const GridSurface s = predict_surface(f, mesh, cfg_.predict.resolution_deg, year);
      write("surface_" + std::to_string(year) + ".csv", [&](std::ostream& os) { write_surface_csv(os, s); });
    }
    lap("predict");
  }

  void hotspot() {
    const auto [f, mesh] = load_fit();
    const double epsilon = cfg_.hotspot.epsilon.value_or(default_epsilon(f.family));
    check_epsilon(f.family, epsilon);
    for (int year : cfg_.prediction_years()) {
      const GridSurface s = predict_surface(f, mesh, cfg_.predict.resolution_deg, year);
      const HotspotSet h = find_hotspots(s, epsilon);
      write_json("hotspots_" + std::to_string(year) + ".geojson", hotspot_geojson(s, h));
    }
    lap("hotspot");
  }

  void sensitivity() {
    const Dataset d = model_data(cfg_);
    const TriMesh mesh = build_mesh(cfg_.mesh);
    auto fem = std::make_shared<const FemMatrices>(assemble_fem(mesh));
    lap("prepare");
    const Fitted a = run_fit(d, mesh, fem, false);
    lap("fit_default");
    const Fitted b = run_fit(d, mesh, fem, true);
    lap("fit_range_sigma");
    write("sensitivity.csv",
          [&](std::ostream& os) { write_sensitivity_csv(os, sensitivity_rows(a.fit, b.fit)); });
  }

  void write_manifest() {
    nlohmann::ordered_json m;
    m["tool"] = "geolgm";
    m["version"] = kToolVersion;
    m["command"] = inv_.command;
    m["seed"] = cfg_.seed;
    m["threads"] = inv_.threads;
    nlohmann::ordered_json echo = cfg_.source;
    echo["seed"] = cfg_.seed;
    m["config"] = std::move(echo);
    m["libraries"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                    std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                    std::to_string(EIGEN_MINOR_VERSION)},
                      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                            std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                            std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    m["outputs"] = outputs_;
    nlohmann::ordered_json t;
    for (const auto& [stage, seconds] : timings_) t[stage] = seconds;
    t["total"] = std::chrono::duration<double>(Clock::now() - start_).count();
    m["timings_s"] = std::move(t);
    const fs::path path = out_dir_ / ("manifest_" + inv_.command + ".json");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ResourceError("cannot write " + path.string());
    os << m.dump(2) << '\n';
    log_ << "wrote " << path.string() << '\n';
  }

  const Invocation& inv_;
  RunConfig cfg_;
  std::ostream& log_;
  fs::path out_dir_;
  Clock::time_point start_;
  Clock::time_point last_ = Clock::now();
  std::vector<std::string> outputs_;
  std::vector<std::pair<std::string, double>> timings_;
};

inline std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace detail

/// Runs one command. Failures print a single `error <class>: <message>`
/// line to `err` and return the matching exit code.
inline int run(const Invocation& inv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  try {
    if (std::find(command_names().begin(), command_names().end(), inv.command) == command_names().end()) {
      throw ConfigError("command", "unknown command '" + inv.command + "'");
    }
    if (inv.threads < 1) throw ConfigError("threads", "--threads must be at least 1");
    RunConfig cfg = load_config(inv.config_path);
    if (inv.seed) cfg.seed = *inv.seed;
    detail::Runner(inv, std::move(cfg), log).run();
    return 0;
  } catch (const Error& e) {
    err << "error " << e.error_class() << ": " << detail::one_line(e.what()) << '\n';
    return e.exit_code();
  } catch (const std::bad_alloc&) {
    err << "error resource.memory: out of memory\n";
    return static_cast<int>(ErrorKind::kResource);
  } catch (const std::exception& e) {
    err << "error numerical.internal: " << detail::one_line(e.what()) << '\n';
    return static_cast<int>(ErrorKind::kNumerical);
  }
}

}  // namespace geolgm::cli
