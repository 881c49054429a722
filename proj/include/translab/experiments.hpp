#pragma once

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "translab/errors.hpp"
#include "translab/estimators.hpp"
#include "translab/integrators.hpp"
#include "translab/model.hpp"
#include "translab/observables.hpp"
#include "translab/oracle.hpp"
#include "translab/parallel.hpp"
#include "translab/statistics.hpp"

namespace translab {

inline constexpr const char* kSchemaVersion = "1";

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

enum class ExperimentKind { OracleTable, NemdSweep, GkRun, MartingaleRun, ScalingStudy };
enum class StudyKind { None, BiasSlope, Variance, GkVariance, GkQuadrature };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::OracleTable: return "oracle-table";
    case ExperimentKind::NemdSweep: return "nemd-sweep";
    case ExperimentKind::GkRun: return "gk-run";
    case ExperimentKind::MartingaleRun: return "martingale-run";
    case ExperimentKind::ScalingStudy: return "scaling-study";
  }
  return "";
}

inline std::string to_string(StudyKind k) {
  switch (k) {
    case StudyKind::None: return "";
    case StudyKind::BiasSlope: return "bias-slope";
    case StudyKind::Variance: return "variance";
    case StudyKind::GkVariance: return "gk-variance";
    case StudyKind::GkQuadrature: return "gk-quadrature";
  }
  return "";
}

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

/// Shortest round-trip-safe text for CSV cells.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

struct ModelSpec {
  std::string potential = "zero";
  int dim = 1;
  std::vector<double> amplitudes;
  double length = 1.0;

  PotentialModel build() const {
    if (potential == "zero") return PotentialModel::zero(dim, length);
    if (potential == "cosine1d") return PotentialModel::cosine_1d(amplitudes.at(0), length);
    return PotentialModel::separable_cosine_2d(amplitudes.at(0), amplitudes.at(1), length);
  }
};

struct ExperimentConfig {
  std::string experiment_id;
  ExperimentKind kind = ExperimentKind::NemdSweep;
  StudyKind study = StudyKind::None;
  ModelSpec model;
  PhysicalParams params;
  std::vector<double> direction;
  std::vector<std::string> schemes;
  std::string observable = "velocity";
  std::string conjugate = "conjugate_velocity";
  std::vector<double> eta_grid;
  std::vector<double> dt_grid;
  std::vector<double> horizons;
  /// Optional per-dt horizons for bias-slope studies, by scheme ("*" for
  /// all schemes).
  std::map<std::string, std::vector<double>> dt_horizons;
  int replicas = 1;
  std::uint64_t seed = 0;
  std::string output = ".";
  int workers = 1;
  double burn_in_fraction = 0.1;
  double burn_in_time = 0.0;
  int grid_n = 1024;
  std::string quadrature = "auto";
  std::string method = "replicas";
  double sample_time = 0.0;
  long aux_steps = 10'000'000;
  std::string reference = "richardson";
  std::string reference_scheme = "CBABC";
  json raw;

  static ExperimentConfig from_json(const json& j);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Hash of the result-determining content: everything but output/workers.
  std::string hash() const {
    json h = raw;
    h.erase("output");
    h.erase("workers");
    return hex64(fnv1a64(h.dump()));
  }

  void set_seed(std::uint64_t s) {
    seed = s;
    raw["seed"] = s;
  }
};

namespace detail {

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "experiment_id", "kind", "study", "model", "params", "direction",
      "scheme", "schemes", "observable", "conjugate", "eta_grid", "dt_grid",
      "horizons", "dt_horizons", "replicas", "seed", "output", "workers",
      "burn_in_fraction", "burn_in_time", "grid_n", "quadrature", "method",
      "sample_time", "aux_steps", "reference", "reference_scheme"};
  return keys;
}

template <class T>
T get_field(const json& j, const std::string& key, const std::string& field) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(field, std::string("invalid value (") + e.what() + ")");
  }
}

inline std::vector<double> get_grid(const json& j, const std::string& key) {
  if (!j.contains(key)) return {};
  if (!j.at(key).is_array()) throw ConfigError(key, "must be an array of numbers");
  std::vector<double> v;
  for (const auto& x : j.at(key)) {
    if (!x.is_number()) throw ConfigError(key, "must contain only numbers");
    v.push_back(x.get<double>());
  }
  return v;
}

inline void require_grid(const std::vector<double>& g, const std::string& name,
                         bool allow_zero = false) {
  if (g.empty()) throw ConfigError(name, "must be non-empty");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i]) || g[i] < 0.0 || (!allow_zero && g[i] == 0.0))
      throw ConfigError(name, allow_zero ? "values must be >= 0"
                                         : "values must be strictly positive");
    if (i > 0 && !(g[i] > g[i - 1]))
      throw ConfigError(name, "must be strictly increasing");
  }
}

inline bool is_overdamped_scheme(const std::string& s) { return s == "EM" || s == "MALA"; }

inline bool is_position_name(const std::string& s) {
  return s == "velocity" || s == "conjugate_velocity" || s == "cos_q" ||
         s == "sin_q" || s == "potential_grad";
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_json(const json& j) {
  using detail::get_field;
  if (!j.is_object()) throw ConfigError("<root>", "config must be an object");
  for (const auto& [k, v] : j.items())
    if (!detail::known_keys().count(k)) throw ConfigError(k, "unknown key");

  ExperimentConfig c;
  c.raw = j;
  if (!j.contains("experiment_id")) throw ConfigError("experiment_id", "missing");
  c.experiment_id = get_field<std::string>(j, "experiment_id", "experiment_id");
  if (c.experiment_id.empty()) throw ConfigError("experiment_id", "must be non-empty");
  for (char ch : c.experiment_id)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.'))
      throw ConfigError("experiment_id", "only [A-Za-z0-9._-] allowed");

  if (!j.contains("seed")) throw ConfigError("seed", "missing (no implicit seeds)");
  const json& js = j.at("seed");
  if (!js.is_number_integer() || (!js.is_number_unsigned() && js.get<std::int64_t>() < 0))
    throw ConfigError("seed", "must be a non-negative integer");
  c.seed = j.at("seed").get<std::uint64_t>();

  if (!j.contains("kind")) throw ConfigError("kind", "missing");
  const auto kind = get_field<std::string>(j, "kind", "kind");
  if (kind == "oracle-table") c.kind = ExperimentKind::OracleTable;
  else if (kind == "nemd-sweep") c.kind = ExperimentKind::NemdSweep;
  else if (kind == "gk-run") c.kind = ExperimentKind::GkRun;
  else if (kind == "martingale-run") c.kind = ExperimentKind::MartingaleRun;
  else if (kind == "scaling-study") c.kind = ExperimentKind::ScalingStudy;
  else throw ConfigError("kind", "unknown kind '" + kind + "'");

  if (c.kind == ExperimentKind::ScalingStudy) {
    if (!j.contains("study")) throw ConfigError("study", "missing for scaling-study");
    const auto st = get_field<std::string>(j, "study", "study");
    if (st == "bias-slope") c.study = StudyKind::BiasSlope;
    else if (st == "variance") c.study = StudyKind::Variance;
    else if (st == "gk-variance") c.study = StudyKind::GkVariance;
    else if (st == "gk-quadrature") c.study = StudyKind::GkQuadrature;
    else throw ConfigError("study", "unknown study '" + st + "'");
  } else if (j.contains("study")) {
    throw ConfigError("study", "only valid for scaling-study");
  }

  // Model.
  if (!j.contains("model")) throw ConfigError("model", "missing");
  const json& m = j.at("model");
  if (!m.is_object()) throw ConfigError("model", "must be an object");
  for (const auto& [k, v] : m.items())
    if (k != "potential" && k != "dim" && k != "amplitude" && k != "amplitudes" && k != "length")
      throw ConfigError("model." + k, "unknown key");
  c.model.potential = m.contains("potential")
                          ? get_field<std::string>(m, "potential", "model.potential")
                          : "zero";
  if (m.contains("length")) c.model.length = get_field<double>(m, "length", "model.length");
  if (!(c.model.length > 0.0)) throw ConfigError("model.length", "must be > 0");
  if (c.model.potential == "zero") {
    c.model.dim = m.contains("dim") ? get_field<int>(m, "dim", "model.dim") : 1;
    if (c.model.dim < 1 || c.model.dim > 3) throw ConfigError("model.dim", "must be 1, 2 or 3");
  } else if (c.model.potential == "cosine1d") {
    c.model.dim = 1;
    if (!m.contains("amplitude")) throw ConfigError("model.amplitude", "missing");
    c.model.amplitudes = {get_field<double>(m, "amplitude", "model.amplitude")};
  } else if (c.model.potential == "separable_cosine2d") {
    c.model.dim = 2;
    if (m.contains("amplitudes")) {
      c.model.amplitudes = detail::get_grid(m, "amplitudes");
      if (c.model.amplitudes.size() != 2)
        throw ConfigError("model.amplitudes", "needs two entries");
    } else if (m.contains("amplitude")) {
      const double a = get_field<double>(m, "amplitude", "model.amplitude");
      c.model.amplitudes = {a, a};
    } else {
      throw ConfigError("model.amplitudes", "missing");
    }
  } else {
    throw ConfigError("model.potential", "unknown potential '" + c.model.potential + "'");
  }
  for (double a : c.model.amplitudes)
    if (!std::isfinite(a)) throw ConfigError("model.amplitudes", "must be finite");
  const int dim = c.model.dim;

  // Physical parameters.
  c.params = PhysicalParams::unit(dim);
  if (j.contains("params")) {
    const json& p = j.at("params");
    if (!p.is_object()) throw ConfigError("params", "must be an object");
    for (const auto& [k, v] : p.items())
      if (k != "beta" && k != "gamma" && k != "mass") throw ConfigError("params." + k, "unknown key");
    if (p.contains("beta")) c.params.beta = get_field<double>(p, "beta", "params.beta");
    if (p.contains("gamma")) c.params.gamma = get_field<double>(p, "gamma", "params.gamma");
    if (p.contains("mass")) {
      c.params.mass = detail::get_grid(p, "mass");
      if (c.params.mass.size() != static_cast<std::size_t>(dim))
        throw ConfigError("params.mass", "needs one entry per dimension");
    }
  }
  if (!(c.params.beta > 0.0)) throw ConfigError("params.beta", "must be > 0");
  if (!(c.params.gamma > 0.0)) throw ConfigError("params.gamma", "must be > 0");
  for (double mm : c.params.mass)
    if (!(mm > 0.0)) throw ConfigError("params.mass", "entries must be > 0");

  c.direction.assign(static_cast<std::size_t>(dim), 0.0);
  c.direction[0] = 1.0;
  if (j.contains("direction")) {
    c.direction = detail::get_grid(j, "direction");
    if (c.direction.size() != static_cast<std::size_t>(dim))
      throw ConfigError("direction", "needs one entry per dimension");
    double n2 = 0.0;
    for (double x : c.direction) n2 += x * x;
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-12) throw ConfigError("direction", "must be a unit vector");
  }

  // Schemes.
  if (j.contains("scheme") && j.contains("schemes"))
    throw ConfigError("schemes", "give either 'scheme' or 'schemes'");
  if (j.contains("scheme")) c.schemes = {get_field<std::string>(j, "scheme", "scheme")};
  if (j.contains("schemes"))
    c.schemes = get_field<std::vector<std::string>>(j, "schemes", "schemes");
  const std::string scheme_field = j.contains("schemes") ? "schemes" : "scheme";
  for (const auto& s : c.schemes) {
    try {
      (void)parse_scheme(s);
    } catch (const std::exception& e) {
      throw ConfigError(scheme_field, "invalid scheme '" + s + "': " + e.what());
    }
    if (detail::is_overdamped_scheme(s) && dim != 1)
      throw ConfigError(scheme_field, "overdamped schemes need a 1D model");
  }

  if (j.contains("observable")) c.observable = get_field<std::string>(j, "observable", "observable");
  if (j.contains("conjugate")) c.conjugate = get_field<std::string>(j, "conjugate", "conjugate");
  c.eta_grid = detail::get_grid(j, "eta_grid");
  c.dt_grid = detail::get_grid(j, "dt_grid");
  c.horizons = detail::get_grid(j, "horizons");
  if (j.contains("dt_horizons")) {
    const json& dh = j.at("dt_horizons");
    if (dh.is_array()) {
      c.dt_horizons["*"] = detail::get_grid(j, "dt_horizons");
    } else if (dh.is_object()) {
      for (const auto& [k, v] : dh.items()) c.dt_horizons[k] = detail::get_grid(dh, k);
    } else {
      throw ConfigError("dt_horizons", "must be an array or an object of arrays by scheme");
    }
  }
  if (j.contains("replicas")) {
    if (!j.at("replicas").is_number_integer()) throw ConfigError("replicas", "must be an integer");
    c.replicas = j.at("replicas").get<int>();
  }
  if (c.replicas < 1) throw ConfigError("replicas", "must be >= 1");
  if (j.contains("output")) c.output = get_field<std::string>(j, "output", "output");
  if (j.contains("workers")) c.workers = get_field<int>(j, "workers", "workers");
  if (c.workers < 1) throw ConfigError("workers", "must be >= 1");
  if (j.contains("burn_in_fraction"))
    c.burn_in_fraction = get_field<double>(j, "burn_in_fraction", "burn_in_fraction");
  if (!(c.burn_in_fraction >= 0.0 && c.burn_in_fraction < 1.0))
    throw ConfigError("burn_in_fraction", "must be in [0, 1)");
  if (j.contains("burn_in_time")) c.burn_in_time = get_field<double>(j, "burn_in_time", "burn_in_time");
  if (!(c.burn_in_time >= 0.0)) throw ConfigError("burn_in_time", "must be >= 0");
  if (j.contains("grid_n")) c.grid_n = get_field<int>(j, "grid_n", "grid_n");
  if (c.grid_n < 256) throw ConfigError("grid_n", "must be >= 256");
  if (j.contains("quadrature")) c.quadrature = get_field<std::string>(j, "quadrature", "quadrature");
  if (c.quadrature != "auto" && c.quadrature != "rectangle" && c.quadrature != "trapezoid" &&
      c.quadrature != "both")
    throw ConfigError("quadrature", "must be auto, rectangle, trapezoid or both");
  if (j.contains("method")) c.method = get_field<std::string>(j, "method", "method");
  if (c.method != "replicas" && c.method != "correlation")
    throw ConfigError("method", "must be replicas or correlation");
  if (j.contains("sample_time")) c.sample_time = get_field<double>(j, "sample_time", "sample_time");
  if (j.contains("aux_steps")) c.aux_steps = get_field<long>(j, "aux_steps", "aux_steps");
  if (c.aux_steps < 1) throw ConfigError("aux_steps", "must be >= 1");
  if (j.contains("reference")) c.reference = get_field<std::string>(j, "reference", "reference");
  if (j.contains("reference_scheme"))
    c.reference_scheme = get_field<std::string>(j, "reference_scheme", "reference_scheme");

  // Kind-specific requirements.
  const bool overdamped = !c.schemes.empty() && detail::is_overdamped_scheme(c.schemes.front());
  for (const auto& s : c.schemes)
    if (detail::is_overdamped_scheme(s) != overdamped)
      throw ConfigError(scheme_field, "cannot mix overdamped and Langevin schemes");
  auto need_schemes = [&] {
    if (c.schemes.empty()) throw ConfigError("scheme", "missing");
  };
  auto check_observable = [&](const std::string& name, const std::string& field) {
    if (overdamped) {
      if (!detail::is_position_name(name)) throw ConfigError(field, "unknown observable '" + name + "'");
    } else if (name != "velocity" && name != "conjugate_velocity") {
      throw ConfigError(field, "Langevin runs support velocity and conjugate_velocity");
    }
  };
  auto need_single_dt = [&] {
    detail::require_grid(c.dt_grid, "dt_grid");
    if (c.dt_grid.size() != 1) throw ConfigError("dt_grid", "this study uses exactly one dt");
  };
  auto no_mala_forcing = [&] {
    for (const auto& s : c.schemes)
      if (s == "MALA") throw ConfigError(scheme_field, "MALA requires eta = 0; not valid for forced runs");
  };

  switch (c.kind) {
    case ExperimentKind::OracleTable:
      if (dim != 1) throw ConfigError("model.potential", "oracle-table needs a 1D model");
      detail::require_grid(c.eta_grid, "eta_grid", /*allow_zero=*/true);
      break;
    case ExperimentKind::NemdSweep:
      need_schemes();
      no_mala_forcing();
      check_observable(c.observable, "observable");
      detail::require_grid(c.eta_grid, "eta_grid");
      detail::require_grid(c.dt_grid, "dt_grid");
      detail::require_grid(c.horizons, "horizons");
      break;
    case ExperimentKind::GkRun:
      need_schemes();
      check_observable(c.observable, "observable");
      check_observable(c.conjugate, "conjugate");
      detail::require_grid(c.dt_grid, "dt_grid");
      detail::require_grid(c.horizons, "horizons");
      if (c.method == "correlation") {
        if (!overdamped) throw ConfigError("method", "correlation method needs an overdamped scheme");
        if (!(c.sample_time > 0.0)) throw ConfigError("sample_time", "must be > 0");
      } else if (c.replicas < 2) {
        throw ConfigError("replicas", "gk-run needs >= 2 replicas");
      }
      break;
    case ExperimentKind::MartingaleRun:
      need_schemes();
      if (!overdamped) throw ConfigError(scheme_field, "martingale-run needs an overdamped scheme");
      check_observable(c.observable, "observable");
      detail::require_grid(c.dt_grid, "dt_grid");
      detail::require_grid(c.horizons, "horizons");
      if (c.replicas < 2) throw ConfigError("replicas", "martingale-run needs >= 2 replicas");
      break;
    case ExperimentKind::ScalingStudy:
      need_schemes();
      switch (c.study) {
        case StudyKind::BiasSlope: {
          no_mala_forcing();
          check_observable(c.observable, "observable");
          detail::require_grid(c.eta_grid, "eta_grid");
          if (c.eta_grid.size() < 2) throw ConfigError("eta_grid", "needs >= 2 values for a linear fit");
          detail::require_grid(c.dt_grid, "dt_grid");
          if (c.dt_grid.size() < 3) throw ConfigError("dt_grid", "needs >= 3 values");
          if (c.dt_grid.back() < 4.0 * c.dt_grid.front() * (1.0 - 1e-12))
            throw ConfigError("dt_grid", "must span at least a factor 4");
          if (c.dt_horizons.empty()) {
            detail::require_grid(c.horizons, "horizons");
            if (c.horizons.size() != 1) throw ConfigError("horizons", "give one horizon or dt_horizons");
          } else {
            for (const auto& s : c.schemes)
              if (!c.dt_horizons.count(s) && !c.dt_horizons.count("*"))
                throw ConfigError("dt_horizons", "no horizons for scheme " + s);
            for (const auto& [k, v] : c.dt_horizons) {
              if (k != "*" && std::find(c.schemes.begin(), c.schemes.end(), k) == c.schemes.end())
                throw ConfigError("dt_horizons." + k, "not a listed scheme");
              if (v.size() != c.dt_grid.size())
                throw ConfigError("dt_horizons", "needs one entry per dt");
              for (double h : v)
                if (!(h > 0.0)) throw ConfigError("dt_horizons", "values must be strictly positive");
            }
          }
          if (c.reference == "richardson") {
            if (std::find(c.schemes.begin(), c.schemes.end(), c.reference_scheme) == c.schemes.end())
              throw ConfigError("reference_scheme", "must be one of the listed schemes");
            if (detail::is_overdamped_scheme(c.reference_scheme))
              throw ConfigError("reference_scheme", "must be a splitting scheme");
          } else if (c.reference == "oracle") {
            if (!overdamped || c.observable != "velocity")
              throw ConfigError("reference", "oracle reference needs overdamped velocity runs");
          } else {
            throw ConfigError("reference", "must be richardson or oracle");
          }
          break;
        }
        case StudyKind::Variance:
          no_mala_forcing();
          check_observable(c.observable, "observable");
          detail::require_grid(c.eta_grid, "eta_grid");
          need_single_dt();
          detail::require_grid(c.horizons, "horizons");
          if (c.replicas < 100) throw ConfigError("replicas", "variance study needs K >= 100");
          break;
        case StudyKind::GkVariance:
          check_observable(c.observable, "observable");
          check_observable(c.conjugate, "conjugate");
          need_single_dt();
          detail::require_grid(c.horizons, "horizons");
          if (c.horizons.size() < 3) throw ConfigError("horizons", "needs >= 3 values for a fit");
          if (c.replicas < 1000) throw ConfigError("replicas", "gk-variance study needs K >= 1000");
          break;
        case StudyKind::GkQuadrature:
          if (!overdamped) throw ConfigError(scheme_field, "gk-quadrature needs overdamped schemes");
          check_observable(c.observable, "observable");
          check_observable(c.conjugate, "conjugate");
          detail::require_grid(c.dt_grid, "dt_grid");
          detail::require_grid(c.horizons, "horizons");
          if (c.horizons.size() != 1) throw ConfigError("horizons", "gk-quadrature uses one lag window T");
          if (!(c.sample_time > 0.0)) throw ConfigError("sample_time", "must be > 0");
          break;
        case StudyKind::None: break;
      }
      break;
  }
  return c;
}

inline ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("parse error: ") + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Observables and runs built from a config

namespace detail {

inline double gibbs_mean_1d(const PotentialModel& model, double beta, int grid_n,
                            const std::function<double(double)>& f) {
  const auto w = gibbs_weights_1d(model, beta, static_cast<std::size_t>(grid_n));
  double s = 0.0;
  const double h = model.length() / grid_n;
  for (int i = 0; i < grid_n; ++i) s += w[static_cast<std::size_t>(i)] * f(h * i);
  return s;
}

}  // namespace detail

/// Position observable by config name; cos_q and sin_q are centered under
/// the equilibrium measure.
inline PositionObservable position_observable(const std::string& name,
                                              const ExperimentConfig& cfg,
                                              const PotentialModel& model,
                                              double eta) {
  const double f = cfg.direction.at(0);
  if (name == "velocity") return PositionObservable::drift(model, eta * f);
  if (name == "conjugate_velocity")
    return PositionObservable::conjugate(model, cfg.params.beta, f);
  if (name == "potential_grad") return PositionObservable::potential_gradient(model);
  const double k = kTwoPi / model.length();
  if (name == "cos_q")
    return PositionObservable::cosine(
        model, detail::gibbs_mean_1d(model, cfg.params.beta, cfg.grid_n,
                                     [k](double q) { return std::cos(k * q); }));
  if (name == "sin_q")
    return PositionObservable::sine(
        model, detail::gibbs_mean_1d(model, cfg.params.beta, cfg.grid_n,
                                     [k](double q) { return std::sin(k * q); }));
  throw ConfigError("observable", "unknown observable '" + name + "'");
}

template <int D>
MomentumObservable<D> momentum_observable(const std::string& name,
                                          const IntegratorRun& run) {
  if (name == "velocity") return response_velocity<D>(run.forcing, run.params);
  if (name == "conjugate_velocity")
    return conjugate_response_velocity<D>(run.forcing, run.params);
  throw ConfigError("observable", "unknown observable '" + name + "'");
}

inline IntegratorRun make_run(const ExperimentConfig& cfg, const PotentialModel& model,
                              const std::string& scheme, double dt, double eta) {
  IntegratorRun run;
  run.scheme = parse_scheme(scheme);
  run.dt = dt;
  run.forcing.eta = eta;
  run.forcing.direction = cfg.direction;
  run.params = cfg.params;
  run.model = model;
  run.seed = cfg.seed;
  return run;
}

inline long steps_for(double time, double dt) {
  return std::max(1L, std::lround(time / dt));
}

/// Wraps a cell failure with its coordinates.
template <class Fn>
auto with_cell(const std::string& where, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const NumericalError& e) {
    throw NumericalError("cell " + where + ": " + e.what());
  }
}

/// One NEMD replica of a config cell.
inline EstimatorResult run_nemd_replica(const ExperimentConfig& cfg,
                                        const PotentialModel& model,
                                        const std::string& scheme, double eta,
                                        double dt, long n_burn, long n_iter,
                                        std::uint64_t replica) {
  const IntegratorRun run = make_run(cfg, model, scheme, dt, eta);
  if (run.is_overdamped()) {
    const auto R = position_observable(cfg.observable, cfg, model, eta);
    return nemd_estimate<1>(run, R, n_burn, n_iter, replica);
  }
  return dispatch_dim(model.dim(), [&]<int D>() {
    const auto R = momentum_observable<D>(cfg.observable, run);
    return nemd_estimate<D>(run, R, n_burn, n_iter, replica);
  });
}

struct NemdCell {
  std::string scheme;
  double eta = 0.0;
  double dt = 0.0;
  double time = 0.0;
  long n_iter = 0;
  long n_burn = 0;
  EstimatorResult pooled;
  std::vector<EstimatorResult> replicas;

  std::string where() const {
    return "(scheme=" + scheme + ", eta=" + fmt(eta) + ", dt=" + fmt(dt) +
           ", t=" + fmt(time) + ")";
  }
};

/// Runs every (cell, replica) pair; the flat index decides the worker, so
/// results do not depend on the worker count.
inline void run_nemd_cells(const ExperimentConfig& cfg, const PotentialModel& model,
                           std::vector<NemdCell>& cells, int workers) {
  const std::size_t K = static_cast<std::size_t>(cfg.replicas);
  for (auto& c : cells) c.replicas.assign(K, {});
  parallel_for(cells.size() * K, workers, [&](std::size_t i) {
    NemdCell& c = cells[i / K];
    const std::size_t r = i % K;
    c.replicas[r] = with_cell(c.where(), [&] {
      return run_nemd_replica(cfg, model, c.scheme, c.eta, c.dt, c.n_burn, c.n_iter, r);
    });
  });
  for (auto& c : cells) c.pooled = pool_time_averages(c.replicas);
}

inline NemdCell make_nemd_cell(const ExperimentConfig& cfg, const std::string& scheme,
                               double eta, double dt, double time) {
  NemdCell c;
  c.scheme = scheme;
  c.eta = eta;
  c.dt = dt;
  c.time = time;
  c.n_iter = steps_for(time, dt);
  c.n_burn = static_cast<long>(std::floor(cfg.burn_in_fraction * static_cast<double>(c.n_iter)));
  return c;
}

// ---------------------------------------------------------------------------
// CSV output

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  std::size_t add(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw std::logic_error("CSV row width mismatch");
    rows_.push_back(std::move(row));
    return rows_.size() - 1;
  }

  const std::vector<std::string>& header() const noexcept { return header_; }
  std::size_t size() const noexcept { return rows_.size(); }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
      out << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline const std::vector<std::string>& nemd_columns() {
  static const std::vector<std::string> cols = {
      "experiment_id", "potential", "scheme", "beta", "gamma", "eta", "dt",
      "n_iter", "replicas", "estimate", "variance", "ci95", "seed",
      "config_hash", "horizon", "oracle"};
  return cols;
}

inline const std::vector<std::string>& gk_columns() {
  static const std::vector<std::string> cols = {
      "experiment_id", "potential", "scheme", "beta", "gamma", "dt", "T",
      "quadrature", "method", "replicas", "n_steps", "estimate", "variance",
      "ci95", "acceptance", "oracle", "seed", "config_hash"};
  return cols;
}

// ---------------------------------------------------------------------------
// Slope study helpers

struct BiasPoint {
  double dt = 0.0;
  double bias = 0.0;
  double sigma = 0.0;
  bool included = false;
};

/// Flags points whose bias is within 2 sigma of zero and fits
/// log|bias| against log dt over the rest.
inline SlopeFit bias_slope_fit(std::vector<BiasPoint>& points) {
  std::vector<double> x, y;
  for (auto& p : points) {
    p.included = std::abs(p.bias) > 2.0 * p.sigma;
    if (p.included) {
      x.push_back(p.dt);
      y.push_back(std::abs(p.bias));
    }
  }
  if (x.size() < 3)
    throw std::runtime_error("bias slope: fewer than 3 points with bias above 2 sigma");
  return fit_log_log(x, y);
}

inline ordered_json to_json(const SlopeFit& f) {
  ordered_json pts = ordered_json::array();
  for (const auto& [lx, ly] : f.points) pts.push_back({lx, ly});
  return {{"slope", f.slope}, {"intercept", f.intercept}, {"r_squared", f.r_squared},
          {"points", pts}};
}

inline ordered_json to_json(const EstimatorResult& r) {
  return {{"value", r.value},
          {"asymptotic_variance", r.asymptotic_variance},
          {"n_effective", r.n_effective},
          {"ci_halfwidth_95", r.ci_halfwidth_95},
          {"horizon", r.horizon},
          {"eta", r.eta}};
}

/// Linear combination of cell estimates with independent errors.
struct Combination {
  std::map<std::size_t, double> coef;
  void add(std::size_t cell, double c) { coef[cell] += c; }
  double value(const std::vector<double>& v) const {
    double s = 0.0;
    for (const auto& [i, c] : coef) s += c * v[i];
    return s;
  }
  double sigma(const std::vector<double>& se) const {
    double s = 0.0;
    for (const auto& [i, c] : coef) s += c * c * se[i] * se[i];
    return std::sqrt(s);
  }
};

// ---------------------------------------------------------------------------
// Experiment runner

struct ExperimentOutcome {
  ordered_json summary;
  std::vector<std::filesystem::path> files;
  /// Non-empty when a study finished but a fit could not be formed.
  std::vector<std::string> failures;
};

namespace detail {

struct Context {
  const ExperimentConfig& cfg;
  PotentialModel model;
  std::filesystem::path out_dir;
  int workers;
  std::string hash;
  ExperimentOutcome outcome;

  std::string file_name(const std::string& table) const {
    return cfg.experiment_id + "_" + table + ".csv";
  }
  void emit(const std::string& table, const CsvTable& t) {
    const auto p = out_dir / file_name(table);
    t.write(p);
    outcome.files.push_back(p);
    outcome.summary["outputs"][table] = file_name(table);
  }
  std::string seed_str() const { return std::to_string(cfg.seed); }
  std::string potential() const { return cfg.model.potential; }
};

inline bool overdamped(const ExperimentConfig& c) {
  return !c.schemes.empty() && is_overdamped_scheme(c.schemes.front());
}

/// Oracle of the NEMD response E_eta(R) / eta where one exists.
inline double nemd_oracle(const Context& ctx, double eta) {
  const auto& c = ctx.cfg;
  if (c.observable != "velocity") return std::nan("");
  if (overdamped(c))
    return steady_velocity_1d(ctx.model, eta * c.direction[0],
                              static_cast<std::size_t>(c.grid_n), c.params.beta) /
           eta;
  if (ctx.model.kind() == PotentialKind::Zero) return free_langevin_mobility(c.params);
  return std::nan("");
}

/// Oracle of the Green-Kubo integral of (observable, conjugate).
inline double gk_oracle(const Context& ctx) {
  const auto& c = ctx.cfg;
  if (overdamped(c)) {
    const auto R = position_observable(c.observable, c, ctx.model, 0.0);
    const auto S = position_observable(c.conjugate, c, ctx.model, 0.0);
    return gk_oracle_1d(ctx.model, c.params.beta, [&](double q) { return R(q); },
                        [&](double q) { return S(q); }, static_cast<std::size_t>(c.grid_n));
  }
  if (ctx.model.kind() == PotentialKind::Zero) {
    // Velocity autocorrelation of the OU momenta, integrated.
    double v = free_langevin_mobility(c.params) / c.params.beta;
    if (c.observable == "conjugate_velocity") v *= c.params.beta;
    if (c.conjugate == "conjugate_velocity") v *= c.params.beta;
    return v;
  }
  return std::nan("");
}

inline std::vector<std::string> nemd_row(const Context& ctx, const NemdCell& c,
                                         double oracle) {
  const auto& cfg = ctx.cfg;
  return {cfg.experiment_id,
          ctx.potential(),
          c.scheme,
          fmt(cfg.params.beta),
          fmt(cfg.params.gamma),
          fmt(c.eta),
          fmt(c.dt),
          std::to_string(c.n_iter),
          std::to_string(cfg.replicas),
          fmt(c.pooled.value),
          fmt(c.pooled.asymptotic_variance),
          fmt(c.pooled.ci_halfwidth_95),
          ctx.seed_str(),
          ctx.hash,
          fmt(c.pooled.horizon),
          std::isnan(oracle) ? "" : fmt(oracle)};
}

inline void run_oracle_table(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto n = static_cast<std::size_t>(c.grid_n);
  CsvTable t({"experiment_id", "potential", "beta", "eta", "grid_n", "steady_velocity",
              "response", "mobility_oracle", "gk_mobility", "seed", "config_hash"});
  const double mob = mobility_oracle_1d(ctx.model, n, c.params.beta);
  const double gk = overdamped_mobility_gk_1d(ctx.model, c.params.beta, n);
  for (double eta : c.eta_grid) {
    const double v = steady_velocity_1d(ctx.model, eta, n, c.params.beta);
    t.add({c.experiment_id, ctx.potential(), fmt(c.params.beta), fmt(eta),
           std::to_string(c.grid_n), fmt(v), eta > 0.0 ? fmt(v / eta) : "", fmt(mob),
           fmt(gk), ctx.seed_str(), ctx.hash});
  }
  ctx.emit("oracle", t);
  ctx.outcome.summary["mobility_oracle"] = mob;
  ctx.outcome.summary["gk_mobility"] = gk;
}

inline void run_nemd_sweep(Context& ctx) {
  const auto& c = ctx.cfg;
  std::vector<NemdCell> cells;
  for (const auto& s : c.schemes)
    for (double t : c.horizons)
      for (double dt : c.dt_grid)
        for (double eta : c.eta_grid) cells.push_back(make_nemd_cell(c, s, eta, dt, t));
  run_nemd_cells(c, ctx.model, cells, ctx.workers);

  CsvTable table(nemd_columns());
  ordered_json pointers = ordered_json::array();
  std::map<double, double> oracle_cache;
  for (const auto& cell : cells) {
    if (!oracle_cache.count(cell.eta)) oracle_cache[cell.eta] = nemd_oracle(ctx, cell.eta);
    const double o = oracle_cache[cell.eta];
    const auto row = table.add(nemd_row(ctx, cell, o));
    pointers.push_back({{"file", ctx.file_name("nemd")}, {"row", row}, {"scheme", cell.scheme},
                        {"eta", cell.eta}, {"dt", cell.dt}, {"t", cell.time},
                        {"estimate", to_json(cell.pooled)}, {"oracle", o}});
  }
  ctx.emit("nemd", table);
  ctx.outcome.summary["cells"] = pointers;

  ordered_json fits = ordered_json::array();
  if (c.eta_grid.size() >= 2) {
    for (const auto& s : c.schemes)
      for (double t : c.horizons)
        for (double dt : c.dt_grid) {
          std::vector<std::pair<double, EstimatorResult>> pts;
          for (const auto& cell : cells)
            if (cell.scheme == s && cell.time == t && cell.dt == dt)
              pts.emplace_back(cell.eta, cell.pooled);
          const auto fit = linear_response_fit(pts);
          fits.push_back({{"scheme", s}, {"dt", dt}, {"t", t}, {"alpha", fit.alpha},
                          {"stderr", fit.std_error}, {"chi2_per_dof", fit.chi2_per_dof}});
        }
  }
  ctx.outcome.summary["fits"] = fits;
  if (overdamped(c) && c.observable == "velocity")
    ctx.outcome.summary["mobility_oracle"] =
        mobility_oracle_1d(ctx.model, static_cast<std::size_t>(c.grid_n), c.params.beta);
  else if (ctx.model.kind() == PotentialKind::Zero && c.observable == "velocity")
    ctx.outcome.summary["mobility_oracle"] = free_langevin_mobility(c.params);
}

inline std::vector<Quadrature> quadratures_for(const ExperimentConfig& c,
                                               const IntegratorRun& run) {
  if (c.quadrature == "rectangle") return {Quadrature::Rectangle};
  if (c.quadrature == "trapezoid") return {Quadrature::Trapezoid};
  if (c.quadrature == "both") return {Quadrature::Rectangle, Quadrature::Trapezoid};
  return {default_quadrature(run)};
}

struct GkCell {
  std::string scheme;
  double dt = 0.0;
  double T = 0.0;
  Quadrature quad = Quadrature::Rectangle;
  std::string method;
  long n_steps = 0;
  double acceptance = 1.0;
  EstimatorResult result;
  std::vector<double> replica_values;
};

/// Natural Green-Kubo estimator over K replicas of one cell.
inline std::vector<double> gk_replicas_for(const Context& ctx, const IntegratorRun& run,
                                           double T, Quadrature q) {
  const auto& c = ctx.cfg;
  const long burn = c.burn_in_time > 0.0 ? steps_for(c.burn_in_time, run.dt) : 0;
  if (run.is_overdamped()) {
    const auto R = position_observable(c.observable, c, ctx.model, 0.0);
    const auto S = position_observable(c.conjugate, c, ctx.model, 0.0);
    return gk_replica_integrals<1>(run, R, S, c.replicas, T, q, burn, ctx.workers);
  }
  return dispatch_dim(ctx.model.dim(), [&]<int D>() {
    const auto R = momentum_observable<D>(c.observable, run);
    const auto S = momentum_observable<D>(c.conjugate, run);
    return gk_replica_integrals<D>(run, R, S, c.replicas, T, q, burn, ctx.workers);
  });
}

inline std::vector<GkCell> run_gk_cells(const Context& ctx, bool correlation) {
  const auto& c = ctx.cfg;
  std::vector<GkCell> cells;
  for (const auto& s : c.schemes)
    for (double dt : c.dt_grid) {
      const IntegratorRun run = make_run(c, ctx.model, s, dt, 0.0);
      for (double T : c.horizons) {
        const auto quads = quadratures_for(c, run);
        const std::string where = "(scheme=" + s + ", dt=" + fmt(dt) + ", T=" + fmt(T) + ")";
        if (correlation) {
          const long n = steps_for(c.sample_time, dt);
          const long burn = c.burn_in_time > 0.0 ? steps_for(c.burn_in_time, dt) : 0;
          const auto R = position_observable(c.observable, c, ctx.model, 0.0);
          const auto S = position_observable(c.conjugate, c, ctx.model, 0.0);
          const auto both = with_cell(where, [&] {
            return gk_correlation_estimate(run, R, S, T, n, burn);
          });
          for (Quadrature q : quads) {
            GkCell g{s, dt, T, q, "correlation", n, both.acceptance, both.get(q), {}};
            cells.push_back(g);
          }
        } else {
          for (Quadrature q : quads) {
            GkCell g{s, dt, T, q, "replicas", steps_for(T, dt), 1.0, {}, {}};
            g.replica_values = with_cell(where, [&] { return gk_replicas_for(ctx, run, T, q); });
            RunningMoments m;
            for (double v : g.replica_values) m.add(v);
            g.result = EstimatorResult::from_replicas(m.mean(), m.variance(),
                                                      static_cast<double>(c.replicas), 0.0);
            cells.push_back(std::move(g));
          }
        }
      }
    }
  return cells;
}

inline std::vector<std::string> gk_row(const Context& ctx, const GkCell& g, double oracle) {
  const auto& c = ctx.cfg;
  return {c.experiment_id,
          ctx.potential(),
          g.scheme,
          fmt(c.params.beta),
          fmt(c.params.gamma),
          fmt(g.dt),
          fmt(g.T),
          to_string(g.quad),
          g.method,
          g.method == "replicas" ? std::to_string(c.replicas) : "1",
          std::to_string(g.n_steps),
          fmt(g.result.value),
          fmt(g.result.asymptotic_variance),
          fmt(g.result.ci_halfwidth_95),
          fmt(g.acceptance),
          std::isnan(oracle) ? "" : fmt(oracle),
          ctx.seed_str(),
          ctx.hash};
}

inline void run_gk(Context& ctx) {
  const auto cells = run_gk_cells(ctx, ctx.cfg.method == "correlation");
  const double oracle = gk_oracle(ctx);
  CsvTable t(gk_columns());
  ordered_json rows = ordered_json::array();
  for (const auto& g : cells) {
    const auto i = t.add(gk_row(ctx, g, oracle));
    rows.push_back({{"file", ctx.file_name("gk")}, {"row", i}, {"scheme", g.scheme},
                    {"dt", g.dt}, {"T", g.T}, {"quadrature", to_string(g.quad)},
                    {"estimate", to_json(g.result)}});
  }
  ctx.emit("gk", t);
  ctx.outcome.summary["cells"] = rows;
  if (!std::isnan(oracle)) ctx.outcome.summary["oracle"] = oracle;
}

inline void run_martingale(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto R = position_observable(c.observable, c, ctx.model, 0.0);
  const double f = c.direction[0];
  const auto S = PositionObservable::conjugate(ctx.model, c.params.beta, f);
  const double oracle =
      gk_oracle_1d(ctx.model, c.params.beta, [&](double q) { return R(q); },
                   [&](double q) { return S(q); }, static_cast<std::size_t>(c.grid_n));
  CsvTable t({"experiment_id", "potential", "scheme", "beta", "dt", "horizon", "n_iter",
              "replicas", "r_mean", "estimate", "variance", "ci95", "oracle", "seed",
              "config_hash"});
  ordered_json cells = ordered_json::array();
  for (const auto& s : c.schemes)
    for (double dt : c.dt_grid) {
      const IntegratorRun run = make_run(c, ctx.model, s, dt, 0.0);
      const long burn = c.burn_in_time > 0.0 ? steps_for(c.burn_in_time, dt) : 0;
      const std::string where = "(scheme=" + s + ", dt=" + fmt(dt) + ")";
      const double r_mean = with_cell(where, [&] {
        return chain_mean(run, R, c.aux_steps, std::max(burn, c.aux_steps / 10));
      });
      double prev_var = std::nan("");
      for (double h : c.horizons) {
        const long n = steps_for(h, dt);
        const auto vals = with_cell(where, [&] {
          return martingale_replica_values(run, R, r_mean, n, c.replicas, burn, ctx.workers);
        });
        RunningMoments m;
        for (double v : vals) m.add(v);
        const auto res = EstimatorResult::from_replicas(m.mean(), m.variance(),
                                                        static_cast<double>(c.replicas), 0.0);
        const auto i = t.add({c.experiment_id, ctx.potential(), s, fmt(c.params.beta), fmt(dt),
                              fmt(h), std::to_string(n), std::to_string(c.replicas),
                              fmt(r_mean), fmt(res.value), fmt(res.asymptotic_variance),
                              fmt(res.ci_halfwidth_95), fmt(oracle), ctx.seed_str(), ctx.hash});
        ordered_json cell = {{"file", ctx.file_name("martingale")}, {"row", i},
                             {"scheme", s}, {"dt", dt}, {"horizon", h}, {"r_mean", r_mean},
                             {"estimate", to_json(res)},
                             {"z_score", (res.value - oracle) / res.standard_error()}};
        if (!std::isnan(prev_var)) cell["variance_ratio_to_previous"] = m.variance() / prev_var;
        prev_var = m.variance();
        cells.push_back(cell);
      }
    }
  ctx.emit("martingale", t);
  ctx.outcome.summary["cells"] = cells;
  ctx.outcome.summary["oracle"] = oracle;
}

inline void run_bias_slope(Context& ctx) {
  const auto& c = ctx.cfg;
  std::vector<NemdCell> cells;
  for (const auto& s : c.schemes)
    for (std::size_t k = 0; k < c.dt_grid.size(); ++k) {
      double t = 0.0;
      if (c.dt_horizons.empty()) t = c.horizons[0];
      else if (c.dt_horizons.count(s)) t = c.dt_horizons.at(s)[k];
      else t = c.dt_horizons.at("*")[k];
      for (double eta : c.eta_grid) cells.push_back(make_nemd_cell(c, s, eta, c.dt_grid[k], t));
    }
  run_nemd_cells(c, ctx.model, cells, ctx.workers);

  CsvTable nemd(nemd_columns());
  for (const auto& cell : cells) nemd.add(nemd_row(ctx, cell, nemd_oracle(ctx, cell.eta)));
  ctx.emit("nemd", nemd);

  // Response slope per (scheme, dt), fixed design weights so every dt
  // estimates the same functional.
  struct Fit {
    std::string scheme;
    double dt;
    LinearResponseFit fit;
  };
  std::vector<Fit> fits;
  std::vector<double> alpha, se;
  for (const auto& s : c.schemes)
    for (double dt : c.dt_grid) {
      std::vector<std::pair<double, EstimatorResult>> pts;
      for (const auto& cell : cells)
        if (cell.scheme == s && cell.dt == dt) pts.emplace_back(cell.eta, cell.pooled);
      fits.push_back({s, dt, fixed_design_response_fit(pts)});
      alpha.push_back(fits.back().fit.alpha);
      se.push_back(fits.back().fit.std_error);
    }
  auto index_of = [&](const std::string& s, double dt) {
    for (std::size_t i = 0; i < fits.size(); ++i)
      if (fits[i].scheme == s && fits[i].dt == dt) return i;
    throw std::logic_error("missing fit");
  };

  Combination ref;
  double ref_value = 0.0, ref_sigma = 0.0;
  ordered_json ref_json;
  if (c.reference == "richardson") {
    const double h1 = c.dt_grid[0], h2 = c.dt_grid[1];
    const int p = SchemeSpec::from_letters(c.reference_scheme).weak_order();
    const double rp = std::pow(h2 / h1, p);
    ref.add(index_of(c.reference_scheme, h1), rp / (rp - 1.0));
    ref.add(index_of(c.reference_scheme, h2), -1.0 / (rp - 1.0));
    ref_value = ref.value(alpha);
    ref_sigma = ref.sigma(se);
    ref_json = {{"method", "richardson"}, {"scheme", c.reference_scheme}, {"order", p},
                {"dt", {h1, h2}}, {"value", ref_value}, {"sigma", ref_sigma}};
  } else {
    ref_value = mobility_oracle_1d(ctx.model, static_cast<std::size_t>(c.grid_n), c.params.beta);
    ref_json = {{"method", "oracle"}, {"value", ref_value}, {"sigma", 0.0}};
  }
  ctx.outcome.summary["reference"] = ref_json;

  CsvTable mob({"experiment_id", "potential", "scheme", "dt", "alpha", "alpha_stderr",
                "chi2_per_dof", "reference", "bias", "bias_sigma", "ci95", "included", "seed",
                "config_hash"});
  ordered_json slope_fits = ordered_json::object();
  ordered_json fit_rows = ordered_json::array();
  for (const auto& s : c.schemes) {
    std::vector<BiasPoint> pts;
    std::vector<std::size_t> idx;
    for (double dt : c.dt_grid) {
      const std::size_t i = index_of(s, dt);
      Combination b = ref;
      for (auto& [k, v] : b.coef) v = -v;
      b.add(i, 1.0);
      pts.push_back({dt, b.value(alpha), b.sigma(se), false});
      idx.push_back(i);
    }
    ordered_json sj;
    try {
      const SlopeFit f = bias_slope_fit(pts);
      sj = to_json(f);
    } catch (const std::runtime_error& e) {
      sj = {{"error", e.what()}};
      ctx.outcome.failures.push_back(s + ": " + e.what());
    }
    ordered_json excluded = ordered_json::array();
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const auto& f = fits[idx[k]];
      if (!pts[k].included) excluded.push_back(pts[k].dt);
      mob.add({c.experiment_id, ctx.potential(), s, fmt(pts[k].dt), fmt(f.fit.alpha),
               fmt(f.fit.std_error), fmt(f.fit.chi2_per_dof), fmt(ref_value), fmt(pts[k].bias),
               fmt(pts[k].sigma), fmt(kZ95 * pts[k].sigma), pts[k].included ? "1" : "0",
               ctx.seed_str(), ctx.hash});
      fit_rows.push_back({{"scheme", s}, {"dt", pts[k].dt}, {"alpha", f.fit.alpha},
                          {"stderr", f.fit.std_error}, {"chi2_per_dof", f.fit.chi2_per_dof},
                          {"bias", pts[k].bias}, {"bias_sigma", pts[k].sigma}});
    }
    sj["excluded_dt"] = excluded;
    slope_fits[s] = sj;
  }
  ctx.emit("mobility", mob);
  ctx.outcome.summary["fits"] = fit_rows;
  ctx.outcome.summary["slope_fits"] = slope_fits;
}

inline void run_variance_study(Context& ctx) {
  const auto& c = ctx.cfg;
  const double dt = c.dt_grid[0];
  std::vector<NemdCell> cells;
  for (double t : c.horizons)
    for (double eta : c.eta_grid) cells.push_back(make_nemd_cell(c, c.schemes[0], eta, dt, t));
  run_nemd_cells(c, ctx.model, cells, ctx.workers);

  double expected = std::nan("");
  if (ctx.model.kind() == PotentialKind::Zero && !overdamped(c) && c.observable == "velocity")
    expected = 2.0 / (c.params.beta * c.params.gamma);

  CsvTable t({"experiment_id", "study", "potential", "scheme", "beta", "gamma", "eta", "dt",
              "horizon", "n_iter", "replicas", "estimate", "variance", "normalized", "ci95",
              "seed", "config_hash"});
  ordered_json rows = ordered_json::array();
  std::map<double, std::vector<double>> by_t;
  std::map<double, std::map<double, double>> var_by_eta;
  for (const auto& cell : cells) {
    RunningMoments m;
    for (const auto& r : cell.replicas) m.add(r.value);
    const double var = m.variance();
    const double horizon = cell.replicas.front().horizon;
    const double normalized = var * cell.eta * cell.eta * horizon;
    by_t[cell.time].push_back(normalized);
    var_by_eta[cell.eta][cell.time] = var;
    const auto i = t.add({c.experiment_id, "variance", ctx.potential(), cell.scheme,
                          fmt(c.params.beta), fmt(c.params.gamma), fmt(cell.eta), fmt(dt),
                          fmt(horizon), std::to_string(cell.n_iter), std::to_string(c.replicas),
                          fmt(m.mean()), fmt(var), fmt(normalized),
                          fmt(kZ95 * std::sqrt(var / c.replicas)), ctx.seed_str(), ctx.hash});
    rows.push_back({{"file", ctx.file_name("variance")}, {"row", i}, {"eta", cell.eta},
                    {"t", cell.time}, {"horizon", horizon}, {"mean", m.mean()},
                    {"replica_variance", var}, {"normalized", normalized}});
  }
  ctx.emit("variance", t);
  ctx.outcome.summary["cells"] = rows;
  ordered_json spread = ordered_json::array();
  for (const auto& [time, v] : by_t) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    spread.push_back({{"t", time}, {"max_over_min", *hi / *lo}});
  }
  ctx.outcome.summary["normalized_spread"] = spread;
  ordered_json doubling = ordered_json::array();
  for (const auto& [eta, m] : var_by_eta)
    for (const auto& [time, var] : m) {
      auto it = m.find(2.0 * time);
      if (it != m.end())
        doubling.push_back({{"eta", eta}, {"t", time}, {"variance_ratio", var / it->second}});
    }
  ctx.outcome.summary["doubling_ratios"] = doubling;
  if (!std::isnan(expected)) ctx.outcome.summary["expected_normalized"] = expected;
}

inline void run_gk_variance_study(Context& ctx) {
  const auto cells = run_gk_cells(ctx, false);
  const double oracle = gk_oracle(ctx);
  const auto& c = ctx.cfg;
  CsvTable t({"experiment_id", "study", "potential", "scheme", "beta", "gamma", "eta", "dt",
              "horizon", "n_iter", "replicas", "estimate", "variance", "normalized", "ci95",
              "seed", "config_hash"});
  std::vector<double> T, V;
  ordered_json rows = ordered_json::array();
  for (const auto& g : cells) {
    const double var = g.result.asymptotic_variance;
    T.push_back(g.T);
    V.push_back(var);
    const auto i = t.add({c.experiment_id, "gk-variance", ctx.potential(), g.scheme,
                          fmt(c.params.beta), fmt(c.params.gamma), "0", fmt(g.dt), fmt(g.T),
                          std::to_string(g.n_steps), std::to_string(c.replicas),
                          fmt(g.result.value), fmt(var), fmt(var / g.T),
                          fmt(g.result.ci_halfwidth_95), ctx.seed_str(), ctx.hash});
    rows.push_back({{"file", ctx.file_name("variance")}, {"row", i}, {"T", g.T},
                    {"quadrature", to_string(g.quad)}, {"estimate", to_json(g.result)}});
  }
  ctx.emit("variance", t);
  ctx.outcome.summary["cells"] = rows;
  if (!std::isnan(oracle)) ctx.outcome.summary["oracle"] = oracle;
  if (T.size() >= 2 && c.schemes.size() == 1 && quadratures_for(c, make_run(c, ctx.model, c.schemes[0], c.dt_grid[0], 0.0)).size() == 1) {
    const LineFit f = fit_line(T, V);
    ctx.outcome.summary["variance_fit"] = {{"slope", f.slope}, {"intercept", f.intercept},
                                           {"r_squared", f.r_squared}};
  }
}

inline void run_gk_quadrature_study(Context& ctx) {
  const auto cells = run_gk_cells(ctx, true);
  const double oracle = gk_oracle(ctx);
  CsvTable t(gk_columns());
  for (const auto& g : cells) t.add(gk_row(ctx, g, oracle));
  ctx.emit("gk", t);

  ordered_json slope_fits = ordered_json::object();
  ordered_json finest = ordered_json::array();
  std::set<std::pair<std::string, Quadrature>> series;
  for (const auto& g : cells) series.insert({g.scheme, g.quad});
  for (const auto& [s, q] : series) {
    std::vector<BiasPoint> pts;
    for (const auto& g : cells)
      if (g.scheme == s && g.quad == q)
        pts.push_back({g.dt, g.result.value - oracle, g.result.standard_error(), false});
    const std::string key = s + "-" + to_string(q);
    ordered_json sj;
    try {
      sj = to_json(bias_slope_fit(pts));
    } catch (const std::runtime_error& e) {
      sj = {{"error", e.what()}};
    }
    ordered_json excluded = ordered_json::array();
    for (const auto& p : pts)
      if (!p.included) excluded.push_back(p.dt);
    sj["excluded_dt"] = excluded;
    slope_fits[key] = sj;
    const auto& f = pts.front();
    finest.push_back({{"series", key}, {"dt", f.dt}, {"bias", f.bias}, {"sigma", f.sigma},
                      {"z_score", f.bias / f.sigma}});
  }
  ctx.outcome.summary["oracle"] = oracle;
  ctx.outcome.summary["slope_fits"] = slope_fits;
  ctx.outcome.summary["finest_dt"] = finest;
}

}  // namespace detail

/// Runs `cfg`, writing CSVs and `<id>_summary.json` into out_dir.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg,
                                        const std::filesystem::path& out_dir,
                                        int workers = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  std::filesystem::create_directories(out_dir);
  detail::Context ctx{cfg, cfg.model.build(), out_dir, std::max(1, workers), cfg.hash(), {}};
  auto& s = ctx.outcome.summary;
  s["schema_version"] = kSchemaVersion;
  s["experiment_id"] = cfg.experiment_id;
  s["kind"] = to_string(cfg.kind);
  if (cfg.study != StudyKind::None) s["study"] = to_string(cfg.study);
  s["seed"] = cfg.seed;
  s["config_hash"] = ctx.hash;
  s["outputs"] = ordered_json::object();

  switch (cfg.kind) {
    case ExperimentKind::OracleTable: detail::run_oracle_table(ctx); break;
    case ExperimentKind::NemdSweep: detail::run_nemd_sweep(ctx); break;
    case ExperimentKind::GkRun: detail::run_gk(ctx); break;
    case ExperimentKind::MartingaleRun: detail::run_martingale(ctx); break;
    case ExperimentKind::ScalingStudy:
      switch (cfg.study) {
        case StudyKind::BiasSlope: detail::run_bias_slope(ctx); break;
        case StudyKind::Variance: detail::run_variance_study(ctx); break;
        case StudyKind::GkVariance: detail::run_gk_variance_study(ctx); break;
        case StudyKind::GkQuadrature: detail::run_gk_quadrature_study(ctx); break;
        case StudyKind::None: break;
      }
      break;
  }
  if (!ctx.outcome.failures.empty()) s["failures"] = ctx.outcome.failures;
  s["wall_time_s"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  s["config"] = cfg.raw;
  const auto summary_path = out_dir / (cfg.experiment_id + "_summary.json");
  std::ofstream(summary_path) << s.dump(2) << '\n';
  ctx.outcome.files.push_back(summary_path);
  return ctx.outcome;
}

}  // namespace translab
