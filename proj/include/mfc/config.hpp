#pragma once

#include <json.hpp>

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "mfc/common.hpp"
#include "mfc/ensemble.hpp"
#include "mfc/fbsde.hpp"
#include "mfc/functional.hpp"
#include "mfc/problem.hpp"

namespace mfc {

using nlohmann::json;

// Unknown keys are hard errors: a misspelled tolerance must not silently fall
// back to a default.
inline void check_keys(const json& obj, const std::set<std::string>& allowed,
                       const std::string& where) {
  require(obj.is_object(), ErrorKind::config_invalid, where + " must be an object");
  for (const auto& item : obj.items())
    require(allowed.count(item.key()) > 0, ErrorKind::config_invalid,
            "unknown key '" + item.key() + "' in " + where);
}

inline double get_num(const json& obj, const std::string& key, const std::string& where) {
  require(obj.contains(key), ErrorKind::config_invalid, where + " is missing '" + key + "'");
  require(obj[key].is_number(), ErrorKind::config_invalid, where + "." + key + " must be a number");
  return obj[key].get<double>();
}

inline double get_num_or(const json& obj, const std::string& key, double fallback) {
  if (!obj.contains(key)) return fallback;
  require(obj[key].is_number(), ErrorKind::config_invalid, key + " must be a number");
  return obj[key].get<double>();
}

namespace detail {

inline Mat parse_matrix(const json& v, std::size_t dim, const std::string& where) {
  if (v.is_number()) return Mat::identity(dim, v.get<double>());
  require(v.is_array() && v.size() == dim, ErrorKind::config_invalid,
          where + " must be a scalar or a dim x dim matrix");
  Mat m(dim, dim);
  for (std::size_t r = 0; r < dim; ++r) {
    require(v[r].is_array() && v[r].size() == dim, ErrorKind::config_invalid,
            where + " row size mismatch");
    for (std::size_t c = 0; c < dim; ++c) m(r, c) = v[r][c].get<double>();
  }
  return m;
}

inline std::vector<double> parse_vector(const json& v, std::size_t dim, const std::string& where) {
  if (v.is_number()) return std::vector<double>(dim, v.get<double>());
  require(v.is_array() && v.size() == dim, ErrorKind::config_invalid,
          where + " must be a scalar or a dim-vector");
  std::vector<double> out(dim);
  for (std::size_t c = 0; c < dim; ++c) out[c] = v[c].get<double>();
  return out;
}

}  // namespace detail

// Catalog entries are addressable by name + parameter block.
inline FunctionalPtr make_functional(const json& spec, std::size_t dim,
                                     const std::string& where) {
  require(spec.is_object() && spec.contains("name"), ErrorKind::config_invalid,
          where + " must carry a catalog name");
  const std::string name = spec["name"].get<std::string>();
  if (name == "zero") {
    check_keys(spec, {"name"}, where);
    return std::make_shared<ZeroFunctional>(dim);
  }
  if (name == "quadratic") {
    check_keys(spec, {"name", "Q", "b", "S", "kappa"}, where);
    const Mat q = detail::parse_matrix(spec.value("Q", json(0.0)), dim, where + ".Q");
    const auto b = detail::parse_vector(spec.value("b", json(0.0)), dim, where + ".b");
    const Mat s = detail::parse_matrix(spec.value("S", json(0.0)), dim, where + ".S");
    const double kappa = get_num_or(spec, "kappa", 0.0);
    return std::make_shared<QuadraticMeanField>("quadratic", q, b, s, kappa);
  }
  if (name == "stress") {
    check_keys(spec, {"name", "q", "alpha", "gamma"}, where);
    return std::make_shared<StressCosine>(dim, get_num_or(spec, "q", 0.0),
                                          get_num_or(spec, "alpha", 1.0),
                                          get_num_or(spec, "gamma", 0.3));
  }
  fail(ErrorKind::config_invalid, where + ": unknown catalog entry '" + name + "'");
}

struct CheckRequest {
  std::string name;
  json params;
};

struct RunConfig {
  json raw;  // normalized echo for the report

  FunctionalPtr running;
  FunctionalPtr terminal;
  ProblemSpec problem;
  FunctionalBounds bounds;

  std::size_t n_steps = 64;
  std::size_t n_particles = 4096;
  std::uint64_t seed = 1;

  std::string initial_kind = "gaussian";
  bool antithetic = false;
  std::vector<double> initial_mean;
  std::vector<double> initial_stddev;
  std::vector<std::vector<double>> initial_atoms;

  PicardConfig picard;
  std::vector<CheckRequest> checks;
  std::string output_dir = "out";
};

inline RunConfig parse_run_config(const json& j) {
  check_keys(j, {"problem", "discretization", "solver", "checks", "output"}, "config");
  RunConfig cfg;
  cfg.raw = j;

  require(j.contains("problem"), ErrorKind::config_invalid, "config needs 'problem'");
  const json& p = j["problem"];
  check_keys(p, {"functional", "terminal", "lambda", "sigma", "dim", "t", "T", "bounds"},
             "problem");
  const std::size_t dim = static_cast<std::size_t>(get_num_or(p, "dim", 1.0));
  require(dim >= 1, ErrorKind::config_invalid, "dim must be >= 1");
  require(p.contains("functional") && p.contains("terminal"), ErrorKind::config_invalid,
          "problem needs 'functional' and 'terminal'");
  cfg.running = make_functional(p["functional"], dim, "problem.functional");
  cfg.terminal = make_functional(p["terminal"], dim, "problem.terminal");
  const double lambda = get_num(p, "lambda", "problem");
  const double t0 = get_num_or(p, "t", 0.0);
  const double t1 = get_num(p, "T", "problem");

  require(j.contains("discretization"), ErrorKind::config_invalid, "config needs 'discretization'");
  const json& d = j["discretization"];
  check_keys(d, {"n_steps", "n_particles", "seed", "initial", "antithetic"}, "discretization");
  if (d.contains("antithetic")) {
    require(d["antithetic"].is_boolean(), ErrorKind::config_invalid,
            "antithetic must be a boolean");
    cfg.antithetic = d["antithetic"].get<bool>();
  }
  cfg.n_steps = static_cast<std::size_t>(get_num(d, "n_steps", "discretization"));
  cfg.n_particles = static_cast<std::size_t>(get_num(d, "n_particles", "discretization"));
  require(d.contains("seed"), ErrorKind::config_invalid,
          "seed is mandatory (no wall-clock seeding)");
  cfg.seed = d["seed"].get<std::uint64_t>();

  const TimeGrid grid(t0, t1, cfg.n_steps);
  const Mat sigma = detail::parse_matrix(p.value("sigma", json(0.0)), dim, "problem.sigma");
  cfg.problem = ProblemSpec(lambda, sigma, dim, grid);

  if (p.contains("bounds")) {
    const json& b = p["bounds"];
    check_keys(b, {"c", "c_T", "c_prime", "c_T_prime", "delta"}, "problem.bounds");
    cfg.bounds.c = get_num_or(b, "c", 0.0);
    cfg.bounds.c_T = get_num_or(b, "c_T", 0.0);
    cfg.bounds.c_prime = get_num_or(b, "c_prime", 0.0);
    cfg.bounds.c_T_prime = get_num_or(b, "c_T_prime", 0.0);
    cfg.bounds.delta = get_num_or(b, "delta", 1.0);
  } else {
    cfg.bounds = pair_bounds(*cfg.running, *cfg.terminal);
  }

  if (d.contains("initial")) {
    const json& ini = d["initial"];
    check_keys(ini, {"kind", "mean", "stddev", "atoms"}, "discretization.initial");
    cfg.initial_kind = ini.value("kind", std::string("gaussian"));
    require(cfg.initial_kind == "gaussian" || cfg.initial_kind == "gaussian_stratified" ||
                cfg.initial_kind == "atoms",
            ErrorKind::config_invalid, "unknown initial ensemble kind " + cfg.initial_kind);
    if (cfg.initial_kind == "atoms") {
      require(ini.contains("atoms"), ErrorKind::config_invalid, "initial.atoms missing");
      for (const auto& row : ini["atoms"]) {
        std::vector<double> a;
        if (row.is_number()) a.push_back(row.get<double>());
        else
          for (const auto& v : row) a.push_back(v.get<double>());
        require(a.size() == dim, ErrorKind::config_invalid, "atom dim mismatch");
        cfg.initial_atoms.push_back(std::move(a));
      }
    } else {
      cfg.initial_mean = detail::parse_vector(ini.value("mean", json(0.0)), dim, "initial.mean");
      cfg.initial_stddev =
          detail::parse_vector(ini.value("stddev", json(1.0)), dim, "initial.stddev");
    }
  } else {
    cfg.initial_mean.assign(dim, 0.0);
    cfg.initial_stddev.assign(dim, 1.0);
  }

  if (j.contains("solver")) {
    const json& s = j["solver"];
    check_keys(s, {"max_iters", "tol", "damping", "regression"}, "solver");
    cfg.picard.max_iters = static_cast<std::size_t>(get_num_or(s, "max_iters", 200));
    cfg.picard.tol = get_num_or(s, "tol", 1e-8);
    cfg.picard.damping = get_num_or(s, "damping", 0.5);
    require(cfg.picard.tol > 0.0, ErrorKind::config_invalid, "tol must be positive");
    require(cfg.picard.damping > 0.0 && cfg.picard.damping <= 1.0, ErrorKind::config_invalid,
            "damping must lie in (0, 1]");
    if (s.contains("regression")) {
      const json& r = s["regression"];
      check_keys(r, {"degree", "ridge", "mode"}, "solver.regression");
      cfg.picard.regression.degree = static_cast<std::size_t>(get_num_or(r, "degree", 2));
      cfg.picard.regression.ridge = get_num_or(r, "ridge", 1e-10);
      const std::string mode = r.value("mode", std::string("regression"));
      if (mode == "regression") cfg.picard.regression.mode = ConditionalMode::regression;
      else if (mode == "exact_nested") cfg.picard.regression.mode = ConditionalMode::exact_nested;
      else fail(ErrorKind::config_invalid, "unknown regression mode " + mode);
    }
  }
  cfg.picard.bounds = cfg.bounds;

  if (j.contains("checks")) {
    require(j["checks"].is_array(), ErrorKind::config_invalid, "checks must be an array");
    const std::set<std::string> known = {"gradient_fd",    "dpp",           "bellman", "master",
                                         "correspondence", "hjbfp_compare", "bounds_validation"};
    for (const auto& c : j["checks"]) {
      require(c.is_object() && c.contains("name"), ErrorKind::config_invalid,
              "each check needs a name");
      const std::string name = c["name"].get<std::string>();
      require(known.count(name) > 0, ErrorKind::config_invalid, "unknown check '" + name + "'");
      cfg.checks.push_back({name, c});
    }
  }

  if (j.contains("output")) {
    check_keys(j["output"], {"dir"}, "output");
    cfg.output_dir = j["output"].value("dir", std::string("out"));
  }
  return cfg;
}

inline ParticleEnsemble build_initial_ensemble(const RunConfig& cfg) {
  const std::size_t dim = cfg.problem.dim;
  if (cfg.initial_kind == "atoms") {
    require(cfg.initial_atoms.size() >= 2, ErrorKind::config_invalid,
            "atoms initial ensemble needs >= 2 atoms");
    ParticleEnsemble e(cfg.initial_atoms.size(), dim);
    for (std::size_t i = 0; i < cfg.initial_atoms.size(); ++i)
      for (std::size_t c = 0; c < dim; ++c) e.at(i, c) = cfg.initial_atoms[i][c];
    return e;
  }
  if (cfg.antithetic) {
    require(cfg.n_particles % 2 == 0, ErrorKind::config_invalid,
            "antithetic runs need an even particle count");
    return duplicate_into_pairs(gaussian_ensemble(cfg.n_particles / 2, dim, cfg.seed,
                                                  cfg.initial_mean, cfg.initial_stddev,
                                                  cfg.initial_kind == "gaussian_stratified"));
  }
  return gaussian_ensemble(cfg.n_particles, dim, cfg.seed, cfg.initial_mean, cfg.initial_stddev,
                           cfg.initial_kind == "gaussian_stratified");
}

inline PathLattice build_lattice(const RunConfig& cfg, const ParticleEnsemble& x) {
  if (cfg.antithetic)
    return brownian_lattice_antithetic(cfg.problem.horizon, x.n_particles, cfg.problem.dim,
                                       cfg.seed);
  return brownian_lattice(cfg.problem.horizon, x.n_particles, cfg.problem.dim, cfg.seed);
}

}  // namespace mfc
