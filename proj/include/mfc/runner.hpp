#pragma once

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mfc/config.hpp"
#include "mfc/hjbfp.hpp"
#include "mfc/riccati.hpp"
#include "mfc/value.hpp"
#include "mfc/version.hpp"
#include "mfc/wasserstein.hpp"

namespace mfc {

// ---------------------------------------------------------------------------
// Report plumbing
// ---------------------------------------------------------------------------

// A crashed run must never leave a partial report at the final path.
inline void write_json_atomic(const json& j, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    require(out.good(), ErrorKind::io_error, "cannot open " + tmp);
    out << j.dump(2) << "\n";
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0, ErrorKind::io_error,
          "atomic rename to " + path + " failed");
}

inline json load_json(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io_error, "cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(ErrorKind::config_invalid, std::string("JSON parse error in ") + path + ": " + e.what());
  }
  return j;
}

// Recursive comparison ignoring volatile sections; used by `report diff` and
// the determinism gate.
inline bool json_equal_ignoring(const json& a, const json& b,
                                const std::set<std::string>& ignored, std::string path,
                                std::vector<std::string>& diffs) {
  if (a.is_object() && b.is_object()) {
    bool ok = true;
    std::set<std::string> keys;
    for (const auto& it : a.items()) keys.insert(it.key());
    for (const auto& it : b.items()) keys.insert(it.key());
    for (const auto& k : keys) {
      if (ignored.count(k)) continue;
      const std::string sub = path.empty() ? k : path + "." + k;
      if (!a.contains(k) || !b.contains(k)) {
        diffs.push_back("missing key " + sub);
        ok = false;
        continue;
      }
      ok = json_equal_ignoring(a[k], b[k], ignored, sub, diffs) && ok;
    }
    return ok;
  }
  if (a.dump() != b.dump()) {
    diffs.push_back(path + ": " + a.dump() + " != " + b.dump());
    return false;
  }
  return true;
}

inline void write_path_stats_csv(const FBSolution& sol, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::io_error, "cannot open " + path);
  out.precision(17);
  out << "step,time,mean_y_0,norm_y,norm_z\n";
  for (std::size_t k = 0; k < sol.Y.size(); ++k) {
    const auto mu = ensemble_mean(sol.Y[k]);
    out << k << "," << sol.grid.point(k) << "," << mu[0] << "," << h_norm(sol.Y[k]) << ","
        << h_norm(sol.Z[k]) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Individual checks. Each returns a JSON record carrying its numbers and a
// "pass" verdict against config-supplied tolerances (defaults pinned from the
// acceptance thresholds).
// ---------------------------------------------------------------------------

namespace checks {

inline json gradient_fd(const RunConfig& cfg, const json& params) {
  check_keys(params, {"name", "step", "tol", "n_particles", "n_steps"}, "check gradient_fd");
  const double step = get_num_or(params, "step", 1e-3);
  const double tol = get_num_or(params, "tol", 5e-3);
  const std::size_t np = static_cast<std::size_t>(get_num_or(params, "n_particles", 160));
  const std::size_t ns = static_cast<std::size_t>(get_num_or(params, "n_steps", 16));
  const TimeGrid grid(cfg.problem.horizon.t_start, cfg.problem.horizon.t_end, ns);
  ProblemSpec spec(cfg.problem.lambda, cfg.problem.sigma, cfg.problem.dim, grid);
  const PathLattice lat = brownian_lattice(grid, np, spec.dim, cfg.seed);
  ParticleEnsemble x = gaussian_ensemble(np, spec.dim, cfg.seed, cfg.initial_mean,
                                         cfg.initial_stddev, cfg.initial_kind != "gaussian");
  const double rel =
      gradient_fd_check(*cfg.running, *cfg.terminal, spec, x, lat, cfg.picard, step);
  json rec;
  rec["name"] = "gradient_fd";
  rec["relative_error"] = rel;
  rec["tolerance"] = tol;
  rec["pass"] = rel <= tol;
  return rec;
}

inline json dpp(const RunConfig& cfg, const json& params, const ParticleEnsemble& x,
                const PathLattice& lat) {
  check_keys(params, {"name", "h_steps", "tol_scale"}, "check dpp");
  const std::size_t h_steps =
      static_cast<std::size_t>(get_num_or(params, "h_steps", cfg.n_steps / 4.0));
  const double tol_scale = get_num_or(params, "tol_scale", 5e-3);
  const ResidualReport r =
      dpp_check(*cfg.running, *cfg.terminal, cfg.problem, x, lat, cfg.picard, h_steps);
  const double nx = h_norm(x);
  const double tol = tol_scale * (1.0 + nx * nx);
  json rec;
  rec["name"] = "dpp";
  rec["h"] = r.h;
  rec["residual"] = r.residual;
  rec["tolerance"] = tol;
  rec["pass"] = r.residual <= tol;
  return rec;
}

inline json bellman(const RunConfig& cfg, const json& params, const ParticleEnsemble& x,
                    const PathLattice& lat) {
  check_keys(params, {"name", "h_steps", "tol_scale", "min_rate", "probe_seed", "replicas",
                      "probe_draws"},
             "check bellman");
  std::vector<std::size_t> hs = {2, 4, 8};
  if (params.contains("h_steps")) {
    hs.clear();
    for (const auto& v : params["h_steps"]) hs.push_back(v.get<std::size_t>());
  }
  const double tol_scale = get_num_or(params, "tol_scale", 5e-3);
  const double min_rate = get_num_or(params, "min_rate", 0.4);
  const std::uint64_t probe_seed =
      static_cast<std::uint64_t>(get_num_or(params, "probe_seed", double(cfg.seed + 1000)));
  const std::size_t replicas = static_cast<std::size_t>(get_num_or(params, "replicas", 1));
  const std::size_t probe_draws = static_cast<std::size_t>(get_num_or(params, "probe_draws", 4));
  const ResidualReport r = bellman_residual(*cfg.running, *cfg.terminal, cfg.problem, x, lat,
                                            cfg.picard, hs, probe_seed, replicas, probe_draws);
  const double nx = h_norm(x);
  const double tol = tol_scale * (1.0 + nx * nx);
  json rec;
  rec["name"] = "bellman";
  rec["h"] = r.h;
  rec["residual"] = r.residual;
  rec["residuals"] = r.residuals;
  rec["h_values"] = r.h_values;
  rec["tolerance"] = tol;
  bool pass = r.residual <= tol;
  if (r.rate_estimate) {
    rec["rate_estimate"] = *r.rate_estimate;
    pass = pass && (*r.rate_estimate >= min_rate);
    rec["min_rate"] = min_rate;
  }
  rec["pass"] = pass;
  return rec;
}

inline std::vector<ParticleEnsemble> master_directions(const RunConfig& cfg,
                                                       const ParticleEnsemble& x,
                                                       const ParticleEnsemble& u0,
                                                       std::size_t n_bumps) {
  std::vector<ParticleEnsemble> dirs;
  if (h_norm(u0) > 1e-12) dirs.push_back(u0);
  if (h_norm(x) > 1e-12) dirs.push_back(x);
  const auto perm = seeded_permutation(x.n_particles, cfg.seed, 31);
  for (std::size_t b = 0; b < n_bumps; ++b) {
    ParticleEnsemble e(x.n_particles, x.dim);
    e.at(perm[b], b % x.dim) = static_cast<double>(x.n_particles);
    dirs.push_back(std::move(e));
  }
  return dirs;
}

inline json master(const RunConfig& cfg, const json& params, const ParticleEnsemble& x,
                   const PathLattice& lat, const FBSolution& sol) {
  check_keys(params, {"name", "h_steps", "tol", "n_bump_directions", "probe_seed"},
             "check master");
  const std::size_t h_steps = static_cast<std::size_t>(get_num_or(params, "h_steps", 2));
  const double tol = get_num_or(params, "tol", 5e-3);
  const std::size_t n_bumps =
      static_cast<std::size_t>(get_num_or(params, "n_bump_directions", 4));
  const std::uint64_t probe_seed =
      static_cast<std::uint64_t>(get_num_or(params, "probe_seed", double(cfg.seed + 2000)));
  const auto dirs = master_directions(cfg, x, sol.Z[0], n_bumps);
  const ResidualReport r = master_residual(*cfg.running, *cfg.terminal, cfg.problem, x, lat,
                                           cfg.picard, h_steps, dirs, probe_seed);
  json rec;
  rec["name"] = "master";
  rec["h"] = r.h;
  rec["residual"] = r.residual;
  rec["tolerance"] = tol;
  rec["pass"] = r.residual <= tol;
  return rec;
}

inline json correspondence(const RunConfig& cfg, const json& params) {
  check_keys(params,
             {"name", "n_triples", "n_particles", "sym_tol", "gamma_tol", "grad_fd_tol",
              "taylor_tol", "taylor_eps", "taylor_ratio_min", "fd_step_scale"},
             "check correspondence");
  const std::size_t n_triples = static_cast<std::size_t>(get_num_or(params, "n_triples", 100));
  const std::size_t np = static_cast<std::size_t>(get_num_or(params, "n_particles", 256));
  const double sym_tol = get_num_or(params, "sym_tol", 1e-10);
  const double gamma_tol = get_num_or(params, "gamma_tol", 1e-12);
  const double grad_fd_tol = get_num_or(params, "grad_fd_tol", 1e-4);
  const double taylor_tol = get_num_or(params, "taylor_tol", 1e-10);
  const double taylor_eps = get_num_or(params, "taylor_eps", 0.1);
  const double taylor_ratio_min = get_num_or(params, "taylor_ratio_min", 5.6);
  const double fd_step_scale = get_num_or(params, "fd_step_scale", 1e-4);

  auto draw = [&](std::uint64_t tag, std::uint64_t salt) {
    ParticleEnsemble e(np, cfg.problem.dim);
    for (std::size_t i = 0; i < np; ++i)
      for (std::size_t c = 0; c < cfg.problem.dim; ++c)
        e.at(i, c) = standard_normal(cfg.seed ^ salt, RngStream::test, tag, i, c);
    return e;
  };

  json rec;
  rec["name"] = "correspondence";
  bool pass = true;
  double worst_sym = 0.0, worst_gamma = 0.0, worst_grad = 0.0, worst_taylor = 0.0;
  for (const FunctionalPtr& f : {cfg.running, cfg.terminal}) {
    for (std::size_t trial = 0; trial < n_triples; ++trial) {
      const ParticleEnsemble x = draw(trial, 0x11);
      const ParticleEnsemble z = draw(trial, 0x22);
      const ParticleEnsemble y = draw(trial, 0x33);
      const double bzy = bilinear_B(*f, x, z, y);
      const double byz = bilinear_B(*f, x, y, z);
      worst_sym = std::max(worst_sym, std::abs(bzy - byz) / (1.0 + std::abs(bzy)));
      const double gz = h_inner(gamma_action(*f, x, z), y);
      worst_gamma = std::max(worst_gamma, std::abs(gz - bzy) / (1.0 + std::abs(bzy)));
    }
    const ParticleEnsemble x = draw(7, 0x44);
    const ParticleEnsemble g = grad_F(*f, x);
    const double step = fd_step_scale * (1.0 + h_norm(x));
    const ParticleEnsemble gfd = fd_gateaux_grad(*f, x, step);
    worst_grad = std::max(worst_grad, h_norm(g - gfd) / (1.0 + h_norm(g)));
    const ParticleEnsemble y = draw(8, 0x55);
    if (f->constant_hessian()) {
      worst_taylor =
          std::max(worst_taylor, second_order_taylor_residual(*f, x, y, taylor_eps));
    } else {
      const double r1 = second_order_taylor_residual(*f, x, y, taylor_eps);
      const double r2 = second_order_taylor_residual(*f, x, y, taylor_eps / 2.0);
      const double ratio = (r2 > 1e-300) ? r1 / r2 : taylor_ratio_min;
      rec["taylor_ratio"] = ratio;
      pass = pass && ratio >= taylor_ratio_min;
    }
  }
  rec["worst_symmetry"] = worst_sym;
  rec["worst_gamma_consistency"] = worst_gamma;
  rec["worst_grad_fd"] = worst_grad;
  rec["worst_taylor_residual"] = worst_taylor;
  rec["sym_tol"] = sym_tol;
  rec["gamma_tol"] = gamma_tol;
  rec["grad_fd_tol"] = grad_fd_tol;
  rec["taylor_tol"] = taylor_tol;
  pass = pass && worst_sym <= sym_tol && worst_gamma <= gamma_tol && worst_grad <= grad_fd_tol &&
         worst_taylor <= taylor_tol;
  rec["pass"] = pass;
  return rec;
}

inline json hjbfp_compare(const RunConfig& cfg, const json& params, const ParticleEnsemble& x,
                          const PathLattice& lat) {
  check_keys(params,
             {"name", "nx", "n_time", "pad_std", "fp_tol", "fp_damping", "fp_max_iters",
              "value_tol_rel", "grad_tol_scale", "weak_tol_rel", "mass_tol", "mixture_shift"},
             "check hjbfp_compare");
  require(cfg.problem.dim == 1, ErrorKind::dimension_unsupported, "hjbfp_compare is 1D only");
  const std::size_t nx = static_cast<std::size_t>(get_num_or(params, "nx", 401));
  const std::size_t n_time = static_cast<std::size_t>(get_num_or(params, "n_time", 2048));
  const double pad = get_num_or(params, "pad_std", 6.0);
  const double fp_tol = get_num_or(params, "fp_tol", 1e-9);
  const double fp_damping = get_num_or(params, "fp_damping", 0.8);
  const std::size_t fp_iters = static_cast<std::size_t>(get_num_or(params, "fp_max_iters", 60));
  const double value_tol = get_num_or(params, "value_tol_rel", 0.02);
  const double grad_tol = get_num_or(params, "grad_tol_scale", 5e-3);
  const double weak_tol = get_num_or(params, "weak_tol_rel", 0.02);
  const double mass_tol = get_num_or(params, "mass_tol", 1e-10);
  const double shift = get_num_or(params, "mixture_shift", 0.5);

  const auto mu = ensemble_mean(x);
  const Mat cov = ensemble_covariance(x);
  const double sd0 = std::sqrt(cov(0, 0));
  const double s0 = cfg.problem.sigma(0, 0);
  const double horizon = cfg.problem.horizon.horizon();
  const double reach = std::sqrt(sd0 * sd0 + s0 * s0 * horizon);
  const Grid1D grid(mu[0] - pad * reach - std::abs(shift), mu[0] + pad * reach + std::abs(shift),
                    nx);
  const TimeGrid tg(cfg.problem.horizon.t_start, cfg.problem.horizon.t_end, n_time);
  const auto m0 = gaussian_density(grid, mu[0], sd0);
  const HjbFpSolution gsol = hjbfp_fixed_point(*cfg.running, *cfg.terminal, cfg.problem, grid, tg,
                                               m0, fp_damping, fp_tol, fp_iters);
  const CrossValidationReport r = cross_validate(*cfg.running, *cfg.terminal, cfg.problem, x, lat,
                                                 cfg.picard, gsol, shift, cfg.seed);
  json rec;
  rec["name"] = "hjbfp_compare";
  rec["value_particle"] = r.value_particle;
  rec["value_grid"] = r.value_grid;
  rec["value_rel_gap"] = r.value_rel_gap;
  rec["gradient_sup_gap"] = r.gradient_sup_gap;
  rec["weak_derivative_particle"] = r.weak_derivative_particle;
  rec["weak_derivative_grid"] = r.weak_derivative_grid;
  rec["weak_derivative_rel_gap"] = r.weak_derivative_rel_gap;
  rec["mass_drift"] = std::max(std::abs(r.min_mass - 1.0), std::abs(r.max_mass - 1.0));
  rec["fp_iterations"] = gsol.iterations;
  rec["value_tol_rel"] = value_tol;
  rec["grad_tol_scale"] = grad_tol;
  rec["weak_tol_rel"] = weak_tol;
  rec["mass_tol"] = mass_tol;
  rec["pass"] = r.value_rel_gap <= value_tol && r.gradient_sup_gap <= grad_tol &&
                r.weak_derivative_rel_gap <= weak_tol &&
                rec["mass_drift"].get<double>() <= mass_tol;
  return rec;
}

inline json bounds_validation(const RunConfig& cfg, const json& params) {
  check_keys(params, {"name", "n_trials"}, "check bounds_validation");
  const std::size_t n_trials = static_cast<std::size_t>(get_num_or(params, "n_trials", 50));
  const BoundsReport rr =
      validate_bounds(*cfg.running, cfg.bounds, false, n_trials, cfg.seed ^ 0x1001);
  const BoundsReport rt =
      validate_bounds(*cfg.terminal, cfg.bounds, true, n_trials, cfg.seed ^ 0x2002);
  json rec;
  rec["name"] = "bounds_validation";
  rec["running_worst_lipschitz"] = rr.worst_lipschitz_ratio;
  rec["running_worst_convexity_margin"] = rr.worst_convexity_margin;
  rec["terminal_worst_lipschitz"] = rt.worst_lipschitz_ratio;
  rec["terminal_worst_convexity_margin"] = rt.worst_convexity_margin;
  json viol = json::array();
  for (const auto& v : rr.violations) viol.push_back("running: " + v);
  for (const auto& v : rt.violations) viol.push_back("terminal: " + v);
  rec["violations"] = viol;
  rec["pass"] = rr.ok() && rt.ok();
  return rec;
}

}  // namespace checks

// ---------------------------------------------------------------------------
// run / suite
// ---------------------------------------------------------------------------

struct RunOutcome {
  int exit_code = 0;
  json report;
  std::string report_path;
};

inline std::string resolve_output_dir(const RunConfig& cfg) {
  if (const char* env = std::getenv("MFCLAB_OUTPUT_DIR")) return env;
  return cfg.output_dir;
}

inline RunOutcome run_config(const RunConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const auto t_begin = clock::now();
  RunOutcome out;
  json& report = out.report;
  report["schema_version"] = kReportSchemaVersion;
  report["config"] = cfg.raw;
  json results;
  results["lambda_T"] = lambda_T(cfg.problem.lambda, cfg.problem.horizon.horizon(), cfg.bounds);

  const std::string dir = resolve_output_dir(cfg);
  std::filesystem::create_directories(dir);
  out.report_path = dir + "/report.json";

  ParticleEnsemble x;
  PathLattice lat;
  FBSolution sol;
  bool solved = false;
  try {
    x = build_initial_ensemble(cfg);
    lat = build_lattice(cfg, x);
    sol = solve_optimal(*cfg.running, *cfg.terminal, cfg.problem, x, lat, cfg.picard);
    solved = true;
    json s;
    s["iterations"] = sol.iterations;
    s["final_gap"] = sol.final_gap;
    s["value"] = value_from_solution(*cfg.running, *cfg.terminal, cfg.problem, sol);
    s["gradient_norm"] = h_norm(sol.Z[0]);
    s["initial_norm"] = h_norm(x);
    results["solver"] = s;
    write_path_stats_csv(sol, dir + "/path_stats.csv");
  } catch (const Error& e) {
    results["solver_failure"] = {{"kind", to_string(e.kind())}, {"what", e.what()}};
    report["results"] = results;
    report["versions"] = {{"mfclab", kVersion}};
    report["timings"] = {{"total_seconds",
                          std::chrono::duration<double>(clock::now() - t_begin).count()}};
    write_json_atomic(report, out.report_path);
    out.exit_code = 3;
    return out;
  }

  bool all_pass = true;
  json check_records = json::array();
  for (const CheckRequest& req : cfg.checks) {
    json rec;
    try {
      if (req.name == "gradient_fd") rec = checks::gradient_fd(cfg, req.params);
      else if (req.name == "dpp") rec = checks::dpp(cfg, req.params, x, lat);
      else if (req.name == "bellman") rec = checks::bellman(cfg, req.params, x, lat);
      else if (req.name == "master") rec = checks::master(cfg, req.params, x, lat, sol);
      else if (req.name == "correspondence") rec = checks::correspondence(cfg, req.params);
      else if (req.name == "hjbfp_compare") rec = checks::hjbfp_compare(cfg, req.params, x, lat);
      else if (req.name == "bounds_validation") rec = checks::bounds_validation(cfg, req.params);
    } catch (const Error& e) {
      results["solver_failure"] = {{"kind", to_string(e.kind())},
                                   {"what", e.what()},
                                   {"during_check", req.name}};
      report["results"] = results;
      report["versions"] = {{"mfclab", kVersion}};
      report["timings"] = {{"total_seconds",
                            std::chrono::duration<double>(clock::now() - t_begin).count()}};
      write_json_atomic(report, out.report_path);
      out.exit_code = 3;
      return out;
    }
    all_pass = all_pass && rec["pass"].get<bool>();
    check_records.push_back(std::move(rec));
  }
  results["checks"] = check_records;
  results["all_pass"] = all_pass && solved;
  report["results"] = results;
  report["versions"] = {{"mfclab", kVersion}};
  report["timings"] = {{"total_seconds",
                        std::chrono::duration<double>(clock::now() - t_begin).count()}};
  write_json_atomic(report, out.report_path);
  out.exit_code = all_pass ? 0 : 1;
  return out;
}

inline RunOutcome run_config_file(const std::string& path) {
  RunOutcome out;
  RunConfig cfg;
  try {
    cfg = parse_run_config(load_json(path));
  } catch (const Error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    out.exit_code = 2;
    return out;
  }
  return run_config(cfg);
}

// Manifest: {"runs": ["a.json", "b.json", ...]}; aggregates a summary table.
inline int run_suite(const std::string& manifest_path, const std::string& summary_dir) {
  json manifest;
  try {
    manifest = load_json(manifest_path);
    check_keys(manifest, {"runs"}, "manifest");
  } catch (const Error& e) {
    std::fprintf(stderr, "manifest error: %s\n", e.what());
    return 2;
  }
  std::filesystem::create_directories(summary_dir);
  json summary = json::array();
  std::ofstream csv(summary_dir + "/suite_summary.csv");
  csv << "config,exit_code,all_pass\n";
  int worst = 0;
  if (manifest.contains("runs")) {
    for (const auto& entry : manifest["runs"]) {
      const std::string cfg_path = entry.get<std::string>();
      const RunOutcome o = run_config_file(cfg_path);
      const bool pass = o.exit_code == 0;
      summary.push_back({{"config", cfg_path}, {"exit_code", o.exit_code}, {"pass", pass}});
      csv << cfg_path << "," << o.exit_code << "," << (pass ? "true" : "false") << "\n";
      worst = std::max(worst, o.exit_code);
      std::printf("%-50s exit=%d %s\n", cfg_path.c_str(), o.exit_code,
                  pass ? "PASS" : "FAIL");
    }
  }
  write_json_atomic(json{{"runs", summary}}, summary_dir + "/suite_summary.json");
  return worst;
}

inline int report_diff(const std::string& a_path, const std::string& b_path) {
  const json a = load_json(a_path);
  const json b = load_json(b_path);
  std::vector<std::string> diffs;
  const bool same = json_equal_ignoring(a, b, {"timings", "versions"}, "", diffs);
  for (const auto& d : diffs) std::printf("diff: %s\n", d.c_str());
  if (same) std::printf("reports match (timings/versions ignored)\n");
  return same ? 0 : 1;
}

}  // namespace mfc
