#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mfc/common.hpp"
#include "mfc/fbsde.hpp"
#include "mfc/functional.hpp"

namespace mfc {

struct ValueReport {
  double value = 0.0;
  ParticleEnsemble gradient;              // D_X V = Z(t)
  std::optional<double> probe_quadratic;  // ((D^2V sigma N, sigma N))
  std::size_t iterations = 0;
  double final_gap = 0.0;
};

struct ResidualReport {
  std::string kind;
  double h = 0.0;
  double residual = 0.0;
  std::optional<double> rate_estimate;
  std::vector<double> h_values;
  std::vector<double> residuals;
};

// V from formula: (1/2 lambda) sum ||Z_k||^2 dt + sum F(Y_k) dt + F_T(Y_n).
inline double value_from_solution(const Functional& F, const Functional& F_T,
                                  const ProblemSpec& spec, const FBSolution& sol) {
  const std::size_t n = sol.grid.n_steps;
  const double dt = sol.grid.dt();
  double v = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    v += (0.5 / spec.lambda * h_inner(sol.Z[k], sol.Z[k]) + eval_F(F, sol.Y[k])) * dt;
  v += eval_F(F_T, sol.Y[n]);
  return v;
}

// Per-particle contributions c_i with V = mean_i c_i (law statistics frozen);
// their spread is the bootstrap Monte Carlo error of V.
inline std::vector<double> value_per_particle(const Functional& F, const Functional& F_T,
                                              const ProblemSpec& spec, const FBSolution& sol) {
  const std::size_t n = sol.grid.n_steps;
  const std::size_t np = sol.Y[0].n_particles;
  const double dt = sol.grid.dt();
  std::vector<double> c(np, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const LawStats st = stats_of(F, sol.Y[k]);
    for (std::size_t i = 0; i < np; ++i) {
      double z2 = 0.0;
      for (std::size_t d = 0; d < sol.Y[k].dim; ++d) z2 += sol.Z[k].at(i, d) * sol.Z[k].at(i, d);
      c[i] += (0.5 / spec.lambda * z2 + F.integrand(sol.Y[k].sample(i), st)) * dt;
    }
  }
  const LawStats stT = stats_of(F_T, sol.Y[n]);
  for (std::size_t i = 0; i < np; ++i) c[i] += F_T.integrand(sol.Y[n].sample(i), stT);
  return c;
}

inline double value_mc_stderr(const Functional& F, const Functional& F_T, const ProblemSpec& spec,
                              const FBSolution& sol) {
  const auto c = value_per_particle(F, F_T, spec, sol);
  const double mu = mean_of(c);
  const double var = pairwise_sum_indexed(c.size(),
                                          [&](std::size_t i) {
                                            const double d = c[i] - mu;
                                            return d * d;
                                          }) /
                     static_cast<double>(c.size());
  return std::sqrt(var / static_cast<double>(c.size()));
}

inline ValueReport value(const Functional& F, const Functional& F_T, const ProblemSpec& spec,
                         const ParticleEnsemble& X, const PathLattice& lattice,
                         const PicardConfig& cfg) {
  const FBSolution sol = solve_optimal(F, F_T, spec, X, lattice, cfg);
  ValueReport rep;
  rep.value = value_from_solution(F, F_T, spec, sol);
  rep.gradient = sol.Z[0];
  rep.iterations = sol.iterations;
  rep.final_gap = sol.final_gap;
  return rep;
}

// V(X, T) = F_T(X) and U(X, T) = D_X F_T(X): the boundary line of both
// equations, evaluated without any solve.
inline double value_at_terminal(const Functional& F_T, const ParticleEnsemble& X) {
  return eval_F(F_T, X);
}

inline ParticleEnsemble gradient_at_terminal(const Functional& F_T, const ParticleEnsemble& X) {
  return grad_F(F_T, X);
}

// ---------------------------------------------------------------------------
// Checks
// ---------------------------------------------------------------------------

// || Z(t) - FD-Gateaux gradient of V || / (1 + ||Z(t)||), with common random
// numbers: all bumped evaluations reuse the same lattice.
inline double gradient_fd_check(const Functional& F, const Functional& F_T,
                                const ProblemSpec& spec, const ParticleEnsemble& X,
                                const PathLattice& lattice, const PicardConfig& cfg,
                                double step) {
  const ValueReport base = value(F, F_T, spec, X, lattice, cfg);
  ParticleEnsemble fd(X.n_particles, X.dim);
  ParticleEnsemble xb = X;
  const double n = static_cast<double>(X.n_particles);
  for (std::size_t i = 0; i < X.n_particles; ++i)
    for (std::size_t c = 0; c < X.dim; ++c) {
      const double orig = xb.at(i, c);
      xb.at(i, c) = orig + step;
      const double vp = value(F, F_T, spec, xb, lattice, cfg).value;
      xb.at(i, c) = orig - step;
      const double vm = value(F, F_T, spec, xb, lattice, cfg).value;
      xb.at(i, c) = orig;
      fd.at(i, c) = n * (vp - vm) / (2.0 * step);
    }
  return h_norm(base.gradient - fd) / (1.0 + h_norm(base.gradient));
}

// Optimality principle residual over [t, t+h]: the tail value is solved fresh
// from Y(t+h) at t+h on the same lattice tail.
inline ResidualReport dpp_check(const Functional& F, const Functional& F_T,
                                const ProblemSpec& spec, const ParticleEnsemble& X,
                                const PathLattice& lattice, const PicardConfig& cfg,
                                std::size_t h_steps) {
  const std::size_t n = lattice.grid.n_steps;
  require(h_steps <= n, ErrorKind::config_invalid, "dpp horizon exceeds grid");
  const FBSolution sol = solve_optimal(F, F_T, spec, X, lattice, cfg);
  const double dt = lattice.grid.dt();
  const double v_full = value_from_solution(F, F_T, spec, sol);
  ResidualReport rep;
  rep.kind = "dpp";
  rep.h = static_cast<double>(h_steps) * dt;
  if (h_steps == 0) {
    rep.residual = 0.0;
    return rep;
  }
  double head = 0.0;
  for (std::size_t k = 0; k < h_steps; ++k)
    head += (0.5 / spec.lambda * h_inner(sol.Z[k], sol.Z[k]) + eval_F(F, sol.Y[k])) * dt;
  double v_tail;
  if (h_steps == n) {
    v_tail = value_at_terminal(F_T, sol.Y[n]);
  } else {
    const PathLattice tail = lattice.tail(h_steps);
    const FBSolution tail_sol = solve_optimal(F, F_T, spec, sol.Y[h_steps], tail, cfg);
    v_tail = value_from_solution(F, F_T, spec, tail_sol);
  }
  rep.residual = std::abs(v_full - (head + v_tail));
  return rep;
}

// Bellman residual: | [V(X,t+h) - V(X,t)]/h + 1/2 probe - (1/2 lambda)
// ||D_XV||^2 + F(X) |, fitted over several h with common random numbers.
// The time-difference quotient amplifies the head-window Monte Carlo noise by
// 1/h, so the estimator averages the whole combination over independent
// lattice replicas (antithetic when the supplied lattice is) and several
// probe draws.
inline ResidualReport bellman_residual(const Functional& F, const Functional& F_T,
                                       const ProblemSpec& spec, const ParticleEnsemble& X,
                                       const PathLattice& lattice, const PicardConfig& cfg,
                                       const std::vector<std::size_t>& h_steps_list,
                                       std::uint64_t probe_seed, std::size_t replicas = 1,
                                       std::size_t probe_draws = 4) {
  const std::size_t n = lattice.grid.n_steps;
  const double dt = lattice.grid.dt();
  require(replicas >= 1, ErrorKind::config_invalid, "bellman needs at least one replica");
  const bool antithetic =
      lattice.n_particles >= 2 &&
      lattice.inc(0, lattice.n_particles / 2, 0) == -lattice.inc(0, 0, 0);
  const double fx = eval_F(F, X);
  ResidualReport rep;
  rep.kind = "bellman";
  std::vector<double> sums(h_steps_list.size(), 0.0);
  for (std::size_t r = 0; r < replicas; ++r) {
    const PathLattice lat =
        (r == 0) ? lattice
                 : (antithetic
                        ? brownian_lattice_antithetic(lattice.grid, lattice.n_particles,
                                                      lattice.dim, lattice.seed + 7919 * r)
                        : brownian_lattice(lattice.grid, lattice.n_particles, lattice.dim,
                                           lattice.seed + 7919 * r));
    const FBSolution sol = solve_optimal(F, F_T, spec, X, lat, cfg);
    const double v_t = value_from_solution(F, F_T, spec, sol);
    const double grad2 = h_inner(sol.Z[0], sol.Z[0]);
    double probe = 0.0;
    for (std::size_t j = 0; j < probe_draws; ++j)
      probe += gaussian_probe(sol, F, F_T, spec, cfg, probe_seed + 31 * r + j);
    probe /= static_cast<double>(probe_draws);
    for (std::size_t mi = 0; mi < h_steps_list.size(); ++mi) {
      const std::size_t m = h_steps_list[mi];
      require(m >= 1 && m < n, ErrorKind::config_invalid, "bellman h must lie inside the grid");
      const FBSolution sol_h = solve_optimal(F, F_T, spec, X, lat.tail(m), cfg);
      const double v_th = value_from_solution(F, F_T, spec, sol_h);
      const double h = static_cast<double>(m) * dt;
      sums[mi] += (v_th - v_t) / h + 0.5 * probe - grad2 / (2.0 * spec.lambda) + fx;
    }
  }
  for (std::size_t mi = 0; mi < h_steps_list.size(); ++mi) {
    rep.h_values.push_back(static_cast<double>(h_steps_list[mi]) * dt);
    rep.residuals.push_back(std::abs(sums[mi] / static_cast<double>(replicas)));
  }
  rep.h = rep.h_values.front();
  rep.residual = rep.residuals.front();
  if (rep.h_values.size() >= 2)
    rep.rate_estimate = loglog_slope(rep.h_values, rep.residuals);
  return rep;
}

// Weak-form master equation residual over a direction set:
//   (( dU/dt + 1/2 D_X((D_X U sigma N, sigma N)) - (1/lambda) D_X U . U
//      + D_X F , dir )) -> 0.
inline ResidualReport master_residual(const Functional& F, const Functional& F_T,
                                      const ProblemSpec& spec, const ParticleEnsemble& X,
                                      const PathLattice& lattice, const PicardConfig& cfg,
                                      std::size_t h_steps,
                                      const std::vector<ParticleEnsemble>& directions,
                                      std::uint64_t probe_seed) {
  require(F.has_third() && F_T.has_third(), ErrorKind::missing_derivative_data,
          "master residual needs third-derivative data");
  const std::size_t n = lattice.grid.n_steps;
  require(h_steps >= 1 && h_steps < n, ErrorKind::config_invalid, "master h inside grid");
  const double dt = lattice.grid.dt();
  const double h = static_cast<double>(h_steps) * dt;

  const FBSolution sol = solve_optimal(F, F_T, spec, X, lattice, cfg);
  const FBSolution sol_h = solve_optimal(F, F_T, spec, X, lattice.tail(h_steps), cfg);
  const ParticleEnsemble du_dt = scaled(sol_h.Z[0] - sol.Z[0], 1.0 / h);
  const LqPaths upsilon_u = solve_lq_derivative(sol, F, F_T, spec, sol.Z[0], cfg);
  const ParticleEnsemble grad_running = grad_F(F, X);

  // Probe paths for the second-order term; identically zero when sigma = 0.
  const bool with_probe = !spec.sigma_is_zero();
  ParticleEnsemble gauss, sigma_n;
  LqPaths probe;
  if (with_probe) {
    gauss = standard_gaussian_ensemble(X.n_particles, spec.dim, probe_seed);
    sigma_n = ParticleEnsemble(X.n_particles, spec.dim);
    for (std::size_t i = 0; i < X.n_particles; ++i)
      spec.apply_sigma(gauss.x.data() + i * spec.dim, sigma_n.x.data() + i * spec.dim);
    probe = solve_linear_system(sol, F, F_T, spec, sigma_n, cfg, nullptr, &gauss);
  }

  ResidualReport rep;
  rep.kind = "master";
  rep.h = h;
  double worst = 0.0;
  for (const ParticleEnsemble& dir_raw : directions) {
    const double nd = h_norm(dir_raw);
    require(nd > 0.0, ErrorKind::config_invalid, "zero test direction");
    const ParticleEnsemble dir = scaled(dir_raw, 1.0 / nd);
    double total = h_inner(du_dt, dir) - h_inner(upsilon_u.Zdir[0], dir) / spec.lambda +
                   h_inner(grad_running, dir);
    if (with_probe) {
      // (( D_X Phi, dir )) = -((Y(T), D^3F_T(Y_T) Yd(T) Y(T))) - int ((Y(s),
      // D^3F(Y_s) Yd(s) Y(s))) ds + 2 ((sigma N, Z'(t))), with (Y', Z') the
      // source-driven linear system.
      const LqPaths tilde = solve_lq_derivative(sol, F, F_T, spec, dir, cfg);
      std::vector<ParticleEnsemble> third_terms(n + 1);
      for (std::size_t k = 0; k <= n; ++k) {
        const Functional& fk = (k == n) ? F_T : F;
        third_terms[k] = fk.third_action(sol.Y[k], tilde.Ydir[k],
                                         (k == n) ? probe.Ydir[n] : probe.Ydir[k],
                                         law_stats(sol.measure_flow[k], fk.needs_trig_stats()));
      }
      // Accumulated source: source_k = third_T + sum_{j>k} third_j dt.
      std::vector<ParticleEnsemble> source(n + 1);
      source[n] = third_terms[n];
      for (std::size_t kk = n; kk-- > 0;) {
        source[kk] = source[kk + 1];
        if (kk + 1 < n) axpy(source[kk], dt, third_terms[kk + 1]);
      }
      const ParticleEnsemble zero_init(X.n_particles, X.dim);
      const LqPaths prime =
          solve_linear_system(sol, F, F_T, spec, zero_init, cfg, &source, &gauss);
      double dphi = -h_inner(probe.Ydir[n], third_terms[n]);
      for (std::size_t k = 0; k < n; ++k) dphi -= h_inner(probe.Ydir[k], third_terms[k]) * dt;
      dphi += 2.0 * h_inner(sigma_n, prime.Zdir[0]);
      total += 0.5 * dphi;
    }
    worst = std::max(worst, std::abs(total));
  }
  rep.residual = worst;
  return rep;
}

// Time-regularity ratios of V and D_X V against |dt| and |dt|^(1/2).
struct TimeRegularityReport {
  ResidualReport value_side;
  ResidualReport gradient_side;
  double worst_value_ratio = 0.0;
  double worst_gradient_ratio = 0.0;
};

inline TimeRegularityReport time_regularity(const Functional& F, const Functional& F_T,
                                            const ProblemSpec& spec, const ParticleEnsemble& X,
                                            const PathLattice& lattice, const PicardConfig& cfg,
                                            const std::vector<std::size_t>& step_offsets) {
  const std::size_t n = lattice.grid.n_steps;
  const double dt = lattice.grid.dt();
  const FBSolution sol = solve_optimal(F, F_T, spec, X, lattice, cfg);
  const double v0 = value_from_solution(F, F_T, spec, sol);
  const double nx = h_norm(X);
  TimeRegularityReport out;
  out.value_side.kind = "time_regularity_value";
  out.gradient_side.kind = "time_regularity_gradient";
  for (std::size_t m : step_offsets) {
    require(m >= 1 && m < n, ErrorKind::config_invalid, "time offset inside grid");
    const double h = static_cast<double>(m) * dt;
    const FBSolution sol_h = solve_optimal(F, F_T, spec, X, lattice.tail(m), cfg);
    const double dv = std::abs(value_from_solution(F, F_T, spec, sol_h) - v0);
    const double dg = h_norm(sol_h.Z[0] - sol.Z[0]);
    out.value_side.h_values.push_back(h);
    out.value_side.residuals.push_back(dv);
    out.gradient_side.h_values.push_back(h);
    out.gradient_side.residuals.push_back(dg);
    out.worst_value_ratio = std::max(out.worst_value_ratio, dv / ((1.0 + nx * nx) * h));
    out.worst_gradient_ratio =
        std::max(out.worst_gradient_ratio, dg / ((1.0 + nx) * std::sqrt(h)));
  }
  out.value_side.h = out.value_side.h_values.front();
  out.value_side.residual = out.value_side.residuals.front();
  out.gradient_side.h = out.gradient_side.h_values.front();
  out.gradient_side.residual = out.gradient_side.residuals.front();
  if (step_offsets.size() >= 2) {
    out.value_side.rate_estimate = loglog_slope(out.value_side.h_values, out.value_side.residuals);
    out.gradient_side.rate_estimate =
        loglog_slope(out.gradient_side.h_values, out.gradient_side.residuals);
  }
  return out;
}

// Law invariance: V is a function of the law only, so permuting particles
// (without permuting the noise) moves V by at most Monte Carlo noise.
struct LawInvarianceReport {
  double max_diff = 0.0;
  double mc_stderr = 0.0;
};

inline LawInvarianceReport law_invariance_check(const Functional& F, const Functional& F_T,
                                                const ProblemSpec& spec,
                                                const ParticleEnsemble& X,
                                                const PathLattice& lattice,
                                                const PicardConfig& cfg, std::size_t n_perms,
                                                std::uint64_t seed) {
  const FBSolution sol = solve_optimal(F, F_T, spec, X, lattice, cfg);
  const double v0 = value_from_solution(F, F_T, spec, sol);
  LawInvarianceReport rep;
  rep.mc_stderr = value_mc_stderr(F, F_T, spec, sol);
  for (std::size_t p = 0; p < n_perms; ++p) {
    const auto perm = seeded_permutation(X.n_particles, seed, p + 1);
    const ParticleEnsemble xp = permuted(X, perm);
    const FBSolution solp = solve_optimal(F, F_T, spec, xp, lattice, cfg);
    rep.max_diff =
        std::max(rep.max_diff, std::abs(value_from_solution(F, F_T, spec, solp) - v0));
  }
  return rep;
}

}  // namespace mfc
