#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "mfc/common.hpp"
#include "mfc/ensemble.hpp"
#include "mfc/functional.hpp"
#include "mfc/lattice.hpp"
#include "mfc/problem.hpp"
#include "mfc/regression.hpp"
#include "mfc/wasserstein.hpp"

namespace mfc {

// ---------------------------------------------------------------------------
// Controls and solutions
// ---------------------------------------------------------------------------

struct ControlProcess {
  std::size_t n_steps = 0;
  std::size_t n_particles = 0;
  std::size_t dim = 0;
  bool adapted = true;
  std::vector<double> values;  // n_steps * n_particles * dim, left endpoints

  ControlProcess() = default;
  ControlProcess(std::size_t steps, std::size_t n, std::size_t d, double fill = 0.0)
      : n_steps(steps), n_particles(n), dim(d), values(steps * n * d, fill) {}

  double& at(std::size_t k, std::size_t i, std::size_t c) {
    return values[(k * n_particles + i) * dim + c];
  }
  double at(std::size_t k, std::size_t i, std::size_t c) const {
    return values[(k * n_particles + i) * dim + c];
  }

  ParticleEnsemble step(std::size_t k) const {
    ParticleEnsemble e(n_particles, dim);
    for (std::size_t i = 0; i < n_particles; ++i)
      for (std::size_t c = 0; c < dim; ++c) e.at(i, c) = at(k, i, c);
    return e;
  }

  double step_norm2(std::size_t k) const {
    return pairwise_sum_indexed(n_particles,
                                [&](std::size_t i) {
                                  double s = 0.0;
                                  for (std::size_t c = 0; c < dim; ++c) {
                                    const double v = at(k, i, c);
                                    s += v * v;
                                  }
                                  return s;
                                }) /
           static_cast<double>(n_particles);
  }
};

struct PicardConfig {
  std::size_t max_iters = 200;
  double tol = 1e-8;
  double damping = 0.5;
  RegressionSpec regression;
  FunctionalBounds bounds;       // declared constants for the admission check
  bool check_admission = true;
};

struct FBSolution {
  TimeGrid grid;
  std::vector<ParticleEnsemble> Y;  // n_steps + 1 states
  std::vector<ParticleEnsemble> Z;  // n_steps + 1 costates
  ControlProcess control;           // u = -Z/lambda on grid steps
  std::vector<EmpiricalLaw> measure_flow;
  std::size_t iterations = 0;
  double final_gap = 0.0;
  std::vector<double> gap_history;
};

// ---------------------------------------------------------------------------
// Forward simulation and cost
// ---------------------------------------------------------------------------

// X(s_k) = X + sum_{j<k} v_j dt + sigma (w(s_k) - w(t)), accumulated stepwise
// so the discrete identity holds bit-exactly.
inline std::vector<ParticleEnsemble> simulate_state(const ParticleEnsemble& X,
                                                    const ControlProcess& v,
                                                    const PathLattice& lattice,
                                                    const ProblemSpec& spec) {
  const std::size_t n = lattice.grid.n_steps;
  require(v.n_steps == n && v.n_particles == X.n_particles && v.dim == X.dim,
          ErrorKind::shape_mismatch, "simulate_state control shape");
  require(lattice.n_particles == X.n_particles && lattice.dim == X.dim,
          ErrorKind::shape_mismatch, "simulate_state lattice shape");
  const double dt = lattice.grid.dt();
  std::vector<ParticleEnsemble> path(n + 1);
  path[0] = X;
  std::vector<double> noise(X.dim);
  const bool no_noise = spec.sigma_is_zero();
  for (std::size_t k = 0; k < n; ++k) {
    path[k + 1] = path[k];
    for (std::size_t i = 0; i < X.n_particles; ++i) {
      for (std::size_t c = 0; c < X.dim; ++c)
        path[k + 1].at(i, c) += v.at(k, i, c) * dt;
      if (!no_noise) {
        spec.apply_sigma(&lattice.increments[(k * X.n_particles + i) * X.dim], noise.data());
        for (std::size_t c = 0; c < X.dim; ++c) path[k + 1].at(i, c) += noise[c];
      }
    }
  }
  return path;
}

// J(v) = (lambda/2) sum ||v_k||^2 dt + sum F(X_k) dt + F_T(X_n), left-endpoint
// quadrature in time.
inline double cost(const Functional& F, const Functional& F_T, const ProblemSpec& spec,
                   const ParticleEnsemble& X, const ControlProcess& v,
                   const PathLattice& lattice) {
  const auto path = simulate_state(X, v, lattice, spec);
  const std::size_t n = lattice.grid.n_steps;
  const double dt = lattice.grid.dt();
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    total += (0.5 * spec.lambda * v.step_norm2(k) + eval_F(F, path[k])) * dt;
  total += eval_F(F_T, path[n]);
  require(std::isfinite(total), ErrorKind::numerical_overflow, "cost is not finite");
  return total;
}

namespace detail {

// Conditional expectation of per-step targets given the state at that step.
inline ParticleEnsemble condition_on_state(const ParticleEnsemble& state,
                                           const ParticleEnsemble& target,
                                           const RegressionSpec& spec) {
  StateConditioner cond(state, spec);
  return cond.apply(target);
}

}  // namespace detail

// D_v J(v)(s_k) = lambda v_k + E[ D_XF_T(X_n) + sum_{j>k} D_XF(X_j) dt | X_k ],
// the exact gradient of the discrete cost (strictly-future running sum), with
// the conditional expectation realized by state regression.
inline ControlProcess cost_gradient(const Functional& F, const Functional& F_T,
                                    const ProblemSpec& spec, const ParticleEnsemble& X,
                                    const ControlProcess& v, const PathLattice& lattice,
                                    const RegressionSpec& reg) {
  const auto path = simulate_state(X, v, lattice, spec);
  const std::size_t n = lattice.grid.n_steps;
  const double dt = lattice.grid.dt();
  ControlProcess out(n, X.n_particles, X.dim);
  ParticleEnsemble target = grad_F(F_T, path[n]);
  for (std::size_t kk = n; kk-- > 0;) {
    if (kk + 1 < n) axpy(target, dt, grad_F(F, path[kk + 1]));
    const ParticleEnsemble fitted = detail::condition_on_state(path[kk], target, reg);
    for (std::size_t i = 0; i < X.n_particles; ++i)
      for (std::size_t c = 0; c < X.dim; ++c)
        out.at(kk, i, c) = spec.lambda * v.at(kk, i, c) + fitted.at(i, c);
  }
  return out;
}

// sum_k ((D_vJ(v1) - D_vJ(v2), v1 - v2)) dt - lambda_T sum_k ||v1 - v2||^2 dt;
// nonnegative up to tolerance when the declared constants hold.
inline double monotonicity_check(const Functional& F, const Functional& F_T,
                                 const ProblemSpec& spec, const ParticleEnsemble& X,
                                 const ControlProcess& v1, const ControlProcess& v2,
                                 const PathLattice& lattice, const RegressionSpec& reg,
                                 double lambda_T_value) {
  const ControlProcess g1 = cost_gradient(F, F_T, spec, X, v1, lattice, reg);
  const ControlProcess g2 = cost_gradient(F, F_T, spec, X, v2, lattice, reg);
  const std::size_t n = lattice.grid.n_steps;
  const double dt = lattice.grid.dt();
  double lhs = 0.0, dv2 = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const ParticleEnsemble dg = g1.step(k) - g2.step(k);
    const ParticleEnsemble dv = v1.step(k) - v2.step(k);
    lhs += h_inner(dg, dv) * dt;
    dv2 += h_inner(dv, dv) * dt;
  }
  return lhs - lambda_T_value * dv2;
}

// ---------------------------------------------------------------------------
// Nested conditional expectation (1D oracle): backward induction over node
// values with the step's empirical innovation pool and piecewise-linear
// function representation. Exact for affine ground truth up to the innovation
// sampling, which covers the quadratic family.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<ParticleEnsemble> nested_costate_1d(
    const Functional& F, const Functional& F_T, const ProblemSpec& spec,
    const std::vector<ParticleEnsemble>& path, const std::vector<ParticleEnsemble>& z_prev,
    const PathLattice& lattice) {
  require(spec.dim == 1, ErrorKind::dimension_unsupported,
          "exact_nested conditioning is implemented for dim = 1 only");
  const std::size_t n = lattice.grid.n_steps;
  const std::size_t np = path[0].n_particles;
  const double dt = lattice.grid.dt();
  const double sig = spec.sigma(0, 0);
  std::vector<ParticleEnsemble> z(n + 1);
  z[n] = grad_F(F_T, path[n]);
  // Running-gradient values along the current path, reused by the recursion.
  std::vector<ParticleEnsemble> gF(n);
  for (std::size_t k = 1; k < n; ++k) gF[k] = grad_F(F, path[k]);
  for (std::size_t kk = n; kk-- > 0;) {
    // Node function at level kk+1: zeta_{k+1} + dt * gradF_{k+1} (the strict
    // future sum absorbed one step at a time by the tower property).
    std::vector<double> xs(np), ys(np);
    for (std::size_t i = 0; i < np; ++i) {
      xs[i] = path[kk + 1].at(i, 0);
      ys[i] = z[kk + 1].at(i, 0) + ((kk + 1 < n) ? dt * gF[kk + 1].at(i, 0) : 0.0);
    }
    Interp1D fn(std::move(xs), std::move(ys));
    z[kk] = ParticleEnsemble(np, 1);
    for (std::size_t i = 0; i < np; ++i) {
      const double drift = path[kk].at(i, 0) - dt / spec.lambda * z_prev[kk].at(i, 0);
      const double s = pairwise_sum_indexed(np, [&](std::size_t j) {
        return fn(drift + sig * lattice.inc(kk, j, 0));
      });
      z[kk].at(i, 0) = s / static_cast<double>(np);
    }
  }
  return z;
}

struct DivergenceWatch {
  double last_gap = std::numeric_limits<double>::infinity();
  int rising = 0;
  void observe(double gap) {
    if (gap > last_gap) {
      if (++rising >= 5)
        fail(ErrorKind::not_contractive,
             "iteration gap increased 5 times in a row; lambda_T <= 0 or T too large");
    } else {
      rising = 0;
    }
    last_gap = gap;
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// solve_optimal: Picard iteration on the optimality system
//   Y(s) = X - (1/lambda) int Z + sigma (w(s) - w(t)),
//   Z(s_k) = E[ D_XF_T(Y_n) + sum_{j>k} D_XF(Y_j) dt | Y(s_k) ].
// ---------------------------------------------------------------------------

inline FBSolution solve_optimal(const Functional& F, const Functional& F_T,
                                const ProblemSpec& spec, const ParticleEnsemble& X,
                                const PathLattice& lattice, const PicardConfig& cfg) {
  const std::size_t n = lattice.grid.n_steps;
  const std::size_t np = X.n_particles;
  const double dt = lattice.grid.dt();
  if (cfg.check_admission) {
    const double lt = lambda_T(spec.lambda, lattice.grid.horizon(), cfg.bounds);
    if (!(lt > 0.0))
      fail(ErrorKind::admission_rejected,
           "lambda_T = " + std::to_string(lt) + " is not positive (Eq. admission)");
  }

  std::vector<ParticleEnsemble> z(n + 1, ParticleEnsemble(np, X.dim));
  ControlProcess ctl(n, np, X.dim);
  auto roll = [&](const std::vector<ParticleEnsemble>& zp) {
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < np; ++i)
        for (std::size_t c = 0; c < X.dim; ++c)
          ctl.at(k, i, c) = -zp[k].at(i, c) / spec.lambda;
    return simulate_state(X, ctl, lattice, spec);
  };

  std::vector<ParticleEnsemble> path = roll(z);
  std::vector<ParticleEnsemble> prev_path = path;
  detail::DivergenceWatch watch;
  std::vector<double> gap_history;
  double gap = 0.0;
  std::size_t it = 0;
  bool converged = false;
  for (it = 1; it <= cfg.max_iters; ++it) {
    // Backward pass: candidate costates by conditional expectation.
    std::vector<ParticleEnsemble> z_cand(n + 1);
    if (cfg.regression.mode == ConditionalMode::exact_nested) {
      z_cand = detail::nested_costate_1d(F, F_T, spec, path, z, lattice);
    } else {
      ParticleEnsemble target = grad_F(F_T, path[n]);
      z_cand[n] = target;
      for (std::size_t kk = n; kk-- > 0;) {
        if (kk + 1 < n) axpy(target, dt, grad_F(F, path[kk + 1]));
        z_cand[kk] = detail::condition_on_state(path[kk], target, cfg.regression);
      }
    }

    double zgap = 0.0;
    for (std::size_t k = 0; k <= n; ++k) zgap = std::max(zgap, h_norm(z_cand[k] - z[k]));
    double fgap = 0.0;
    for (std::size_t k = 0; k <= n; ++k) fgap = std::max(fgap, flow_gap(path[k], prev_path[k]));
    gap = std::max(zgap, fgap);
    gap_history.push_back(gap);
    watch.observe(gap);

    for (std::size_t k = 0; k <= n; ++k) {
      axpy(z[k], -cfg.damping, z[k]);         // z *= (1 - damping)
      axpy(z[k], cfg.damping, z_cand[k]);
    }
    prev_path = path;
    path = roll(z);
    if (zgap <= cfg.tol && fgap <= cfg.tol) {
      converged = true;
      break;
    }
  }
  if (!converged)
    fail(ErrorKind::max_iters_exceeded,
         "Picard iteration did not reach tol; final gap " + std::to_string(gap));

  FBSolution sol;
  sol.grid = lattice.grid;
  sol.Y = path;  // rolled with the final costate path: the recursion holds exactly
  sol.Z = std::move(z);
  sol.control = ctl;
  sol.measure_flow.reserve(n + 1);
  for (std::size_t k = 0; k <= n; ++k) sol.measure_flow.push_back(law_of(sol.Y[k]));
  sol.iterations = it;
  sol.final_gap = gap;
  sol.gap_history = std::move(gap_history);
  return sol;
}

// ---------------------------------------------------------------------------
// Linear derivative system along a frozen base trajectory (Eq. second order):
//   Ydir(s) = Xdir - (1/lambda) int Zdir,
//   Zdir(s_k) = E[ D2F_T(Y_n) Ydir_n + sum_{j>k} D2F(Y_j) Ydir_j dt + source | . ].
// With state-independent Hessians the target is measurable for the
// conditioning sigma-algebra and the expectation is the identity (pathwise
// mode); otherwise a joint regression on (Y, Ydir[, extra]) realizes it.
// ---------------------------------------------------------------------------

struct LqPaths {
  std::vector<ParticleEnsemble> Ydir;
  std::vector<ParticleEnsemble> Zdir;
  std::size_t iterations = 0;
  double final_gap = 0.0;
};

namespace detail {

// Joint conditioning state for the regression route of derivative systems:
// the base state, the direction state, and optionally the extra variables the
// expectation conditions on (the probe Gaussian).
inline ParticleEnsemble concat_states(const ParticleEnsemble& a, const ParticleEnsemble& b,
                                      const ParticleEnsemble* extra) {
  const std::size_t d = a.dim + b.dim + (extra ? extra->dim : 0);
  ParticleEnsemble out(a.n_particles, d);
  for (std::size_t i = 0; i < a.n_particles; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < a.dim; ++j) out.at(i, c++) = a.at(i, j);
    for (std::size_t j = 0; j < b.dim; ++j) out.at(i, c++) = b.at(i, j);
    if (extra)
      for (std::size_t j = 0; j < extra->dim; ++j) out.at(i, c++) = extra->at(i, j);
  }
  return out;
}

}  // namespace detail

inline LqPaths solve_linear_system(const FBSolution& base, const Functional& F,
                                   const Functional& F_T, const ProblemSpec& spec,
                                   const ParticleEnsemble& Xdir, const PicardConfig& cfg,
                                   const std::vector<ParticleEnsemble>* accumulated_source = nullptr,
                                   const ParticleEnsemble* extra_conditioning = nullptr) {
  const std::size_t n = base.grid.n_steps;
  const std::size_t np = Xdir.n_particles;
  const double dt = base.grid.dt();
  require(base.Y[0].same_shape(Xdir), ErrorKind::shape_mismatch, "direction shape");
  if (accumulated_source)
    require(accumulated_source->size() == n + 1, ErrorKind::shape_mismatch,
            "accumulated source length");
  const bool pathwise = F.constant_hessian() && F_T.constant_hessian();

  // Law statistics of the frozen base flow, reused every iteration.
  std::vector<LawStats> stats(n + 1);
  for (std::size_t k = 0; k <= n; ++k)
    stats[k] = law_stats(base.measure_flow[k], F.needs_trig_stats() || F_T.needs_trig_stats());

  std::vector<ParticleEnsemble> zdir(n + 1, ParticleEnsemble(np, Xdir.dim));
  std::vector<ParticleEnsemble> ydir(n + 1);
  auto roll = [&]() {
    ydir[0] = Xdir;
    for (std::size_t k = 0; k < n; ++k) {
      ydir[k + 1] = ydir[k];
      axpy(ydir[k + 1], -dt / spec.lambda, zdir[k]);
    }
  };

  detail::DivergenceWatch watch;
  double gap = 0.0;
  std::size_t it = 0;
  bool converged = false;
  ParticleEnsemble hbuf;
  for (it = 1; it <= cfg.max_iters; ++it) {
    roll();
    std::vector<ParticleEnsemble> z_cand(n + 1);
    F_T.hess_action_exact(base.Y[n], ydir[n], stats[n], hbuf);
    ParticleEnsemble target = hbuf;
    if (accumulated_source) target = target + (*accumulated_source)[n];
    z_cand[n] = target;  // terminal action is measurable: no projection needed
    for (std::size_t kk = n; kk-- > 0;) {
      if (kk + 1 < n) {
        F.hess_action_exact(base.Y[kk + 1], ydir[kk + 1], stats[kk + 1], hbuf);
        axpy(target, dt, hbuf);
      }
      ParticleEnsemble tk = target;
      if (accumulated_source) tk = tk + (*accumulated_source)[kk] - (*accumulated_source)[n];
      if (pathwise) {
        z_cand[kk] = std::move(tk);
      } else {
        const ParticleEnsemble joint =
            detail::concat_states(base.Y[kk], ydir[kk], extra_conditioning);
        z_cand[kk] = detail::condition_on_state(joint, tk, cfg.regression);
      }
    }
    double zgap = 0.0;
    for (std::size_t k = 0; k <= n; ++k) zgap = std::max(zgap, h_norm(z_cand[k] - zdir[k]));
    gap = zgap;
    watch.observe(gap);
    for (std::size_t k = 0; k <= n; ++k) {
      axpy(zdir[k], -cfg.damping, zdir[k]);
      axpy(zdir[k], cfg.damping, z_cand[k]);
    }
    if (zgap <= cfg.tol) {
      converged = true;
      break;
    }
  }
  if (!converged)
    fail(ErrorKind::max_iters_exceeded,
         "linear derivative system did not converge; final gap " + std::to_string(gap));
  roll();

  LqPaths out;
  out.Ydir = std::move(ydir);
  out.Zdir = std::move(zdir);
  out.iterations = it;
  out.final_gap = gap;
  return out;
}

// Upsilon(t) Xdir realized through the linear system; Zdir(t) is the second
// derivative of the value function applied to the direction.
inline LqPaths solve_lq_derivative(const FBSolution& base, const Functional& F,
                                   const Functional& F_T, const ProblemSpec& spec,
                                   const ParticleEnsemble& Xdir, const PicardConfig& cfg) {
  return solve_linear_system(base, F, F_T, spec, Xdir, cfg);
}

// 1/2 ((Upsilon(t) Xdir, Xdir)).
inline double second_derivative_quadratic_form(const FBSolution& base, const Functional& F,
                                               const Functional& F_T, const ProblemSpec& spec,
                                               const ParticleEnsemble& Xdir,
                                               const PicardConfig& cfg) {
  const LqPaths lq = solve_lq_derivative(base, F, F_T, spec, Xdir, cfg);
  return 0.5 * h_inner(lq.Zdir[0], Xdir);
}

// The payoff of the linear-quadratic subproblem at the control -Zdir/lambda;
// at the optimum it equals the quadratic form above.
inline double lq_payoff(const FBSolution& base, const Functional& F, const Functional& F_T,
                        const ProblemSpec& spec, const LqPaths& lq) {
  const std::size_t n = base.grid.n_steps;
  const double dt = base.grid.dt();
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double vk2 = h_inner(lq.Zdir[k], lq.Zdir[k]) / (spec.lambda * spec.lambda);
    total += 0.5 * spec.lambda * vk2 * dt;
    total += 0.5 * h_inner(hess_action(F, base.Y[k], lq.Ydir[k]), lq.Ydir[k]) * dt;
  }
  total += 0.5 * h_inner(hess_action(F_T, base.Y[n], lq.Ydir[n]), lq.Ydir[n]);
  return total;
}

// ((D_X^2 V(X,t) sigma N, sigma N)) by the second-order formula: run the
// linear system from sigma N with the expectation conditioned additionally on
// N, then assemble the quadratic functional of the paths.
inline double gaussian_probe(const FBSolution& base, const Functional& F, const Functional& F_T,
                             const ProblemSpec& spec, const PicardConfig& cfg,
                             std::uint64_t probe_seed) {
  const std::size_t n = base.grid.n_steps;
  const std::size_t np = base.Y[0].n_particles;
  const double dt = base.grid.dt();
  if (spec.sigma_is_zero()) return 0.0;
  const ParticleEnsemble gauss = standard_gaussian_ensemble(np, spec.dim, probe_seed);
  ParticleEnsemble xdir(np, spec.dim);
  for (std::size_t i = 0; i < np; ++i)
    spec.apply_sigma(gauss.x.data() + i * spec.dim, xdir.x.data() + i * spec.dim);
  const LqPaths lq = solve_linear_system(base, F, F_T, spec, xdir, cfg, nullptr, &gauss);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    total += h_inner(lq.Zdir[k], lq.Zdir[k]) / spec.lambda * dt;
    total += h_inner(hess_action(F, base.Y[k], lq.Ydir[k]), lq.Ydir[k]) * dt;
  }
  total += h_inner(hess_action(F_T, base.Y[n], lq.Ydir[n]), lq.Ydir[n]);
  return total;
}

}  // namespace mfc
