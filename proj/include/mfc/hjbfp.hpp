#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mfc/common.hpp"
#include "mfc/fbsde.hpp"
#include "mfc/functional.hpp"
#include "mfc/problem.hpp"
#include "mfc/value.hpp"

namespace mfc {

// ---------------------------------------------------------------------------
// 1D space-time grids for the HJB-FP oracle. The operator convention is
// A phi = -(1/2) a phi'' with a = sigma^2, used verbatim in both equations.
// ---------------------------------------------------------------------------

struct Grid1D {
  double x_min = -6.0;
  double x_max = 6.0;
  std::size_t nx = 401;

  Grid1D() = default;
  Grid1D(double lo, double hi, std::size_t n) : x_min(lo), x_max(hi), nx(n) {
    require(nx >= 16, ErrorKind::config_invalid, "grid needs nx >= 16");
    require(hi > lo, ErrorKind::config_invalid, "grid needs x_max > x_min");
  }
  double dx() const { return (x_max - x_min) / static_cast<double>(nx - 1); }
  double x(std::size_t i) const { return x_min + static_cast<double>(i) * dx(); }
};

struct GridField {
  Grid1D grid;
  TimeGrid time;
  std::vector<double> v;  // (n_steps + 1) * nx

  GridField() = default;
  GridField(const Grid1D& g, const TimeGrid& t)
      : grid(g), time(t), v((t.n_steps + 1) * g.nx, 0.0) {}
  double& at(std::size_t k, std::size_t i) { return v[k * grid.nx + i]; }
  double at(std::size_t k, std::size_t i) const { return v[k * grid.nx + i]; }
  std::span<const double> slice(std::size_t k) const { return {v.data() + k * grid.nx, grid.nx}; }
  std::span<double> slice(std::size_t k) { return {v.data() + k * grid.nx, grid.nx}; }
};

struct DensityField : GridField {
  using GridField::GridField;
  double mass(std::size_t k) const { return pairwise_sum(slice(k)) * grid.dx(); }
};

struct PotentialField : GridField {
  using GridField::GridField;

  // Central gradient inside, second-order one-sided at the ends.
  std::vector<double> gradient_slice(std::size_t k) const {
    const std::size_t n = grid.nx;
    const double h = grid.dx();
    std::vector<double> g(n);
    const auto u = slice(k);
    g[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
    for (std::size_t i = 1; i + 1 < n; ++i) g[i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
    g[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h);
    return g;
  }
};

// Law statistics of a grid density (rectangle rule, consistent with the
// flux-form mass convention dx * sum m = 1).
inline LawStats grid_law_stats(const Grid1D& g, std::span<const double> m, bool with_trig) {
  LawStats s;
  s.dim = 1;
  const double dx = g.dx();
  s.mean.resize(1);
  s.mean[0] =
      pairwise_sum_indexed(g.nx, [&](std::size_t i) { return g.x(i) * m[i]; }) * dx;
  if (with_trig) {
    s.mean_cos.resize(1);
    s.mean_sin.resize(1);
    s.mean_cos[0] =
        pairwise_sum_indexed(g.nx, [&](std::size_t i) { return std::cos(g.x(i)) * m[i]; }) * dx;
    s.mean_sin[0] =
        pairwise_sum_indexed(g.nx, [&](std::size_t i) { return std::sin(g.x(i)) * m[i]; }) * dx;
    s.trig_filled = true;
  }
  return s;
}

// Marginal cost F(x, m) = f(x, m) + int df(xi, m)/dm (x) m(xi) dxi, the
// right-hand side of the HJB equation, by trapezoid quadrature.
inline double marginal_cost(const Functional& f, const Grid1D& g, double x,
                            std::span<const double> m, const LawStats& stats) {
  const double dx = g.dx();
  const double xv[1] = {x};
  double corr = 0.0;
  for (std::size_t i = 0; i < g.nx; ++i) {
    const double xi[1] = {g.x(i)};
    const double w = (i == 0 || i + 1 == g.nx) ? 0.5 : 1.0;
    corr += w * f.fun_deriv_integrand(xi, xv, stats) * m[i];
  }
  return f.integrand(xv, stats) + corr * dx;
}

namespace detail {

// Tridiagonal system whose first and last rows use the shifted 3-point
// stencils (0,1,2) and (nx-3, nx-2, nx-1) produced by the quadratic-ghost
// boundary treatment of the HJB diffusion term.
inline void solve_quasi_tridiagonal(double b0, double c0, double d0, std::span<double> sub,
                                    std::span<double> diag, std::span<double> sup, double an,
                                    double bn, double cn, std::span<double> rhs) {
  const std::size_t n = rhs.size();
  // Row 1 eliminates column 0 against row 0.
  double f = sub[1] / b0;
  diag[1] -= f * c0;
  sup[1] -= f * d0;
  rhs[1] -= f * rhs[0];
  for (std::size_t i = 2; i + 1 < n; ++i) {
    f = sub[i] / diag[i - 1];
    diag[i] -= f * sup[i - 1];
    rhs[i] -= f * rhs[i - 1];
  }
  // Last row: clear its (n-3) and (n-2) entries.
  f = an / diag[n - 3];
  bn -= f * sup[n - 3];
  double rn = rhs[n - 1] - f * rhs[n - 3];
  f = bn / diag[n - 2];
  cn -= f * sup[n - 2];
  rn -= f * rhs[n - 2];
  rhs[n - 1] = rn / cn;
  for (std::size_t ii = n - 1; ii-- > 1;) rhs[ii] = (rhs[ii] - sup[ii] * rhs[ii + 1]) / diag[ii];
  rhs[0] = (rhs[0] - c0 * rhs[1] - d0 * rhs[2]) / b0;
}

// Godunov numerical Hamiltonian for H(p) = p^2 / (2 lambda) with upwinded
// second-order one-sided differences.
inline void godunov_hamiltonian(const Grid1D& g, std::span<const double> u, double lambda,
                                std::span<double> out, double& max_grad) {
  const std::size_t n = g.nx;
  const double h = g.dx();
  max_grad = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dm;  // backward difference
    if (i >= 2) dm = (3.0 * u[i] - 4.0 * u[i - 1] + u[i - 2]) / (2.0 * h);
    else if (i == 1) dm = (u[1] - u[0]) / h;
    else dm = (u[1] - u[0]) / h;
    double dp;  // forward difference
    if (i + 2 < n) dp = (-3.0 * u[i] + 4.0 * u[i + 1] - u[i + 2]) / (2.0 * h);
    else if (i + 1 < n) dp = (u[i + 1] - u[i]) / h;
    else dp = (u[n - 1] - u[n - 2]) / h;
    const double up = std::max(dm, 0.0);
    const double dn = std::min(dp, 0.0);
    max_grad = std::max(max_grad, std::max(std::abs(dm), std::abs(dp)));
    out[i] = std::max(up * up, dn * dn) / (2.0 * lambda);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Backward HJB sweep with the measure flow frozen:
//   -du/ds + A u + (1/2 lambda) |Du|^2 = F(x, m(s)),  u(., T) = F_T(., m(T)).
// Diffusion implicit (quasi-tridiagonal solve), Hamiltonian explicit with
// upwinded one-sided gradients.
// ---------------------------------------------------------------------------

inline PotentialField solve_hjb(const Functional& f_running, const Functional& f_terminal,
                                const ProblemSpec& spec, const DensityField& m_flow) {
  const Grid1D& g = m_flow.grid;
  const TimeGrid& tg = m_flow.time;
  const std::size_t n = g.nx, nt = tg.n_steps;
  const double dx = g.dx(), dt = tg.dt();
  const double a = spec.sigma(0, 0) * spec.sigma(0, 0);
  const double mu = 0.5 * a * dt / (dx * dx);
  require(spec.dim == 1, ErrorKind::dimension_unsupported, "grid oracle is 1D only");

  PotentialField u(g, tg);
  {
    const LawStats st = grid_law_stats(g, m_flow.slice(nt), f_terminal.needs_trig_stats());
    for (std::size_t i = 0; i < n; ++i)
      u.at(nt, i) = marginal_cost(f_terminal, g, g.x(i), m_flow.slice(nt), st);
  }
  std::vector<double> ham(n), rhs(n), sub(n), diag(n), sup(n);
  for (std::size_t kk = nt; kk-- > 0;) {
    double max_grad = 0.0;
    detail::godunov_hamiltonian(g, u.slice(kk + 1), spec.lambda, ham, max_grad);
    if (max_grad * dt / (spec.lambda * dx) > 0.9)
      fail(ErrorKind::cfl_violation, "explicit Hamiltonian term violates the step-size bound");
    const LawStats st = grid_law_stats(g, m_flow.slice(kk), f_running.needs_trig_stats());
    for (std::size_t i = 0; i < n; ++i)
      rhs[i] = u.at(kk + 1, i) - dt * ham[i] +
               dt * marginal_cost(f_running, g, g.x(i), m_flow.slice(kk), st);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      sub[i] = -mu;
      diag[i] = 1.0 + 2.0 * mu;
      sup[i] = -mu;
    }
    // Quadratic-extrapolation ghosts: exact for quadratic truth.
    detail::solve_quasi_tridiagonal(1.0 - mu, 2.0 * mu, -mu, sub, diag, sup, -mu, 2.0 * mu,
                                    1.0 - mu, rhs);
    for (std::size_t i = 0; i < n; ++i) u.at(kk, i) = rhs[i];
  }
  return u;
}

// ---------------------------------------------------------------------------
// Forward Fokker-Planck sweep in conservative form: explicit upwind advection
// with face velocity -Du/lambda, implicit zero-flux diffusion. Mass telescopes
// exactly; the upwind/implicit pair preserves positivity under the CFL bound.
// ---------------------------------------------------------------------------

inline DensityField solve_fp(const PotentialField& u, std::span<const double> m0,
                             const ProblemSpec& spec) {
  const Grid1D& g = u.grid;
  const TimeGrid& tg = u.time;
  const std::size_t n = g.nx, nt = tg.n_steps;
  const double dx = g.dx(), dt = tg.dt();
  const double a = spec.sigma(0, 0) * spec.sigma(0, 0);
  const double mu = 0.5 * a * dt / (dx * dx);

  DensityField m(g, tg);
  {
    const double mass0 = pairwise_sum(m0) * dx;
    require(mass0 > 0.0, ErrorKind::config_invalid, "initial density must carry mass");
    for (std::size_t i = 0; i < n; ++i) {
      require(m0[i] >= 0.0, ErrorKind::config_invalid, "initial density must be nonnegative");
      m.at(0, i) = m0[i] / mass0;
    }
  }
  std::vector<double> flux(n + 1), work(n), sub(n), diag(n), sup(n);
  for (std::size_t k = 0; k < nt; ++k) {
    const auto uk = u.slice(k);
    flux[0] = flux[n] = 0.0;
    double max_v = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const double vel = -(uk[i + 1] - uk[i]) / (dx * spec.lambda);
      max_v = std::max(max_v, std::abs(vel));
      flux[i + 1] = vel * (vel > 0.0 ? m.at(k, i) : m.at(k, i + 1));
    }
    if (max_v * dt / dx > 0.9)
      fail(ErrorKind::cfl_violation, "advection step violates the step-size bound");
    for (std::size_t i = 0; i < n; ++i)
      work[i] = m.at(k, i) - dt / dx * (flux[i + 1] - flux[i]);
    if (a > 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        const double left = (i > 0) ? mu : 0.0;
        const double right = (i + 1 < n) ? mu : 0.0;
        sub[i] = -left;
        diag[i] = 1.0 + left + right;
        sup[i] = -right;
      }
      solve_tridiagonal(sub, diag, sup, work);
    }
    for (std::size_t i = 0; i < n; ++i) {
      require(work[i] >= -1e-12, ErrorKind::scheme_failure,
              "density went negative beyond tolerance");
      m.at(k + 1, i) = work[i];
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Coupled fixed point: HJB against the frozen flow, FP under the resulting
// feedback, damp the density flow, repeat until the sup-step L1 gap is small.
// ---------------------------------------------------------------------------

struct HjbFpSolution {
  PotentialField u;
  DensityField m;
  std::size_t iterations = 0;
  double final_gap = 0.0;
};

inline HjbFpSolution hjbfp_fixed_point(const Functional& f_running, const Functional& f_terminal,
                                       const ProblemSpec& spec, const Grid1D& grid,
                                       const TimeGrid& tg, std::span<const double> m0,
                                       double damping, double tol, std::size_t max_iters) {
  const std::size_t n = grid.nx, nt = tg.n_steps;
  const double dx = grid.dx();
  HjbFpSolution sol;
  {
    PotentialField uzero(grid, tg);
    sol.m = solve_fp(uzero, m0, spec);  // free diffusion as the initial flow
  }
  detail::DivergenceWatch watch;
  bool converged = false;
  for (sol.iterations = 1; sol.iterations <= max_iters; ++sol.iterations) {
    sol.u = solve_hjb(f_running, f_terminal, spec, sol.m);
    const DensityField m_new = solve_fp(sol.u, m0, spec);
    double gap = 0.0;
    for (std::size_t k = 0; k <= nt; ++k) {
      const double l1 = pairwise_sum_indexed(n, [&](std::size_t i) {
        return std::abs(m_new.at(k, i) - sol.m.at(k, i));
      }) * dx;
      gap = std::max(gap, l1);
    }
    watch.observe(gap);
    for (std::size_t j = 0; j < sol.m.v.size(); ++j)
      sol.m.v[j] += damping * (m_new.v[j] - sol.m.v[j]);
    if (gap <= tol) {
      converged = true;
      break;
    }
  }
  if (!converged)
    fail(ErrorKind::max_iters_exceeded, "HJB-FP fixed point did not converge");
  // Boundary-adequacy check: the domain must keep the mass away from the walls.
  double edge = 0.0;
  for (std::size_t k = 0; k <= nt; ++k)
    edge = std::max(edge, std::max(sol.m.at(k, 0), sol.m.at(k, grid.nx - 1)) * dx);
  require(edge <= 1e-8, ErrorKind::scheme_failure, "boundary mass exceeds tolerance");
  sol.u = solve_hjb(f_running, f_terminal, spec, sol.m);
  return sol;
}

// Grid value of the control problem: the cost of the optimal feedback
// -Du/lambda under the computed flow (plain integrand f, not the marginal).
inline double grid_value(const Functional& f_running, const Functional& f_terminal,
                         const ProblemSpec& spec, const HjbFpSolution& sol) {
  const Grid1D& g = sol.m.grid;
  const std::size_t n = g.nx, nt = sol.m.time.n_steps;
  const double dx = g.dx(), dt = sol.m.time.dt();
  double total = 0.0;
  for (std::size_t k = 0; k < nt; ++k) {
    const auto du = sol.u.gradient_slice(k);
    const LawStats st = grid_law_stats(g, sol.m.slice(k), f_running.needs_trig_stats());
    total += dt * dx *
             pairwise_sum_indexed(n, [&](std::size_t i) {
               const double xv[1] = {g.x(i)};
               return (du[i] * du[i] / (2.0 * spec.lambda) + f_running.integrand(xv, st)) *
                      sol.m.at(k, i);
             });
  }
  const LawStats stT = grid_law_stats(g, sol.m.slice(nt), f_terminal.needs_trig_stats());
  total += dx * pairwise_sum_indexed(n, [&](std::size_t i) {
             const double xv[1] = {g.x(i)};
             return f_terminal.integrand(xv, stT) * sol.m.at(nt, i);
           });
  return total;
}

// ---------------------------------------------------------------------------
// Cross-validation of the particle solver against the grid oracle.
// ---------------------------------------------------------------------------

struct CrossValidationReport {
  double gradient_sup_gap = 0.0;       // sup over bulk particles of the scaled gap
  double weak_derivative_particle = 0.0;
  double weak_derivative_grid = 0.0;
  double weak_derivative_rel_gap = 0.0;
  double value_particle = 0.0;
  double value_grid = 0.0;
  double value_rel_gap = 0.0;
  double min_mass = 0.0;
  double max_mass = 0.0;
};

// Particle-side realization of the mixture m + eps (m' - m) for the weak
// functional-derivative check: a seeded subset of particles is pushed through
// the comonotone shift map, with nested subsets for the Richardson step.
inline ParticleEnsemble mixture_shift(const ParticleEnsemble& X, double shift, std::size_t count,
                                      std::uint64_t seed) {
  const auto perm = seeded_permutation(X.n_particles, seed, 77);
  ParticleEnsemble out = X;
  for (std::size_t r = 0; r < count; ++r) out.at(perm[r], 0) += shift;
  return out;
}

inline CrossValidationReport cross_validate(const Functional& f_running,
                                            const Functional& f_terminal,
                                            const ProblemSpec& spec, const ParticleEnsemble& X,
                                            const PathLattice& lattice, const PicardConfig& cfg,
                                            const HjbFpSolution& grid_sol, double mixture_shift_by,
                                            std::uint64_t seed) {
  require(spec.dim == 1, ErrorKind::dimension_unsupported, "cross-validation is 1D only");
  const Grid1D& g = grid_sol.m.grid;
  CrossValidationReport rep;

  const FBSolution sol = solve_optimal(f_running, f_terminal, spec, X, lattice, cfg);
  rep.value_particle = value_from_solution(f_running, f_terminal, spec, sol);
  rep.value_grid = grid_value(f_running, f_terminal, spec, grid_sol);
  rep.value_rel_gap = std::abs(rep.value_particle - rep.value_grid) /
                      std::max(1e-12, std::abs(rep.value_grid));

  // (a) Z(t) against D_x u(., t) at the particle locations (bulk only).
  {
    const auto du0 = grid_sol.u.gradient_slice(0);
    const auto mu = ensemble_mean(X);
    const Mat cov = ensemble_covariance(X);
    const double sd = std::sqrt(cov(0, 0));
    for (std::size_t i = 0; i < X.n_particles; ++i) {
      const double x = X.at(i, 0);
      if (std::abs(x - mu[0]) > 3.0 * sd) continue;
      const double pos = (x - g.x_min) / g.dx();
      const std::size_t j = std::min(g.nx - 2, static_cast<std::size_t>(std::max(0.0, pos)));
      const double t = pos - static_cast<double>(j);
      const double du = (1.0 - t) * du0[j] + t * du0[j + 1];
      rep.gradient_sup_gap = std::max(
          rep.gradient_sup_gap, std::abs(sol.Z[0].at(i, 0) - du) / (1.0 + std::abs(x)));
    }
  }

  // (b) [V(m_eps) - V(m)]/eps against int u(x,t) (m' - m) dx, Richardson over
  // nested swap subsets with common noise.
  {
    const std::size_t n_half = X.n_particles / 8;
    const std::size_t n_full = 2 * n_half;
    if (n_half >= 1 && mixture_shift_by != 0.0) {
      const double eps_half = static_cast<double>(n_half) / static_cast<double>(X.n_particles);
      const ParticleEnsemble x_half = mixture_shift(X, mixture_shift_by, n_half, seed);
      const ParticleEnsemble x_full = mixture_shift(X, mixture_shift_by, n_full, seed);
      const double v0 = rep.value_particle;
      const double v1 =
          value_from_solution(f_running, f_terminal, spec,
                              solve_optimal(f_running, f_terminal, spec, x_half, lattice, cfg));
      const double v2 =
          value_from_solution(f_running, f_terminal, spec,
                              solve_optimal(f_running, f_terminal, spec, x_full, lattice, cfg));
      rep.weak_derivative_particle = (4.0 * (v1 - v0) - (v2 - v0)) / (2.0 * eps_half);
      // Grid side: m' is the shifted initial density.
      const double dx = g.dx();
      const auto m0 = grid_sol.m.slice(0);
      std::vector<double> m_shift(g.nx, 0.0);
      for (std::size_t i = 0; i < g.nx; ++i) {
        const double pos = (g.x(i) - mixture_shift_by - g.x_min) / dx;
        if (pos < 0.0 || pos > static_cast<double>(g.nx - 1)) continue;
        const std::size_t j = std::min(g.nx - 2, static_cast<std::size_t>(pos));
        const double t = pos - static_cast<double>(j);
        m_shift[i] = (1.0 - t) * m0[j] + t * m0[j + 1];
      }
      rep.weak_derivative_grid =
          dx * pairwise_sum_indexed(g.nx, [&](std::size_t i) {
            return grid_sol.u.at(0, i) * (m_shift[i] - m0[i]);
          });
      rep.weak_derivative_rel_gap =
          std::abs(rep.weak_derivative_particle - rep.weak_derivative_grid) /
          std::max(1e-12, std::abs(rep.weak_derivative_grid));
    }
  }

  rep.min_mass = 1.0;
  rep.max_mass = 1.0;
  for (std::size_t k = 0; k <= grid_sol.m.time.n_steps; ++k) {
    rep.min_mass = std::min(rep.min_mass, grid_sol.m.mass(k));
    rep.max_mass = std::max(rep.max_mass, grid_sol.m.mass(k));
  }
  return rep;
}

// Discretized Gaussian density on the grid (normalized to dx * sum = 1 by the
// FP solver).
inline std::vector<double> gaussian_density(const Grid1D& g, double mean, double stddev) {
  std::vector<double> m(g.nx);
  for (std::size_t i = 0; i < g.nx; ++i) {
    const double z = (g.x(i) - mean) / stddev;
    m[i] = std::exp(-0.5 * z * z);
  }
  const double mass = pairwise_sum(m) * g.dx();
  for (double& v : m) v /= mass;
  return m;
}

}  // namespace mfc
