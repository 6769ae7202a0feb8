#include <gtest/gtest.h>

#include <cmath>

#include "mfc/fbsde.hpp"
#include "mfc/riccati.hpp"

using namespace mfc;

namespace {

struct LqSetup {
  FunctionalPtr running = std::make_shared<ZeroFunctional>(1);
  FunctionalPtr terminal = QuadraticMeanField::isotropic(1, 1.0, 0.0, 0.0, 0.0);
  ProblemSpec spec;
  ParticleEnsemble x;
  PathLattice lattice;
  PicardConfig cfg;

  LqSetup(double sigma, std::size_t n_particles, std::size_t n_steps, std::uint64_t seed = 7,
          double mean = 0.3) {
    const TimeGrid grid(0.0, 1.0, n_steps);
    spec = ProblemSpec::isotropic(1.0, sigma, 1, grid);
    x = gaussian_ensemble(n_particles, 1, seed, std::vector<double>{mean},
                          std::vector<double>{1.0}, true);
    lattice = brownian_lattice(grid, n_particles, 1, seed);
    cfg.bounds = pair_bounds(*running, *terminal);
  }
};

ParticleEnsemble random_ensemble(std::size_t n, std::size_t dim, std::uint64_t tag) {
  ParticleEnsemble e(n, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < dim; ++c)
      e.at(i, c) = standard_normal(99, RngStream::test, tag, i, c);
  return e;
}

// Random affine-feedback adapted control: v_k = a_k X(s_k) + b_k rolled
// forward step by step (exactly representable by the degree-2 regression).
ControlProcess random_feedback_control(const ParticleEnsemble& x, const PathLattice& lat,
                                       const ProblemSpec& spec, std::uint64_t tag,
                                       double scale = 0.5) {
  const std::size_t n = lat.grid.n_steps;
  ControlProcess v(n, x.n_particles, x.dim);
  ParticleEnsemble state = x;
  const double dt = lat.grid.dt();
  std::vector<double> noise(x.dim);
  for (std::size_t k = 0; k < n; ++k) {
    const double a = scale * standard_normal(41, RngStream::controls, tag, k, 0);
    const double b = scale * standard_normal(41, RngStream::controls, tag, k, 1);
    for (std::size_t i = 0; i < x.n_particles; ++i)
      for (std::size_t c = 0; c < x.dim; ++c) v.at(k, i, c) = a * state.at(i, c) + b;
    ParticleEnsemble next = state;
    for (std::size_t i = 0; i < x.n_particles; ++i) {
      for (std::size_t c = 0; c < x.dim; ++c) next.at(i, c) += v.at(k, i, c) * dt;
      if (!spec.sigma_is_zero()) {
        spec.apply_sigma(&lat.increments[(k * x.n_particles + i) * x.dim], noise.data());
        for (std::size_t c = 0; c < x.dim; ++c) next.at(i, c) += noise[c];
      }
    }
    state = std::move(next);
  }
  return v;
}

}  // namespace

TEST(SimulateState, Examples) {
  LqSetup s(0.0, 16, 8);
  ControlProcess zero(8, 16, 1);
  const auto path = simulate_state(s.x, zero, s.lattice, s.spec);
  for (std::size_t k = 0; k <= 8; ++k) EXPECT_EQ(path[k].x, s.x.x);  // frozen state

  ControlProcess constant(8, 16, 1, 0.7);
  const auto drift = simulate_state(s.x, constant, s.lattice, s.spec);
  for (std::size_t i = 0; i < 16; ++i)
    EXPECT_NEAR(drift[8].at(i, 0), s.x.at(i, 0) + 0.7, 1e-14);

  LqSetup sn(1.0, 16, 8);
  const auto noisy = simulate_state(sn.x, zero, sn.lattice, sn.spec);
  for (std::size_t k = 0; k < 8; ++k)
    for (std::size_t i = 0; i < 16; ++i)
      EXPECT_EQ(noisy[k + 1].at(i, 0), noisy[k].at(i, 0) + sn.lattice.inc(k, i, 0));
}

TEST(Cost, Examples) {
  LqSetup s(0.0, 64, 8);
  const ZeroFunctional zero_f(1);
  ControlProcess zero_v(8, 64, 1);
  EXPECT_DOUBLE_EQ(cost(zero_f, zero_f, s.spec, s.x, zero_v, s.lattice), 0.0);

  // v = 0, sigma = 0, F = 0, F_T = |.|^2/2 with ||X||^2 = 1 -> 0.5.
  ParticleEnsemble unit(64, 1);
  for (std::size_t i = 0; i < 64; ++i) unit.at(i, 0) = (i % 2 == 0) ? 1.0 : -1.0;
  EXPECT_DOUBLE_EQ(cost(zero_f, *s.terminal, s.spec, unit, zero_v, s.lattice), 0.5);

  // constant v = a, F = F_T = 0, lambda = 2 -> ||a||^2 (T - t).
  ProblemSpec lam2(2.0, Mat::identity(1, 0.0), 1, s.lattice.grid);
  ControlProcess va(8, 64, 1, 0.7);
  EXPECT_NEAR(cost(zero_f, zero_f, lam2, s.x, va, s.lattice), 0.49, 1e-14);
}

TEST(CostGradient, ZeroFunctionalsGiveLambdaV) {
  LqSetup s(0.5, 128, 8);
  const ZeroFunctional zero_f(1);
  const ControlProcess v = random_feedback_control(s.x, s.lattice, s.spec, 1);
  const ControlProcess g =
      cost_gradient(zero_f, zero_f, s.spec, s.x, v, s.lattice, s.cfg.regression);
  for (std::size_t k = 0; k < 8; ++k)
    for (std::size_t i = 0; i < 128; ++i)
      EXPECT_NEAR(g.at(k, i, 0), s.spec.lambda * v.at(k, i, 0), 1e-9);
}

TEST(CostGradient, MatchesDirectionalDifferenceOfCost) {
  LqSetup s(0.5, 512, 8);
  const ControlProcess v = random_feedback_control(s.x, s.lattice, s.spec, 2);
  // The test direction is an affine feedback of the same state path, so the
  // regression residual is exactly orthogonal to it.
  const auto path = simulate_state(s.x, v, s.lattice, s.spec);
  ControlProcess dir(8, 512, 1);
  for (std::size_t k = 0; k < 8; ++k) {
    const double a = 0.5 * standard_normal(41, RngStream::controls, 3, k, 0);
    const double b = 0.5 * standard_normal(41, RngStream::controls, 3, k, 1);
    for (std::size_t i = 0; i < 512; ++i) dir.at(k, i, 0) = a * path[k].at(i, 0) + b;
  }
  const ControlProcess g =
      cost_gradient(*s.running, *s.terminal, s.spec, s.x, v, s.lattice, s.cfg.regression);
  const double dt = s.lattice.grid.dt();
  double pairing = 0.0;
  for (std::size_t k = 0; k < 8; ++k) pairing += h_inner(g.step(k), dir.step(k)) * dt;
  const double theta = 1e-5;
  ControlProcess vp = v, vm = v;
  for (std::size_t j = 0; j < v.values.size(); ++j) {
    vp.values[j] += theta * dir.values[j];
    vm.values[j] -= theta * dir.values[j];
  }
  const double fd = (cost(*s.running, *s.terminal, s.spec, s.x, vp, s.lattice) -
                     cost(*s.running, *s.terminal, s.spec, s.x, vm, s.lattice)) /
                    (2.0 * theta);
  EXPECT_NEAR(pairing, fd, 1e-7 * (1.0 + std::abs(fd)));
}

TEST(CostGradient, VanishesAtTheSolvedOptimum) {
  LqSetup s(0.5, 1024, 16);
  const FBSolution sol = solve_optimal(*s.running, *s.terminal, s.spec, s.x, s.lattice, s.cfg);
  const ControlProcess g =
      cost_gradient(*s.running, *s.terminal, s.spec, s.x, sol.control, s.lattice,
                    s.cfg.regression);
  double worst = 0.0;
  for (std::size_t k = 0; k < 16; ++k) worst = std::max(worst, h_norm(g.step(k)));
  EXPECT_LE(worst, 10.0 * std::sqrt(s.cfg.tol));
}

TEST(Monotonicity, ExamplesAndPropertySweep) {
  LqSetup s(0.5, 256, 8);
  const FunctionalPtr running = QuadraticMeanField::isotropic(1, 0.5, 0.1, 0.2, 0.1);
  const FunctionalPtr terminal = QuadraticMeanField::isotropic(1, 1.0, 0.0, 0.3, 0.0);
  const FunctionalBounds b = pair_bounds(*running, *terminal);
  const double lam_T = lambda_T(s.spec.lambda, s.lattice.grid.horizon(), b);
  EXPECT_DOUBLE_EQ(lam_T, s.spec.lambda);  // convex entries: c' = c'_T = 0

  const ControlProcess v1 = random_feedback_control(s.x, s.lattice, s.spec, 4);
  EXPECT_NEAR(monotonicity_check(*running, *terminal, s.spec, s.x, v1, v1, s.lattice,
                                 s.cfg.regression, lam_T),
              0.0, 1e-14);

  const ZeroFunctional zf(1);
  const ControlProcess v2 = random_feedback_control(s.x, s.lattice, s.spec, 5);
  EXPECT_NEAR(monotonicity_check(zf, zf, s.spec, s.x, v1, v2, s.lattice, s.cfg.regression,
                                 s.spec.lambda),
              0.0, 1e-9);

  for (std::uint64_t trial = 0; trial < 12; ++trial) {
    const ControlProcess a = random_feedback_control(s.x, s.lattice, s.spec, 100 + 2 * trial);
    const ControlProcess c = random_feedback_control(s.x, s.lattice, s.spec, 101 + 2 * trial);
    EXPECT_GE(monotonicity_check(*running, *terminal, s.spec, s.x, a, c, s.lattice,
                                 s.cfg.regression, lam_T),
              -1e-8);
  }
}

TEST(SolveOptimal, TrivialProblemConvergesImmediately) {
  LqSetup s(0.5, 64, 8);
  const ZeroFunctional zf(1);
  PicardConfig cfg;
  const FBSolution sol = solve_optimal(zf, zf, s.spec, s.x, s.lattice, cfg);
  EXPECT_EQ(sol.iterations, 1u);
  for (std::size_t k = 0; k <= 8; ++k) EXPECT_DOUBLE_EQ(h_norm(sol.Z[k]), 0.0);
  // Y is the free diffusion.
  for (std::size_t k = 0; k < 8; ++k)
    for (std::size_t i = 0; i < 64; ++i)
      EXPECT_EQ(sol.Y[k + 1].at(i, 0), sol.Y[k].at(i, 0) + 0.5 * s.lattice.inc(k, i, 0));
}

TEST(SolveOptimal, RiccatiOracleNoiselessCase) {
  LqSetup s(0.0, 512, 64);
  const RiccatiOracle oracle{1.0, 0.0, 1.0, 1.0};
  const FBSolution sol = solve_optimal(*s.running, *s.terminal, s.spec, s.x, s.lattice, s.cfg);
  // With F = 0 the discrete fixed point reproduces the continuous P exactly.
  ParticleEnsemble expect = scaled(s.x, oracle.p(0.0));
  EXPECT_LE(h_norm(sol.Z[0] - expect) / h_norm(expect), 1e-6);
}

TEST(SolveOptimal, EnergyIdentityAtTheOptimumNoiseless) {
  // The integration-by-parts identity for ((X, Z(t))) holds exactly at
  // sigma = 0; with the strict-future quadrature it telescopes exactly at
  // grid resolution as well.
  for (const auto& terminal :
       {QuadraticMeanField::isotropic(1, 1.0, 0.0, 0.0, 0.0),
        QuadraticMeanField::isotropic(1, 0.7, 0.2, 0.3, 0.1)}) {
    LqSetup s(0.0, 1024, 32);
    PicardConfig cfg = s.cfg;
    cfg.bounds = pair_bounds(*s.running, *terminal);
    const FBSolution sol = solve_optimal(*s.running, *terminal, s.spec, s.x, s.lattice, cfg);
    const double dt = s.lattice.grid.dt();
    const double lhs = h_inner(s.x, sol.Z[0]);
    double rhs = h_inner(grad_F(*terminal, sol.Y[32]), sol.Y[32]);
    for (std::size_t k = 0; k < 32; ++k) {
      rhs += h_inner(sol.Z[k], sol.Z[k]) / s.spec.lambda * dt;
      rhs += h_inner(grad_F(*s.running, sol.Y[k]), sol.Y[k]) * dt;
    }
    const double nx = h_norm(s.x);
    EXPECT_LE(std::abs(lhs - rhs), 0.01 * (1.0 + nx * nx)) << terminal->name();
  }
}

TEST(SolveOptimal, EnergyIdentityNoisyWithBracketCorrection) {
  // With noise the pathwise integrand anticipates the increments and the
  // identity picks up the correlation term sum_k (( Upsilon_k, sigma dw_k )).
  // The corrected discrete identity closes to quadrature + Monte Carlo size.
  LqSetup s(0.5, 4096, 32, 8);
  const FBSolution sol = solve_optimal(*s.running, *s.terminal, s.spec, s.x, s.lattice, s.cfg);
  const std::size_t n = 32;
  const double dt = s.lattice.grid.dt();
  const double lhs = h_inner(s.x, sol.Z[0]);
  double rhs = h_inner(grad_F(*s.terminal, sol.Y[n]), sol.Y[n]);
  for (std::size_t k = 0; k < n; ++k) {
    rhs += h_inner(sol.Z[k], sol.Z[k]) / s.spec.lambda * dt;
    rhs += h_inner(grad_F(*s.running, sol.Y[k]), sol.Y[k]) * dt;
  }
  // Correction: Upsilon_k = D_XF_T(Y_n) + sum_{j>k} D_XF(Y_j) dt paired with
  // the step-k noise.
  ParticleEnsemble upsilon = grad_F(*s.terminal, sol.Y[n]);
  double correction = 0.0;
  std::vector<ParticleEnsemble> noise(n, ParticleEnsemble(4096, 1));
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < 4096; ++i)
      noise[k].at(i, 0) = 0.5 * s.lattice.inc(k, i, 0);
  for (std::size_t kk = n; kk-- > 0;) {
    if (kk + 1 < n) axpy(upsilon, dt, grad_F(*s.running, sol.Y[kk + 1]));
    correction += h_inner(upsilon, noise[kk]);
  }
  const double nx = h_norm(s.x);
  EXPECT_LE(std::abs(lhs - (rhs - correction)), 0.01 * (1.0 + nx * nx));
  // And the uncorrected gap really is the bracket term, not noise.
  EXPECT_NEAR(rhs - lhs, correction, 0.01 * (1.0 + nx * nx));
}

TEST(SolveOptimal, PicardGapContractsGeometrically) {
  const FunctionalPtr running = QuadraticMeanField::isotropic(1, 0.5, 0.0, 0.2, 0.1);
  LqSetup s(0.5, 512, 16);
  PicardConfig cfg = s.cfg;
  cfg.bounds = pair_bounds(*running, *s.terminal);
  const FBSolution sol = solve_optimal(*running, *s.terminal, s.spec, s.x, s.lattice, cfg);
  ASSERT_GE(sol.gap_history.size(), 5u);
  for (std::size_t i = 3; i + 1 < sol.gap_history.size(); ++i) {
    if (sol.gap_history[i] < 1e-13) break;  // at roundoff floor
    EXPECT_LT(sol.gap_history[i + 1] / sol.gap_history[i], 1.0) << "at iteration " << i;
  }
}

TEST(SolveOptimal, OptimalityAgainstPerturbedControls) {
  LqSetup s(0.5, 2048, 16);
  const FBSolution sol = solve_optimal(*s.running, *s.terminal, s.spec, s.x, s.lattice, s.cfg);
  const double c_star = cost(*s.running, *s.terminal, s.spec, s.x, sol.control, s.lattice);
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    ControlProcess v = sol.control;
    const ControlProcess tweak = random_feedback_control(s.x, s.lattice, s.spec, 500 + trial, 0.2);
    for (std::size_t j = 0; j < v.values.size(); ++j) v.values[j] += tweak.values[j];
    EXPECT_GE(cost(*s.running, *s.terminal, s.spec, s.x, v, s.lattice), c_star - 1e-9);
  }
}

TEST(SolveOptimal, AdaptednessNoLookAhead) {
  LqSetup s(0.5, 256, 16);
  const FBSolution sol = solve_optimal(*s.running, *s.terminal, s.spec, s.x, s.lattice, s.cfg);
  const std::size_t cut = 9;
  const PathLattice re = rerandomized_tail_increments(s.lattice, cut, 0xbeef);
  const auto repath = simulate_state(s.x, sol.control, re, s.spec);
  for (std::size_t k = 0; k <= cut; ++k)
    for (std::size_t i = 0; i < 256; ++i)
      EXPECT_EQ(repath[k].at(i, 0), sol.Y[k].at(i, 0)) << "k=" << k;
}

TEST(SolveOptimal, GrowthBoundsAlongTheCatalog) {
  // Frozen constant for the growth regression test, fitted once on the
  // catalog at these discretizations.
  const double frozen_c = 3.0;
  const FunctionalPtr entries[] = {QuadraticMeanField::isotropic(1, 1.0, 0.0, 0.0, 0.0),
                                   QuadraticMeanField::isotropic(1, 0.5, 0.1, 0.2, 0.1)};
  for (const auto& terminal : entries) {
    LqSetup s(0.5, 512, 16);
    PicardConfig cfg = s.cfg;
    cfg.bounds = pair_bounds(*s.running, *terminal);
    const FBSolution sol = solve_optimal(*s.running, *terminal, s.spec, s.x, s.lattice, cfg);
    const double nx = h_norm(s.x);
    for (std::size_t k = 0; k <= 16; ++k) {
      EXPECT_LE(h_norm(sol.Y[k]), frozen_c * (1.0 + nx));
      EXPECT_LE(h_norm(sol.Z[k]), frozen_c * (1.0 + nx));
    }
  }
}

TEST(SolveOptimal, FlowProperty) {
  LqSetup s(0.5, 1024, 16);
  const FBSolution sol = solve_optimal(*s.running, *s.terminal, s.spec, s.x, s.lattice, s.cfg);
  const std::size_t cut = 6;
  const FBSolution tail_sol = solve_optimal(*s.running, *s.terminal, s.spec, sol.Y[cut],
                                            s.lattice.tail(cut), s.cfg);
  double worst = 0.0;
  for (std::size_t k = cut; k <= 16; ++k) {
    worst = std::max(worst, h_norm(tail_sol.Y[k - cut] - sol.Y[k]));
    worst = std::max(worst, h_norm(tail_sol.Z[k - cut] - sol.Z[k]));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(SolveOptimal, AdmissionAndDivergenceGates) {
  const FunctionalPtr stress = std::make_shared<StressCosine>(1, 0.0, 2.0, 0.5);
  const FunctionalPtr terminal = QuadraticMeanField::isotropic(1, 1.0, 0.0, 0.0, 0.0);

  {  // lambda_T <= 0 with honestly declared constants: admission rejects.
    const TimeGrid grid(0.0, 2.0, 32);
    ProblemSpec spec = ProblemSpec::isotropic(1.0, 0.0, 1, grid);
    const auto x = gaussian_ensemble(128, 1, 3, std::vector<double>{0.0},
                                     std::vector<double>{1.0}, true);
    const PathLattice lat = brownian_lattice(grid, 128, 1, 3);
    PicardConfig cfg;
    cfg.bounds = pair_bounds(*stress, *terminal);
    try {
      solve_optimal(*stress, *terminal, spec, x, lat, cfg);
      FAIL() << "expected admission rejection";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::admission_rejected);
    }
  }
  {  // small horizon: lambda_T > 0 and the iteration converges.
    const TimeGrid grid(0.0, 0.15, 16);
    ProblemSpec spec = ProblemSpec::isotropic(1.0, 0.0, 1, grid);
    const auto x = gaussian_ensemble(256, 1, 4, std::vector<double>{0.2},
                                     std::vector<double>{0.8}, true);
    const PathLattice lat = brownian_lattice(grid, 256, 1, 4);
    PicardConfig cfg;
    cfg.bounds = pair_bounds(*stress, *terminal);
    EXPECT_GT(lambda_T(spec.lambda, grid.horizon(), cfg.bounds), 0.0);
    const FBSolution sol = solve_optimal(*stress, *terminal, spec, x, lat, cfg);
    EXPECT_LE(sol.final_gap, cfg.tol);
  }
  {  // long horizon with understated constants: the solver self-detects.
    const TimeGrid grid(0.0, 2.0, 32);
    ProblemSpec spec = ProblemSpec::isotropic(1.0, 0.0, 1, grid);
    const auto x = gaussian_ensemble(256, 1, 5, std::vector<double>{0.0},
                                     std::vector<double>{1.0}, true);
    const PathLattice lat = brownian_lattice(grid, 256, 1, 5);
    PicardConfig cfg;  // default bounds: all zeros, i.e. a dishonest declaration
    cfg.max_iters = 400;
    try {
      solve_optimal(*stress, *terminal, spec, x, lat, cfg);
      FAIL() << "expected divergence detection";
    } catch (const Error& e) {
      const bool detected = e.kind() == ErrorKind::not_contractive ||
                            e.kind() == ErrorKind::max_iters_exceeded;
      EXPECT_TRUE(detected) << e.what();
    }
  }
}

TEST(SolveLqDerivative, TrivialAndRiccati) {
  LqSetup s(0.0, 512, 64);
  const ZeroFunctional zf(1);
  PicardConfig cfg0;
  const FBSolution base0 = solve_optimal(zf, zf, s.spec, s.x, s.lattice, cfg0);
  const ParticleEnsemble dir = random_ensemble(512, 1, 30);
  const LqPaths trivial = solve_lq_derivative(base0, zf, zf, s.spec, dir, cfg0);
  for (std::size_t k = 0; k <= 64; ++k) {
    EXPECT_DOUBLE_EQ(h_norm(trivial.Zdir[k]), 0.0);
    EXPECT_EQ(trivial.Ydir[k].x, dir.x);
  }

  const FBSolution base = solve_optimal(*s.running, *s.terminal, s.spec, s.x, s.lattice, s.cfg);
  const LqPaths lq = solve_lq_derivative(base, *s.running, *s.terminal, s.spec, dir, s.cfg);
  const RiccatiOracle oracle{1.0, 0.0, 1.0, 1.0};
  EXPECT_LE(h_norm(lq.Zdir[0] - scaled(dir, oracle.p(0.0))) / h_norm(dir), 1e-6);
}

TEST(SolveLqDerivative, ExactLinearityInTheDirection) {
  LqSetup s(0.5, 256, 16);
  const FBSolution base = solve_optimal(*s.running, *s.terminal, s.spec, s.x, s.lattice, s.cfg);
  const ParticleEnsemble d1 = random_ensemble(256, 1, 31);
  const ParticleEnsemble d2 = random_ensemble(256, 1, 32);
  ParticleEnsemble combo = scaled(d1, 1.3);
  axpy(combo, -0.4, d2);
  const LqPaths l1 = solve_lq_derivative(base, *s.running, *s.terminal, s.spec, d1, s.cfg);
  const LqPaths l2 = solve_lq_derivative(base, *s.running, *s.terminal, s.spec, d2, s.cfg);
  const LqPaths lc = solve_lq_derivative(base, *s.running, *s.terminal, s.spec, combo, s.cfg);
  ParticleEnsemble expect = scaled(l1.Zdir[0], 1.3);
  axpy(expect, -0.4, l2.Zdir[0]);
  EXPECT_LE(h_norm(lc.Zdir[0] - expect), 1e-10);
}

TEST(SolveLqDerivative, QuadraticFormEqualsLqInfimum) {
  LqSetup s(0.5, 1024, 32);
  const FBSolution base = solve_optimal(*s.running, *s.terminal, s.spec, s.x, s.lattice, s.cfg);
  const ParticleEnsemble dir = random_ensemble(1024, 1, 33);
  const LqPaths lq = solve_lq_derivative(base, *s.running, *s.terminal, s.spec, dir, s.cfg);
  const double quad = 0.5 * h_inner(lq.Zdir[0], dir);
  const double payoff = lq_payoff(base, *s.running, *s.terminal, s.spec, lq);
  EXPECT_LE(std::abs(quad - payoff) / std::abs(quad), 0.02);
  // Riccati check and operator-norm boundedness over random directions.
  const RiccatiOracle oracle{1.0, 0.0, 1.0, 1.0};
  EXPECT_NEAR(quad, 0.5 * oracle.p(0.0) * h_inner(dir, dir),
              0.02 * std::abs(quad) + 1e-12);
  for (std::uint64_t t = 0; t < 20; ++t) {
    const ParticleEnsemble d = random_ensemble(1024, 1, 40 + t);
    const double q = second_derivative_quadratic_form(base, *s.running, *s.terminal, s.spec, d,
                                                      s.cfg);
    EXPECT_LE(std::abs(2.0 * q) / h_inner(d, d), 2.0);  // ||Upsilon|| stays bounded
  }
}

TEST(GaussianProbe, ZeroCasesAndRiccatiValue) {
  {  // sigma = 0 -> probe 0
    LqSetup s(0.0, 256, 16);
    const FBSolution base = solve_optimal(*s.running, *s.terminal, s.spec, s.x, s.lattice, s.cfg);
    EXPECT_DOUBLE_EQ(gaussian_probe(base, *s.running, *s.terminal, s.spec, s.cfg, 11), 0.0);
  }
  {  // F = F_T = 0 -> probe 0
    LqSetup s(0.5, 256, 16);
    const ZeroFunctional zf(1);
    PicardConfig cfg;
    const FBSolution base = solve_optimal(zf, zf, s.spec, s.x, s.lattice, cfg);
    EXPECT_NEAR(gaussian_probe(base, zf, zf, s.spec, cfg, 11), 0.0, 1e-12);
  }
  {  // LQ with sigma = s0 I: probe -> n s0^2 P(t) within Monte Carlo error.
    LqSetup s(0.5, 4096, 32);
    const FBSolution base = solve_optimal(*s.running, *s.terminal, s.spec, s.x, s.lattice, s.cfg);
    const double probe = gaussian_probe(base, *s.running, *s.terminal, s.spec, s.cfg, 11);
    const RiccatiOracle oracle{1.0, 0.0, 1.0, 1.0};
    const double expect = 0.25 * oracle.p(0.0);
    EXPECT_NEAR(probe, expect, 5.0 * expect * std::sqrt(2.0 / 4096.0));
  }
}

TEST(SolveOptimal, NestedOracleMatchesRegressionOnLq) {
  LqSetup s(0.5, 256, 12);
  PicardConfig nested = s.cfg;
  nested.regression.mode = ConditionalMode::exact_nested;
  const FBSolution a = solve_optimal(*s.running, *s.terminal, s.spec, s.x, s.lattice, s.cfg);
  const FBSolution b = solve_optimal(*s.running, *s.terminal, s.spec, s.x, s.lattice, nested);
  EXPECT_LE(h_norm(a.Z[0] - b.Z[0]) / (1.0 + h_norm(a.Z[0])), 0.05);
}
