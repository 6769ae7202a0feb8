#include <gtest/gtest.h>

#include <cmath>

#include "mfc/functional.hpp"

using namespace mfc;

namespace {

ParticleEnsemble random_ensemble(std::size_t n, std::size_t dim, std::uint64_t tag,
                                 double shift = 0.0) {
  ParticleEnsemble e(n, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < dim; ++c)
      e.at(i, c) = shift + standard_normal(13, RngStream::test, tag, i, c);
  return e;
}

ParticleEnsemble atoms_1d(std::initializer_list<double> vals) {
  ParticleEnsemble e(vals.size(), 1);
  std::size_t i = 0;
  for (double v : vals) e.at(i++, 0) = v;
  return e;
}

FunctionalPtr pure_quadratic_1d() { return QuadraticMeanField::isotropic(1, 1.0, 0.0, 0.0, 0.0); }
FunctionalPtr mean_coupled_1d() { return QuadraticMeanField::isotropic(1, 0.0, 0.0, 1.0, 0.0); }
FunctionalPtr full_quadratic_1d() {
  return QuadraticMeanField::isotropic(1, 0.8, 0.2, 0.3, 0.15);
}
FunctionalPtr stress_1d() { return std::make_shared<StressCosine>(1, 0.2, 1.0, 0.3); }

}  // namespace

TEST(Functionals, EvalExamples) {
  const ZeroFunctional zero(1);
  const ParticleEnsemble any = random_ensemble(32, 1, 1);
  EXPECT_DOUBLE_EQ(eval_F(zero, any), 0.0);

  EXPECT_DOUBLE_EQ(eval_F(*pure_quadratic_1d(), atoms_1d({1.0, -1.0})), 0.5);

  // f = x * mean(m): atoms {1, 3} -> mean 2, values {2, 6}, F = 4.
  EXPECT_DOUBLE_EQ(eval_F(*mean_coupled_1d(), atoms_1d({1.0, 3.0})), 4.0);
}

TEST(Functionals, EvalIsExactlyPermutationInvariant) {
  const FunctionalPtr f = full_quadratic_1d();
  const ParticleEnsemble x = random_ensemble(257, 1, 2);
  const auto perm = seeded_permutation(257, 4);
  EXPECT_EQ(eval_F(*f, x), eval_F(*f, permuted(x, perm)));
}

TEST(Functionals, GradExamples) {
  const ParticleEnsemble x = atoms_1d({1.0, 3.0, -2.0});
  const ParticleEnsemble g_pure = grad_F(*pure_quadratic_1d(), x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g_pure.at(i, 0), x.at(i, 0));

  const ParticleEnsemble g_zero = grad_F(ZeroFunctional(1), x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g_zero.at(i, 0), 0.0);

  // f = x * mean: gradient is 2 * mean(m) for every particle.
  const ParticleEnsemble g_mean = grad_F(*mean_coupled_1d(), x);
  const double mean = ensemble_mean(x)[0];
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g_mean.at(i, 0), 2.0 * mean);
}

TEST(Functionals, GradMeasurability) {
  // Identical sample values must receive identical gradient values, exactly.
  ParticleEnsemble x = random_ensemble(16, 2, 3);
  for (std::size_t c = 0; c < 2; ++c) x.at(7, c) = x.at(2, c);
  for (const FunctionalPtr& f :
       {full_quadratic_1d(), stress_1d()}) {
    if (f->dim() != 2) continue;
  }
  const auto f2 = std::make_shared<QuadraticMeanField>(
      "q2", Mat::identity(2, 0.7), std::vector<double>{0.1, -0.2}, Mat::identity(2, 0.4), 0.3);
  const ParticleEnsemble g = grad_F(*f2, x);
  for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(g.at(7, c), g.at(2, c));
  const auto s2 = std::make_shared<StressCosine>(2, 0.2, 1.0, 0.3);
  const ParticleEnsemble gs = grad_F(*s2, x);
  for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(gs.at(7, c), gs.at(2, c));
}

TEST(Functionals, FdGradientAgreesWithAnalytic) {
  const std::size_t n = 256;
  for (const FunctionalPtr& f : {full_quadratic_1d(), mean_coupled_1d(), stress_1d()}) {
    const ParticleEnsemble x = random_ensemble(n, 1, 5, 0.2);
    const double step = 1e-4 * (1.0 + h_norm(x));
    const ParticleEnsemble g = grad_F(*f, x);
    const ParticleEnsemble gfd = fd_gateaux_grad(*f, x, step);
    EXPECT_LE(h_norm(g - gfd) / (1.0 + h_norm(g)), 1e-4) << f->name();
  }
  // ZERO functional: exactly zero.
  const ParticleEnsemble x = random_ensemble(32, 1, 6);
  const ParticleEnsemble gfd = fd_gateaux_grad(ZeroFunctional(1), x, 1e-4);
  EXPECT_DOUBLE_EQ(h_norm(gfd), 0.0);
}

TEST(Functionals, FdStepHalvingShowsSecondOrderOnStressEntry) {
  // The quadratic family differentiates exactly (third derivative zero), so
  // the convergence-rate measurement runs on the stress entry.
  const FunctionalPtr f = stress_1d();
  const ParticleEnsemble x = random_ensemble(64, 1, 7, 0.3);
  const ParticleEnsemble g = grad_F(*f, x);
  const double e1 = h_norm(fd_gateaux_grad(*f, x, 2e-2) - g);
  const double e2 = h_norm(fd_gateaux_grad(*f, x, 1e-2) - g);
  EXPECT_NEAR(e1 / e2, 4.0, 0.4);
}

TEST(Functionals, FdStepTooSmallIsDetected) {
  const ParticleEnsemble x = random_ensemble(16, 1, 8);
  EXPECT_THROW(fd_gateaux_grad(*pure_quadratic_1d(), x, 1e-12), Error);
  EXPECT_THROW(fd_gateaux_grad(*pure_quadratic_1d(), x, 0.0), Error);
}

TEST(Functionals, HessActionExamples) {
  const ParticleEnsemble x = random_ensemble(64, 1, 9);
  const ParticleEnsemble z = random_ensemble(64, 1, 10);
  // Identity Hessian: Gamma Z = Z.
  const ParticleEnsemble hz = hess_action(*pure_quadratic_1d(), x, z);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_DOUBLE_EQ(hz.at(i, 0), z.at(i, 0));
  // Z = 0 -> 0 by linearity.
  const ParticleEnsemble zero(64, 1);
  EXPECT_DOUBLE_EQ(h_norm(hess_action(*full_quadratic_1d(), x, zero)), 0.0);
  // Mean coupling: Gamma Z = Q Z + (S + S^T) mean(Z) here with Q = 0.
  const ParticleEnsemble hm = hess_action(*mean_coupled_1d(), x, z);
  const double zbar = ensemble_mean(z)[0];
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(hm.at(i, 0), 2.0 * zbar, 1e-14);
}

TEST(Functionals, HessActionMatchesFdOfGradient) {
  for (const FunctionalPtr& f : {full_quadratic_1d(), stress_1d()}) {
    const ParticleEnsemble x = random_ensemble(128, 1, 11, 0.1);
    const ParticleEnsemble z = random_ensemble(128, 1, 12);
    const double eps = 1e-5;
    ParticleEnsemble xp = x, xm = x;
    axpy(xp, eps, z);
    axpy(xm, -eps, z);
    const ParticleEnsemble fd = scaled(grad_F(*f, xp) - grad_F(*f, xm), 0.5 / eps);
    const ParticleEnsemble hz = hess_action(*f, x, z);
    EXPECT_LE(h_norm(hz - fd) / (1.0 + h_norm(hz)), 1e-7) << f->name();
  }
}

TEST(Functionals, HessActionLinearity) {
  const FunctionalPtr f = stress_1d();
  const ParticleEnsemble x = random_ensemble(64, 1, 13);
  const ParticleEnsemble z1 = random_ensemble(64, 1, 14);
  const ParticleEnsemble z2 = random_ensemble(64, 1, 15);
  ParticleEnsemble combo = scaled(z1, 1.7);
  axpy(combo, -0.6, z2);
  const ParticleEnsemble lhs = hess_action(*f, x, combo);
  ParticleEnsemble rhs = scaled(hess_action(*f, x, z1), 1.7);
  axpy(rhs, -0.6, hess_action(*f, x, z2));
  EXPECT_LE(h_norm(lhs - rhs), 1e-12);
}

TEST(Functionals, MixedTermEstimatorsAgree) {
  for (const FunctionalPtr& f : {full_quadratic_1d(), stress_1d()}) {
    const std::size_t n = 512;
    const ParticleEnsemble x = random_ensemble(n, 1, 16);
    const ParticleEnsemble z = random_ensemble(n, 1, 17);
    const ParticleEnsemble exact = hess_action(*f, x, z);
    // Separable kernels: the double average reproduces the closed form.
    const ParticleEnsemble dsum = hess_action_double_sum(*f, x, z);
    EXPECT_LE(h_norm(exact - dsum), 1e-12) << f->name();
    // One permutation copy: unbiased, so inner products agree to MC accuracy.
    const ParticleEnsemble perm = hess_action_permutation(*f, x, z, 21);
    const ParticleEnsemble y = random_ensemble(n, 1, 18);
    EXPECT_NEAR(h_inner(perm, y), h_inner(exact, y), 5.0 / std::sqrt(double(n))) << f->name();
  }
  const ParticleEnsemble big = random_ensemble(1025, 1, 19);
  EXPECT_THROW(hess_action_double_sum(*stress_1d(), big, big), Error);
}

TEST(Functionals, BilinearFormSymmetryAndGammaConsistency) {
  for (const FunctionalPtr& f : {full_quadratic_1d(), stress_1d()}) {
    for (std::uint64_t trial = 0; trial < 25; ++trial) {
      const ParticleEnsemble x = random_ensemble(96, 1, 100 + 3 * trial);
      const ParticleEnsemble z = random_ensemble(96, 1, 101 + 3 * trial);
      const ParticleEnsemble y = random_ensemble(96, 1, 102 + 3 * trial);
      const double bzy = bilinear_B(*f, x, z, y);
      const double byz = bilinear_B(*f, x, y, z);
      EXPECT_LE(std::abs(bzy - byz), 1e-10 * (1.0 + std::abs(bzy))) << f->name();
      EXPECT_LE(std::abs(h_inner(gamma_action(*f, x, z), y) - bzy),
                1e-12 * (1.0 + std::abs(bzy)))
          << f->name();
    }
  }
  // Pure quadratic: B(X)(Z,Y) = ((Z,Y)); Z = 0 -> 0.
  const ParticleEnsemble x = random_ensemble(64, 1, 600);
  const ParticleEnsemble z = random_ensemble(64, 1, 601);
  const ParticleEnsemble y = random_ensemble(64, 1, 602);
  EXPECT_NEAR(bilinear_B(*pure_quadratic_1d(), x, z, y), h_inner(z, y), 1e-14);
  EXPECT_DOUBLE_EQ(bilinear_B(*pure_quadratic_1d(), x, ParticleEnsemble(64, 1), y), 0.0);
}

TEST(Functionals, ThirdActionQuadraticIsZeroAndStressMatchesFd) {
  const ParticleEnsemble x = random_ensemble(96, 1, 700, 0.2);
  const ParticleEnsemble xi = random_ensemble(96, 1, 701);
  const ParticleEnsemble ups = random_ensemble(96, 1, 702);
  EXPECT_DOUBLE_EQ(h_norm(third_action(*full_quadratic_1d(), x, xi, ups)), 0.0);
  EXPECT_DOUBLE_EQ(h_norm(third_action(*stress_1d(), x, ParticleEnsemble(96, 1), ups)), 0.0);

  const FunctionalPtr f = stress_1d();
  const double eps = 1e-5;
  ParticleEnsemble xp = x, xm = x;
  axpy(xp, eps, ups);
  axpy(xm, -eps, ups);
  const ParticleEnsemble fd =
      scaled(hess_action(*f, xp, xi) - hess_action(*f, xm, xi), 0.5 / eps);
  const ParticleEnsemble t3 = third_action(*f, x, xi, ups);
  EXPECT_LE(h_norm(t3 - fd) / (1.0 + h_norm(t3)), 1e-7);
}

TEST(Functionals, SecondOrderTaylor) {
  const ParticleEnsemble x = random_ensemble(128, 1, 800);
  const ParticleEnsemble y = random_ensemble(128, 1, 801);
  EXPECT_LE(second_order_taylor_residual(*full_quadratic_1d(), x, y, 0.1), 1e-10);
  EXPECT_DOUBLE_EQ(second_order_taylor_residual(*stress_1d(), x, y, 0.0), 0.0);
  const double r1 = second_order_taylor_residual(*stress_1d(), x, y, 0.1);
  const double r2 = second_order_taylor_residual(*stress_1d(), x, y, 0.05);
  EXPECT_GE(r1 / r2, std::pow(2.0, 2.5));  // cubic decay for delta = 1
}

TEST(Functionals, LambdaTExamples) {
  FunctionalBounds convex;  // c' = c'_T = 0
  EXPECT_DOUBLE_EQ(lambda_T(1.0, 0.7, convex), 1.0);
  FunctionalBounds b1;
  b1.c_prime = 1.0;
  EXPECT_DOUBLE_EQ(lambda_T(1.0, 0.5, b1), 0.5);
  FunctionalBounds b2;
  b2.c_T_prime = 2.0;
  EXPECT_DOUBLE_EQ(lambda_T(1.0, 1.0, b2), 0.0);
}

TEST(Functionals, ValidateBoundsFlagsUnderdeclaredConstants) {
  const ZeroFunctional zero(1);
  FunctionalBounds declared = pair_bounds(zero, zero);
  const BoundsReport zr = validate_bounds(zero, declared, false, 10, 1);
  EXPECT_TRUE(zr.ok());
  EXPECT_DOUBLE_EQ(zr.worst_lipschitz_ratio, 0.0);

  const FunctionalPtr pq = pure_quadratic_1d();
  declared = pair_bounds(*pq, *pq);
  const BoundsReport qr = validate_bounds(*pq, declared, false, 20, 2);
  EXPECT_TRUE(qr.ok());
  EXPECT_LE(qr.worst_lipschitz_ratio, 1.0 + 1e-9);

  // f = |x|^2 has gradient Lipschitz constant 2; declaring 0.5 must flag.
  const FunctionalPtr strong = QuadraticMeanField::isotropic(1, 2.0, 0.0, 0.0, 0.0);
  FunctionalBounds liar;
  liar.c = 0.5;
  const BoundsReport lr = validate_bounds(*strong, liar, false, 20, 3);
  EXPECT_FALSE(lr.ok());
}

TEST(Functionals, GrowthBound) {
  for (const FunctionalPtr& f : {full_quadratic_1d(), stress_1d()}) {
    const EntryConstants k = f->constants();
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
      const ParticleEnsemble x = random_ensemble(64, 1, 900 + trial, 0.5);
      EXPECT_LE(h_norm(grad_F(*f, x)), k.growth * (1.0 + h_norm(x)) + 1e-12) << f->name();
    }
  }
}
