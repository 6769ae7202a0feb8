#include <gtest/gtest.h>

#include <cmath>

#include "mfc/ensemble.hpp"
#include "mfc/lattice.hpp"
#include "mfc/wasserstein.hpp"

using namespace mfc;

namespace {

ParticleEnsemble from_values_1d(std::initializer_list<double> vals) {
  ParticleEnsemble e(vals.size(), 1);
  std::size_t i = 0;
  for (double v : vals) e.at(i++, 0) = v;
  return e;
}

}  // namespace

TEST(Ensemble, InnerProductExamples) {
  ParticleEnsemble ones(3, 2, 1.0);
  EXPECT_DOUBLE_EQ(h_inner(ones, ones), 2.0);

  ParticleEnsemble zero(3, 2, 0.0);
  ParticleEnsemble arbitrary(3, 2);
  arbitrary.at(0, 0) = 4.2;
  arbitrary.at(2, 1) = -1.0;
  EXPECT_DOUBLE_EQ(h_inner(arbitrary, zero), 0.0);

  const ParticleEnsemble x = from_values_1d({1.0, -1.0});
  const ParticleEnsemble y = from_values_1d({2.0, 2.0});
  EXPECT_DOUBLE_EQ(h_inner(x, y), 0.0);  // mean of {2, -2}

  ParticleEnsemble other(4, 1);
  EXPECT_THROW(h_inner(x, other), Error);
}

TEST(Ensemble, LawCanonicalizationMakesStatisticsPermutationInvariant) {
  ParticleEnsemble e(64, 2);
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t c = 0; c < 2; ++c)
      e.at(i, c) = standard_normal(5, RngStream::test, i, c);
  const auto perm = seeded_permutation(64, 17);
  const ParticleEnsemble p = permuted(e, perm);
  const EmpiricalLaw a = law_of(e), b = law_of(p);
  EXPECT_EQ(a.atoms, b.atoms);  // bit-identical after canonical sort
  EXPECT_EQ(a.mean(), b.mean());
  EXPECT_DOUBLE_EQ(wasserstein2_exact_small(a, b), 0.0);
}

TEST(Ensemble, IndependentCopyPreservesLawAndDecouples) {
  const std::size_t n = 20000;
  ParticleEnsemble e(n, 1);
  for (std::size_t i = 0; i < n; ++i)
    e.at(i, 0) = 1.5 + standard_normal(11, RngStream::test, i);
  const ParticleEnsemble tilde = independent_copy(e, 3);
  EXPECT_EQ(law_of(e).atoms, law_of(tilde).atoms);  // same multiset exactly
  EXPECT_EQ(independent_copy(e, 3).x, tilde.x);     // determinism contract

  // E[X Xt] ~= (E X)^2 within 5 Var / sqrt(N): product of means under the
  // permutation coupling.
  const double prod = h_inner(e, tilde);
  const double mean = ensemble_mean(e)[0];
  EXPECT_NEAR(prod, mean * mean, 5.0 * 1.0 / std::sqrt(double(n)));
}

TEST(Ensemble, PushForwardExamples) {
  const ParticleEnsemble e = from_values_1d({1.0, 3.0});
  const auto identity = push_forward(
      e, [](std::span<const double> in, std::span<double> out) { out[0] = in[0]; });
  EXPECT_EQ(identity.x, e.x);

  const auto shifted = push_forward(
      e, [](std::span<const double> in, std::span<double> out) { out[0] = in[0] + 2.5; });
  EXPECT_DOUBLE_EQ(ensemble_mean(shifted)[0], ensemble_mean(e)[0] + 2.5);

  const auto doubled = push_forward(
      e, [](std::span<const double> in, std::span<double> out) { out[0] = 2.0 * in[0]; });
  const double w2 = wasserstein2_1d(law_of(e), law_of(doubled));
  EXPECT_NEAR(w2, std::sqrt((1.0 + 9.0) / 2.0), 1e-15);

  EXPECT_THROW(push_forward(e,
                            [](std::span<const double>, std::span<double> out) {
                              out[0] = std::numeric_limits<double>::infinity();
                            }),
               Error);
}

TEST(Lattice, DeterministicReplayAndTail) {
  const TimeGrid grid(0.0, 1.0, 10);
  const PathLattice a = brownian_lattice(grid, 4, 1, 7);
  const PathLattice b = brownian_lattice(grid, 4, 1, 7);
  EXPECT_EQ(a.increments, b.increments);  // byte-identical replay
  EXPECT_NE(a.increments, brownian_lattice(grid, 4, 1, 8).increments);

  const PathLattice t = a.tail(3);
  EXPECT_DOUBLE_EQ(t.grid.t_start, grid.point(3));
  EXPECT_EQ(t.grid.n_steps, 7u);
  EXPECT_EQ(t.inc(0, 2, 0), a.inc(3, 2, 0));

  EXPECT_THROW(brownian_lattice(grid, 1, 1, 7), Error);
  EXPECT_THROW(brownian_lattice(grid, 4, 0, 7), Error);
}

TEST(Lattice, IncrementMomentsMatchStepVariance) {
  const TimeGrid grid(0.0, 1.0, 10);  // dt = 0.1
  const std::size_t n = 100000;
  const PathLattice lat = brownian_lattice(grid, n, 1, 123);
  const double dt = grid.dt();
  for (std::size_t k : {std::size_t{0}, std::size_t{5}}) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += lat.inc(k, i, 0);
      s2 += lat.inc(k, i, 0) * lat.inc(k, i, 0);
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    EXPECT_NEAR(mean, 0.0, 5.0 * std::sqrt(dt / double(n)));
    EXPECT_NEAR(var, dt, 5.0 * dt / std::sqrt(double(n)));
  }
}

TEST(Lattice, RerandomizedTailLeavesHeadUntouched) {
  const TimeGrid grid(0.0, 1.0, 8);
  const PathLattice lat = brownian_lattice(grid, 16, 2, 5);
  const PathLattice re = rerandomized_tail_increments(lat, 5, 0xfeed);
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(re.inc(k, i, c), lat.inc(k, i, c));
  EXPECT_NE(re.inc(5, 0, 0), lat.inc(5, 0, 0));
}

TEST(Ensemble, CsvRoundTrip) {
  ParticleEnsemble e(5, 2);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 2; ++c)
      e.at(i, c) = standard_normal(1, RngStream::test, i, c);
  const std::string path = testing::TempDir() + "ensemble_rt.csv";
  write_csv(e, path);
  const ParticleEnsemble back = read_csv_ensemble(path);
  ASSERT_EQ(back.n_particles, e.n_particles);
  ASSERT_EQ(back.dim, e.dim);
  for (std::size_t i = 0; i < e.x.size(); ++i) EXPECT_EQ(back.x[i], e.x[i]);
}

TEST(Ensemble, StratifiedGaussianMatchesMomentsTightly) {
  const auto e =
      gaussian_ensemble(4096, 1, 9, std::vector<double>{0.3}, std::vector<double>{1.0}, true);
  EXPECT_NEAR(ensemble_mean(e)[0], 0.3, 1e-12);
  const Mat cov = ensemble_covariance(e);
  EXPECT_NEAR(cov(0, 0), 1.0, 2e-3);  // quantile midpoints shave the tails slightly
}
