#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mfc/rng.hpp"

using namespace mfc;

TEST(Rng, CounterIsDeterministic) {
  const double a = standard_normal(42, RngStream::lattice, 3, 7, 1);
  const double b = standard_normal(42, RngStream::lattice, 3, 7, 1);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, standard_normal(43, RngStream::lattice, 3, 7, 1));
  EXPECT_NE(a, standard_normal(42, RngStream::probe, 3, 7, 1));
  EXPECT_NE(a, standard_normal(42, RngStream::lattice, 3, 7, 2));
}

TEST(Rng, InverseNormalSpotValues) {
  // Reference quantiles of the standard normal.
  EXPECT_NEAR(detail::inverse_normal_cdf(0.5), 0.0, 1e-15);
  EXPECT_NEAR(detail::inverse_normal_cdf(0.975), 1.959963984540054, 1e-9);
  EXPECT_NEAR(detail::inverse_normal_cdf(0.841344746068543), 1.0, 1e-9);
  EXPECT_NEAR(detail::inverse_normal_cdf(1e-10), -6.361340902404056, 1e-6);
  EXPECT_NEAR(detail::inverse_normal_cdf(0.3), -detail::inverse_normal_cdf(0.7), 1e-15);
}

TEST(Rng, MomentsOfCounterNormals) {
  const std::size_t n = 200000;
  double sum = 0.0, sum2 = 0.0, sum3 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = standard_normal(7, RngStream::test, i);
    sum += z;
    sum2 += z * z;
    sum3 += z * z * z;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 5.0 / std::sqrt(double(n)));
  EXPECT_NEAR(var, 1.0, 5.0 * std::sqrt(2.0 / double(n)));
  EXPECT_NEAR(sum3 / n, 0.0, 5.0 * std::sqrt(15.0 / double(n)));
}

TEST(Rng, SeededPermutationIsValidAndStable) {
  const auto p = seeded_permutation(257, 99);
  const auto q = seeded_permutation(257, 99);
  EXPECT_EQ(p, q);
  std::set<std::size_t> seen(p.begin(), p.end());
  EXPECT_EQ(seen.size(), 257u);
  EXPECT_NE(p, seeded_permutation(257, 100));
  bool moved = false;
  for (std::size_t i = 0; i < p.size(); ++i) moved = moved || p[i] != i;
  EXPECT_TRUE(moved);
}
