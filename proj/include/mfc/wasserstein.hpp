#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mfc/common.hpp"
#include "mfc/ensemble.hpp"

namespace mfc {

// W2 between equal-count 1D empirical laws via the sorted (quantile) coupling,
// which attains the infimum in one dimension.
inline double wasserstein2_1d(const EmpiricalLaw& mu, const EmpiricalLaw& nu) {
  require(mu.dim == 1 && nu.dim == 1, ErrorKind::dimension_unsupported,
          "quantile coupling is 1D only");
  require(mu.n_atoms == nu.n_atoms, ErrorKind::shape_mismatch, "wasserstein2_1d atom counts");
  // Atoms are already sorted by the law canonicalization.
  const double s = pairwise_sum_indexed(mu.n_atoms, [&](std::size_t i) {
    const double d = mu.atoms[i] - nu.atoms[i];
    return d * d;
  });
  return std::sqrt(s / static_cast<double>(mu.n_atoms));
}

namespace detail {

// Dense square assignment by shortest augmenting paths with potentials
// (Jonker-Volgenant style). cost is n x n row-major; returns row -> column.
inline std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

// Exact W2 over permutation couplings via optimal assignment on the squared
// distance matrix. Deliberately capped: this is a test oracle, not a solver
// primitive.
inline double wasserstein2_exact_small(const EmpiricalLaw& mu, const EmpiricalLaw& nu) {
  require(mu.n_atoms == nu.n_atoms && mu.dim == nu.dim, ErrorKind::shape_mismatch,
          "wasserstein2_exact_small shapes");
  const std::size_t n = mu.n_atoms;
  require(n <= 512, ErrorKind::too_large, "exact assignment capped at 512 atoms");
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < mu.dim; ++c) {
        const double d = mu.at(i, c) - nu.at(j, c);
        s += d * d;
      }
      cost[i * n + j] = s;
    }
  const auto match = detail::solve_assignment(cost, n);
  const double total =
      pairwise_sum_indexed(n, [&](std::size_t i) { return cost[i * n + match[i]]; });
  return std::sqrt(total / static_cast<double>(n));
}

// Cheap nD surrogate for measure-flow gaps inside iteration loops: mean gap
// plus Frobenius gap of covariances. Exact W2 is reserved for tests.
inline double moment_surrogate_gap(const ParticleEnsemble& a, const ParticleEnsemble& b) {
  const auto ma = ensemble_mean(a), mb = ensemble_mean(b);
  double dm = 0.0;
  for (std::size_t c = 0; c < a.dim; ++c) dm += (ma[c] - mb[c]) * (ma[c] - mb[c]);
  const Mat ca = ensemble_covariance(a), cb = ensemble_covariance(b);
  return std::sqrt(dm + (ca - cb).frobenius());
}

// Gap between measure flows used by the Picard convergence test: 1D uses the
// genuine quantile W2, higher dimensions the moment surrogate.
inline double flow_gap(const ParticleEnsemble& a, const ParticleEnsemble& b) {
  if (a.dim == 1) return wasserstein2_1d(law_of(a), law_of(b));
  return moment_surrogate_gap(a, b);
}

}  // namespace mfc
