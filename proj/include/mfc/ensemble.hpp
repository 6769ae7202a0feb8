#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mfc/common.hpp"
#include "mfc/rng.hpp"

namespace mfc {

// ---------------------------------------------------------------------------
// ParticleEnsemble: an element X of H = L^2(Omega; R^n) carried by N uniformly
// weighted particles. Particle index i is the sample point omega_i, so two
// ensembles with the same index pairing live on the same probability space.
// ---------------------------------------------------------------------------

struct ParticleEnsemble {
  std::size_t n_particles = 0;
  std::size_t dim = 0;
  std::vector<double> x;  // n_particles * dim, row-major
  std::string tag;

  ParticleEnsemble() = default;
  ParticleEnsemble(std::size_t n, std::size_t d, double fill = 0.0)
      : n_particles(n), dim(d), x(n * d, fill) {}

  double& at(std::size_t i, std::size_t c) { return x[i * dim + c]; }
  double at(std::size_t i, std::size_t c) const { return x[i * dim + c]; }
  std::span<const double> sample(std::size_t i) const { return {x.data() + i * dim, dim}; }
  double weight() const { return 1.0 / static_cast<double>(n_particles); }

  bool same_shape(const ParticleEnsemble& o) const {
    return n_particles == o.n_particles && dim == o.dim;
  }

  bool all_finite() const {
    for (double v : x)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void require_same_shape(const ParticleEnsemble& a, const ParticleEnsemble& b,
                               const char* where) {
  require(a.same_shape(b), ErrorKind::shape_mismatch, where);
}

// ((X,Y)) = E[X . Y], the H inner product, with a fixed pairwise reduction.
inline double h_inner(const ParticleEnsemble& a, const ParticleEnsemble& b) {
  require_same_shape(a, b, "h_inner");
  const std::size_t n = a.n_particles, d = a.dim;
  const double s = pairwise_sum_indexed(n, [&](std::size_t i) {
    double dot = 0.0;
    for (std::size_t c = 0; c < d; ++c) dot += a.x[i * d + c] * b.x[i * d + c];
    return dot;
  });
  return s / static_cast<double>(n);
}

inline double h_norm(const ParticleEnsemble& a) { return std::sqrt(h_inner(a, a)); }

inline ParticleEnsemble operator+(const ParticleEnsemble& a, const ParticleEnsemble& b) {
  require_same_shape(a, b, "ensemble add");
  ParticleEnsemble r = a;
  for (std::size_t i = 0; i < r.x.size(); ++i) r.x[i] += b.x[i];
  return r;
}

inline ParticleEnsemble operator-(const ParticleEnsemble& a, const ParticleEnsemble& b) {
  require_same_shape(a, b, "ensemble sub");
  ParticleEnsemble r = a;
  for (std::size_t i = 0; i < r.x.size(); ++i) r.x[i] -= b.x[i];
  return r;
}

inline ParticleEnsemble scaled(const ParticleEnsemble& a, double s) {
  ParticleEnsemble r = a;
  for (double& v : r.x) v *= s;
  return r;
}

inline void axpy(ParticleEnsemble& y, double a, const ParticleEnsemble& x) {
  require_same_shape(y, x, "axpy");
  for (std::size_t i = 0; i < y.x.size(); ++i) y.x[i] += a * x.x[i];
}

// Componentwise mean vector of the samples (deterministic reduction).
inline std::vector<double> ensemble_mean(const ParticleEnsemble& a) {
  std::vector<double> m(a.dim);
  for (std::size_t c = 0; c < a.dim; ++c)
    m[c] = pairwise_sum_indexed(a.n_particles, [&](std::size_t i) { return a.at(i, c); }) /
           static_cast<double>(a.n_particles);
  return m;
}

inline Mat ensemble_covariance(const ParticleEnsemble& a) {
  const auto mu = ensemble_mean(a);
  Mat cov(a.dim, a.dim);
  for (std::size_t r = 0; r < a.dim; ++r)
    for (std::size_t c = 0; c < a.dim; ++c)
      cov(r, c) = pairwise_sum_indexed(a.n_particles,
                                       [&](std::size_t i) {
                                         return (a.at(i, r) - mu[r]) * (a.at(i, c) - mu[c]);
                                       }) /
                  static_cast<double>(a.n_particles);
  return cov;
}

// ---------------------------------------------------------------------------
// EmpiricalLaw: the law L_X of an ensemble. Atoms are canonicalized by
// lexicographic sort so every law-level statistic is exactly invariant under
// particle permutation.
// ---------------------------------------------------------------------------

struct EmpiricalLaw {
  std::size_t n_atoms = 0;
  std::size_t dim = 0;
  std::vector<double> atoms;  // sorted lexicographically by sample

  double at(std::size_t i, std::size_t c) const { return atoms[i * dim + c]; }

  std::vector<double> mean() const {
    std::vector<double> m(dim);
    for (std::size_t c = 0; c < dim; ++c)
      m[c] = pairwise_sum_indexed(n_atoms, [&](std::size_t i) { return at(i, c); }) /
             static_cast<double>(n_atoms);
    return m;
  }

  double second_moment() const {
    return pairwise_sum_indexed(n_atoms,
                                [&](std::size_t i) {
                                  double s = 0.0;
                                  for (std::size_t c = 0; c < dim; ++c) s += at(i, c) * at(i, c);
                                  return s;
                                }) /
           static_cast<double>(n_atoms);
  }
};

inline EmpiricalLaw law_of(const ParticleEnsemble& e) {
  EmpiricalLaw l;
  l.n_atoms = e.n_particles;
  l.dim = e.dim;
  std::vector<std::size_t> order(e.n_particles);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    for (std::size_t c = 0; c < e.dim; ++c) {
      if (e.at(a, c) < e.at(b, c)) return true;
      if (e.at(a, c) > e.at(b, c)) return false;
    }
    return a < b;
  });
  l.atoms.resize(e.x.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t c = 0; c < e.dim; ++c) l.atoms[i * e.dim + c] = e.at(order[i], c);
  return l;
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Same empirical law, re-paired against the sample points by a seeded uniform
// permutation; the (X, X~) coupling is then approximately independent while
// the marginal law is preserved exactly.
inline ParticleEnsemble independent_copy(const ParticleEnsemble& e, std::uint64_t seed) {
  require(e.n_particles >= 2, ErrorKind::invalid_dimension, "independent_copy needs N >= 2");
  const auto perm = seeded_permutation(e.n_particles, seed);
  ParticleEnsemble out(e.n_particles, e.dim);
  out.tag = e.tag;
  for (std::size_t i = 0; i < e.n_particles; ++i)
    for (std::size_t c = 0; c < e.dim; ++c) out.at(i, c) = e.at(perm[i], c);
  return out;
}

// Sample-wise image of the ensemble; the output law is the push-forward law.
inline ParticleEnsemble push_forward(
    const ParticleEnsemble& e,
    const std::function<void(std::span<const double>, std::span<double>)>& map) {
  ParticleEnsemble out(e.n_particles, e.dim);
  out.tag = e.tag;
  std::vector<double> buf(e.dim);
  for (std::size_t i = 0; i < e.n_particles; ++i) {
    map(e.sample(i), buf);
    for (std::size_t c = 0; c < e.dim; ++c) {
      require(std::isfinite(buf[c]), ErrorKind::numerical_overflow,
              "push_forward produced a non-finite sample");
      out.at(i, c) = buf[c];
    }
  }
  return out;
}

inline ParticleEnsemble permuted(const ParticleEnsemble& e, std::span<const std::size_t> perm) {
  ParticleEnsemble out(e.n_particles, e.dim);
  out.tag = e.tag;
  for (std::size_t i = 0; i < e.n_particles; ++i)
    for (std::size_t c = 0; c < e.dim; ++c) out.at(i, c) = e.at(perm[i], c);
  return out;
}

// Seeded Gaussian ensemble, optionally stratified: stratified sampling places
// 1D samples at the exact quantile midpoints, killing the O(1/sqrt(N)) error
// of the initial law at the price of a sorted sample order.
inline ParticleEnsemble gaussian_ensemble(std::size_t n, std::size_t dim, std::uint64_t seed,
                                          std::span<const double> mean,
                                          std::span<const double> stddev, bool stratified = false,
                                          RngStream stream = RngStream::initial_ensemble) {
  require(n >= 2 && dim >= 1, ErrorKind::invalid_dimension, "ensemble needs N >= 2, dim >= 1");
  ParticleEnsemble e(n, dim);
  if (stratified && dim == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
      e.at(i, 0) = mean[0] + stddev[0] * detail::inverse_normal_cdf(u);
    }
    return e;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < dim; ++c)
      e.at(i, c) = mean[c] + stddev[c] * standard_normal(seed, stream, i, c);
  return e;
}

inline ParticleEnsemble standard_gaussian_ensemble(std::size_t n, std::size_t dim,
                                                   std::uint64_t seed,
                                                   RngStream stream = RngStream::probe) {
  std::vector<double> zero(dim, 0.0), one(dim, 1.0);
  return gaussian_ensemble(n, dim, seed, zero, one, false, stream);
}

// Sample pairing for antithetic lattices: particle i + N/2 carries the same
// initial sample as particle i, so mirrored increments cancel odd noise terms
// pairwise.
inline ParticleEnsemble duplicate_into_pairs(const ParticleEnsemble& half) {
  ParticleEnsemble out(2 * half.n_particles, half.dim);
  out.tag = half.tag;
  for (std::size_t i = 0; i < half.n_particles; ++i)
    for (std::size_t c = 0; c < half.dim; ++c) {
      out.at(i, c) = half.at(i, c);
      out.at(half.n_particles + i, c) = half.at(i, c);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Columnar CSV: header "particle_index,x_0,..,x_{n-1}".
// ---------------------------------------------------------------------------

inline void write_csv(const ParticleEnsemble& e, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::io_error, "cannot open " + path);
  out << "particle_index";
  for (std::size_t c = 0; c < e.dim; ++c) out << ",x_" << c;
  out << "\n";
  out.precision(17);
  for (std::size_t i = 0; i < e.n_particles; ++i) {
    out << i;
    for (std::size_t c = 0; c < e.dim; ++c) out << "," << e.at(i, c);
    out << "\n";
  }
}

inline ParticleEnsemble read_csv_ensemble(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io_error, "cannot open " + path);
  std::string header;
  std::getline(in, header);
  std::size_t dim = 0;
  for (char ch : header)
    if (ch == ',') ++dim;
  require(dim >= 1, ErrorKind::io_error, "bad ensemble CSV header in " + path);
  std::vector<double> vals;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t pos = line.find(',');
    require(pos != std::string::npos, ErrorKind::io_error, "bad ensemble CSV row");
    std::size_t start = pos + 1;
    for (std::size_t c = 0; c < dim; ++c) {
      std::size_t next = line.find(',', start);
      vals.push_back(std::stod(line.substr(start, next - start)));
      start = (next == std::string::npos) ? line.size() : next + 1;
    }
  }
  ParticleEnsemble e(vals.size() / dim, dim);
  e.x = std::move(vals);
  return e;
}

}  // namespace mfc
