#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mfc/common.hpp"
#include "mfc/rng.hpp"
#include "mfc/time_grid.hpp"

namespace mfc {

// Shared Brownian lattice: one increment ~ N(0, dt) per (step, particle,
// component), generated counter-based so replay under a fixed seed is
// byte-identical and independent of traversal order. Realizes the filtration
// W_t^s at grid resolution.
struct PathLattice {
  TimeGrid grid;
  std::size_t n_particles = 0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  std::size_t step_offset = 0;  // nonzero for tails of a parent lattice
  std::vector<double> increments;  // n_steps * n_particles * dim

  double inc(std::size_t k, std::size_t i, std::size_t c) const {
    return increments[(k * n_particles + i) * dim + c];
  }
  double& inc(std::size_t k, std::size_t i, std::size_t c) {
    return increments[(k * n_particles + i) * dim + c];
  }

  // Sub-lattice from step k on: same increments, so evaluations on [s_k, T]
  // share random numbers with the parent.
  PathLattice tail(std::size_t k) const {
    PathLattice t;
    t.grid = grid.tail(k);
    t.n_particles = n_particles;
    t.dim = dim;
    t.seed = seed;
    t.step_offset = step_offset + k;
    t.increments.assign(increments.begin() + static_cast<std::ptrdiff_t>(k * n_particles * dim),
                        increments.end());
    return t;
  }
};

inline PathLattice brownian_lattice(const TimeGrid& grid, std::size_t n_particles, std::size_t dim,
                                    std::uint64_t seed) {
  require(n_particles >= 2, ErrorKind::invalid_dimension, "lattice needs n_particles >= 2");
  require(dim >= 1, ErrorKind::invalid_dimension, "lattice needs dim >= 1");
  PathLattice lat;
  lat.grid = grid;
  lat.n_particles = n_particles;
  lat.dim = dim;
  lat.seed = seed;
  lat.increments.resize(grid.n_steps * n_particles * dim);
  const double sdt = std::sqrt(grid.dt());
  for (std::size_t k = 0; k < grid.n_steps; ++k)
    for (std::size_t i = 0; i < n_particles; ++i)
      for (std::size_t c = 0; c < dim; ++c)
        lat.inc(k, i, c) = sdt * standard_normal(seed, RngStream::lattice, k, i, c);
  return lat;
}

// Antithetic variant: particle i + N/2 mirrors the increments of particle i.
// Pairs cancel the odd noise couplings exactly, which is what makes small-h
// time differences of the value function resolvable at desk-scale N. Not the
// default lattice: pairs are not independent across particles.
inline PathLattice brownian_lattice_antithetic(const TimeGrid& grid, std::size_t n_particles,
                                               std::size_t dim, std::uint64_t seed) {
  require(n_particles % 2 == 0, ErrorKind::invalid_dimension,
          "antithetic lattice needs an even particle count");
  PathLattice lat = brownian_lattice(grid, n_particles, dim, seed);
  const std::size_t half = n_particles / 2;
  for (std::size_t k = 0; k < grid.n_steps; ++k)
    for (std::size_t i = 0; i < half; ++i)
      for (std::size_t c = 0; c < dim; ++c) lat.inc(k, half + i, c) = -lat.inc(k, i, c);
  return lat;
}

// Re-draws increments for steps >= k with a different salt; the adaptedness
// tests use this to confirm nothing below step k looks ahead.
inline PathLattice rerandomized_tail_increments(const PathLattice& lat, std::size_t from_step,
                                                std::uint64_t salt) {
  PathLattice out = lat;
  const double sdt = std::sqrt(lat.grid.dt());
  for (std::size_t k = from_step; k < lat.grid.n_steps; ++k)
    for (std::size_t i = 0; i < lat.n_particles; ++i)
      for (std::size_t c = 0; c < lat.dim; ++c)
        out.inc(k, i, c) = sdt * standard_normal(lat.seed ^ salt, RngStream::lattice, k, i, c);
  return out;
}

}  // namespace mfc
