#pragma once

#include <cmath>
#include <cstddef>

#include "mfc/common.hpp"

namespace mfc {

// Uniform grid on [t_start, t_end]; point(n_steps) lands on t_end exactly.
struct TimeGrid {
  double t_start = 0.0;
  double t_end = 1.0;
  std::size_t n_steps = 1;

  TimeGrid() = default;
  TimeGrid(double t0, double t1, std::size_t steps) : t_start(t0), t_end(t1), n_steps(steps) {
    require(steps >= 1, ErrorKind::invalid_dimension, "time grid needs at least one step");
    require(t1 > t0, ErrorKind::invalid_dimension, "time grid needs t_end > t_start");
  }

  double dt() const { return (t_end - t_start) / static_cast<double>(n_steps); }
  double horizon() const { return t_end - t_start; }

  double point(std::size_t k) const {
    if (k == n_steps) return t_end;  // no accumulation drift at the right end
    return t_start + static_cast<double>(k) * dt();
  }

  // Sub-grid starting at step k, keeping the right endpoint bit-exact.
  TimeGrid tail(std::size_t k) const {
    require(k < n_steps, ErrorKind::invalid_dimension, "tail start past grid end");
    return TimeGrid(point(k), t_end, n_steps - k);
  }
};

}  // namespace mfc
