#pragma once

#include <vector>

#include "mfc/common.hpp"
#include "mfc/ensemble.hpp"
#include "mfc/lattice.hpp"
#include "mfc/time_grid.hpp"

namespace mfc {

// Control-problem data: control cost weight lambda, the (possibly singular)
// n x n noise matrix sigma, and the horizon grid.
struct ProblemSpec {
  double lambda = 1.0;
  Mat sigma;  // n x n
  std::size_t dim = 1;
  TimeGrid horizon;

  ProblemSpec() : sigma(Mat::identity(1, 0.0)) {}
  ProblemSpec(double lam, Mat sig, std::size_t d, TimeGrid grid)
      : lambda(lam), sigma(std::move(sig)), dim(d), horizon(grid) {
    require(lambda > 0.0, ErrorKind::config_invalid, "lambda must be positive");
    require(sigma.rows == d && sigma.cols == d, ErrorKind::shape_mismatch, "sigma must be n x n");
    for (double v : sigma.a)
      require(std::isfinite(v), ErrorKind::config_invalid, "sigma entries must be finite");
  }

  static ProblemSpec isotropic(double lam, double s0, std::size_t d, TimeGrid grid) {
    return ProblemSpec(lam, Mat::identity(d, s0), d, grid);
  }

  bool sigma_is_zero() const {
    for (double v : sigma.a)
      if (v != 0.0) return false;
    return true;
  }

  // sigma * increment, applied per particle when rolling states forward.
  void apply_sigma(const double* dw, double* out) const { sigma.apply(dw, out); }
};

}  // namespace mfc
