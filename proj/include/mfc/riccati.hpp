#pragma once

#include <cmath>
#include <cstddef>

#include "mfc/common.hpp"

namespace mfc {

// Closed-form scalar Riccati data for the linear-quadratic oracle problem
//   running cost (qf/2)|x|^2, terminal cost (qT/2)|x|^2, control cost
//   (lambda/2)|v|^2, isotropic noise sigma = s0 I on dimension n.
// The costate scale P solves dP/ds = P^2/lambda - qf with P(T) = qT, so
//   Z(s) = P(s) Y(s),  u = -Z/lambda,
//   V(X,t) = (P(t)/2)||X||^2 + (n s0^2 / 2) * int_t^T P(s) ds.
struct RiccatiOracle {
  double lambda = 1.0;
  double q_running = 0.0;
  double q_terminal = 1.0;
  double t_end = 1.0;

  double p(double s) const {
    const double tau = t_end - s;
    if (q_running == 0.0) return lambda * q_terminal / (lambda + q_terminal * tau);
    const double omega = std::sqrt(q_running / lambda);
    const double r = std::sqrt(lambda * q_running);
    const double th = std::tanh(omega * tau);
    return r * (q_terminal + r * th) / (r + q_terminal * th);
  }

  // int_t^T P(s) ds; closed form when qf = 0, Simpson quadrature otherwise
  // (P is smooth, so a fine fixed rule is plenty for oracle purposes).
  double p_integral(double t) const {
    const double tau = t_end - t;
    if (tau <= 0.0) return 0.0;
    if (q_running == 0.0) return lambda * std::log((lambda + q_terminal * tau) / lambda);
    const std::size_t m = 2048;
    const double h = tau / static_cast<double>(m);
    double s = p(t) + p(t_end);
    for (std::size_t k = 1; k < m; ++k) s += (k % 2 == 1 ? 4.0 : 2.0) * p(t + k * h);
    return s * h / 3.0;
  }

  double value(double t, double x_norm2, double s0, std::size_t dim) const {
    return 0.5 * p(t) * x_norm2 +
           0.5 * static_cast<double>(dim) * s0 * s0 * p_integral(t);
  }

  // d/dt of the noise integral, used by Bellman-side hand checks.
  double value_time_derivative(double t, double x_norm2, double s0, std::size_t dim) const {
    const double pt = p(t);
    const double pdot = pt * pt / lambda - q_running;
    return 0.5 * pdot * x_norm2 - 0.5 * static_cast<double>(dim) * s0 * s0 * pt;
  }
};

}  // namespace mfc
