#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mfc/common.hpp"
#include "mfc/ensemble.hpp"

namespace mfc {

enum class ConditionalMode { regression, exact_nested };

// How E[. | W^s] is realized: polynomial regression on the state (default,
// exact for the quadratic family), or nested resimulation as a small-N oracle.
struct RegressionSpec {
  std::size_t degree = 2;
  double ridge = 1e-10;
  ConditionalMode mode = ConditionalMode::regression;
};

// ---------------------------------------------------------------------------
// Polynomial feature basis: all monomials of total degree <= degree in the
// conditioning state, with train-time centering/scaling for conditioning of
// the normal equations.
// ---------------------------------------------------------------------------

class PolyBasis {
 public:
  PolyBasis(std::size_t dim, std::size_t degree) : dim_(dim), degree_(degree) {
    require(degree >= 1, ErrorKind::config_invalid, "regression degree must be >= 1");
    std::vector<std::size_t> expo(dim, 0);
    enumerate(expo, 0, degree_);
  }

  std::size_t size() const { return exponents_.size() / dim_; }

  void eval(std::span<const double> x, std::span<double> out) const {
    const std::size_t p = size();
    for (std::size_t j = 0; j < p; ++j) {
      double v = 1.0;
      for (std::size_t c = 0; c < dim_; ++c) {
        const std::size_t e = exponents_[j * dim_ + c];
        for (std::size_t k = 0; k < e; ++k) v *= x[c];
      }
      out[j] = v;
    }
  }

 private:
  void enumerate(std::vector<std::size_t>& expo, std::size_t pos, std::size_t budget) {
    if (pos == dim_) {
      exponents_.insert(exponents_.end(), expo.begin(), expo.end());
      return;
    }
    for (std::size_t e = 0; e <= budget; ++e) {
      expo[pos] = e;
      enumerate(expo, pos + 1, budget - e);
    }
    expo[pos] = 0;
  }

  std::size_t dim_, degree_;
  std::vector<std::size_t> exponents_;
};

// Ridge least squares of multi-component targets on a feature matrix. The
// fitted-value map is linear in the targets for a fixed design, which the
// derivative solvers rely on.
class RidgeFit {
 public:
  // features: n x p row-major. Columns are standardized internally (constant
  // columns are left alone); the ridge acts on the standardized scale.
  RidgeFit(std::vector<double> features, std::size_t n, std::size_t p, double ridge)
      : feats_(std::move(features)), n_(n), p_(p) {
    require(n_ >= 2, ErrorKind::singular_regression, "regression needs at least two samples");
    mu_.assign(p_, 0.0);
    sc_.assign(p_, 1.0);
    for (std::size_t j = 0; j < p_; ++j) {
      mu_[j] = pairwise_sum_indexed(n_, [&](std::size_t i) { return feats_[i * p_ + j]; }) /
               static_cast<double>(n_);
      const double var =
          pairwise_sum_indexed(n_,
                               [&](std::size_t i) {
                                 const double d = feats_[i * p_ + j] - mu_[j];
                                 return d * d;
                               }) /
          static_cast<double>(n_);
      if (var > 1e-28) sc_[j] = 1.0 / std::sqrt(var);
      else { mu_[j] = (j == 0) ? 0.0 : mu_[j]; sc_[j] = (j == 0) ? 1.0 : 0.0; }
      // sc == 0 zeroes a degenerate column; the ridge keeps the system SPD.
    }
    for (std::size_t i = 0; i < n_; ++i) {
      feats_[i * p_] = 1.0;  // column 0 is the intercept, never standardized
      for (std::size_t j = 1; j < p_; ++j)
        feats_[i * p_ + j] = (feats_[i * p_ + j] - mu_[j]) * sc_[j];
    }
    gram_ = Mat(p_, p_);
    for (std::size_t a = 0; a < p_; ++a)
      for (std::size_t b = a; b < p_; ++b) {
        const double g = pairwise_sum_indexed(
            n_, [&](std::size_t i) { return feats_[i * p_ + a] * feats_[i * p_ + b]; });
        gram_(a, b) = g;
        gram_(b, a) = g;
      }
    const double tr = std::max(1.0, gram_(0, 0));
    for (std::size_t a = 0; a < p_; ++a) gram_(a, a) += ridge * tr;
  }

  // Fitted values of one target column at the training points.
  std::vector<double> fit_predict(std::span<const double> target) const {
    std::vector<double> rhs(p_);
    for (std::size_t a = 0; a < p_; ++a)
      rhs[a] = pairwise_sum_indexed(n_,
                                    [&](std::size_t i) { return feats_[i * p_ + a] * target[i]; });
    const std::vector<double> beta = solve_spd(gram_, std::move(rhs));
    std::vector<double> out(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      double v = 0.0;
      for (std::size_t a = 0; a < p_; ++a) v += feats_[i * p_ + a] * beta[a];
      out[i] = v;
    }
    return out;
  }

 private:
  std::vector<double> feats_;
  std::size_t n_, p_;
  std::vector<double> mu_, sc_;
  Mat gram_;
};

// Regression realization of E[target | state]: one design per step, one fit
// per target component.
class StateConditioner {
 public:
  StateConditioner(const ParticleEnsemble& state, const RegressionSpec& spec)
      : basis_(state.dim, spec.degree) {
    const std::size_t n = state.n_particles, p = basis_.size();
    std::vector<double> feats(n * p);
    for (std::size_t i = 0; i < n; ++i)
      basis_.eval(state.sample(i), {feats.data() + i * p, p});
    fit_ = std::make_unique<RidgeFit>(std::move(feats), n, p, spec.ridge);
    dim_ = state.dim;
    n_ = n;
  }

  ParticleEnsemble apply(const ParticleEnsemble& target) const {
    require(target.n_particles == n_, ErrorKind::shape_mismatch, "conditioner target count");
    ParticleEnsemble out(n_, target.dim);
    std::vector<double> col(n_);
    for (std::size_t c = 0; c < target.dim; ++c) {
      for (std::size_t i = 0; i < n_; ++i) col[i] = target.at(i, c);
      const std::vector<double> fitted = fit_->fit_predict(col);
      for (std::size_t i = 0; i < n_; ++i) out.at(i, c) = fitted[i];
    }
    return out;
  }

 private:
  PolyBasis basis_;
  std::unique_ptr<RidgeFit> fit_;
  std::size_t dim_ = 0, n_ = 0;
};

// ---------------------------------------------------------------------------
// Piecewise-linear 1D interpolant with affine extrapolation; the function
// representation used by the nested conditional-expectation oracle. Exact for
// affine ground truth, which covers the quadratic family.
// ---------------------------------------------------------------------------

class Interp1D {
 public:
  Interp1D(std::vector<double> xs, std::vector<double> ys) : x_(std::move(xs)), y_(std::move(ys)) {
    require(x_.size() == y_.size() && x_.size() >= 2, ErrorKind::shape_mismatch, "interp sizes");
    std::vector<std::size_t> order(x_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return x_[a] < x_[b] || (x_[a] == x_[b] && a < b);
    });
    std::vector<double> xs2(x_.size()), ys2(x_.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      xs2[i] = x_[order[i]];
      ys2[i] = y_[order[i]];
    }
    x_ = std::move(xs2);
    y_ = std::move(ys2);
  }

  double operator()(double x) const {
    const std::size_t n = x_.size();
    std::size_t hi = std::upper_bound(x_.begin(), x_.end(), x) - x_.begin();
    if (hi == 0) hi = 1;
    if (hi >= n) hi = n - 1;
    std::size_t lo = hi - 1;
    // Skip over ties to keep the slope finite.
    while (x_[hi] == x_[lo] && hi + 1 < n) ++hi;
    while (x_[hi] == x_[lo] && lo > 0) --lo;
    const double span = x_[hi] - x_[lo];
    if (span == 0.0) return y_[lo];
    const double t = (x - x_[lo]) / span;
    return y_[lo] + t * (y_[hi] - y_[lo]);
  }

 private:
  std::vector<double> x_, y_;
};

}  // namespace mfc
