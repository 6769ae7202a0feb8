#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfc {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto process exit codes, so solver and
// config failures must stay distinguishable from plain logic errors.
// ---------------------------------------------------------------------------

enum class ErrorKind {
  invalid_dimension,
  shape_mismatch,
  dimension_unsupported,
  too_large,
  numerical_overflow,
  step_too_small,
  missing_derivative_data,
  singular_regression,
  not_contractive,
  max_iters_exceeded,
  admission_rejected,
  cfl_violation,
  scheme_failure,
  config_invalid,
  io_error,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_dimension: return "invalid-dimension";
    case ErrorKind::shape_mismatch: return "shape-mismatch";
    case ErrorKind::dimension_unsupported: return "dimension-unsupported";
    case ErrorKind::too_large: return "too-large";
    case ErrorKind::numerical_overflow: return "numerical-overflow";
    case ErrorKind::step_too_small: return "step-too-small";
    case ErrorKind::missing_derivative_data: return "missing-derivative-data";
    case ErrorKind::singular_regression: return "singular-regression";
    case ErrorKind::not_contractive: return "not-contractive";
    case ErrorKind::max_iters_exceeded: return "max-iters-exceeded";
    case ErrorKind::admission_rejected: return "admission-rejected";
    case ErrorKind::cfl_violation: return "cfl-violation";
    case ErrorKind::scheme_failure: return "scheme-failure";
    case ErrorKind::config_invalid: return "config-invalid";
    case ErrorKind::io_error: return "io-error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

// ---------------------------------------------------------------------------
// Deterministic reductions. Pairwise summation keyed on index: the result is
// independent of thread count or traversal tricks because there is exactly one
// tree per length.
// ---------------------------------------------------------------------------

namespace detail {
inline double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 16) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}
}  // namespace detail

inline double pairwise_sum(std::span<const double> x) {
  return detail::pairwise_sum(x.data(), x.size());
}

template <class F>
double pairwise_sum_indexed(std::size_t n, F&& value_at) {
  // Tree reduction over the index range without materializing the values.
  struct Rec {
    F& f;
    double operator()(std::size_t lo, std::size_t len) {
      if (len <= 16) {
        double s = 0.0;
        for (std::size_t i = 0; i < len; ++i) s += f(lo + i);
        return s;
      }
      const std::size_t half = len / 2;
      return (*this)(lo, half) + (*this)(lo + half, len - half);
    }
  } rec{value_at};
  return rec(0, n);
}

inline double mean_of(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return pairwise_sum(x) / static_cast<double>(x.size());
}

// ---------------------------------------------------------------------------
// Small dense matrices (state dimension n is tiny, regression bases are small).
// Row-major, sized at runtime.
// ---------------------------------------------------------------------------

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  static Mat identity(std::size_t n, double scale = 1.0) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = scale;
    return m;
  }

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  Mat transposed() const {
    Mat t(cols, rows);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  // y = A x for a short vector x (no aliasing).
  void apply(const double* x, double* y) const {
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += a[i * cols + j] * x[j];
      y[i] = s;
    }
  }

  Mat operator+(const Mat& o) const {
    Mat r = *this;
    for (std::size_t i = 0; i < a.size(); ++i) r.a[i] += o.a[i];
    return r;
  }
  Mat operator-(const Mat& o) const {
    Mat r = *this;
    for (std::size_t i = 0; i < a.size(); ++i) r.a[i] -= o.a[i];
    return r;
  }
  Mat scaled(double s) const {
    Mat r = *this;
    for (double& v : r.a) v *= s;
    return r;
  }
  Mat symmetrized() const {
    Mat r(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) r(i, j) = 0.5 * ((*this)(i, j) + (*this)(j, i));
    return r;
  }
  double frobenius() const {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
  }
};

// Cholesky solve of an SPD system in place; used for ridge normal equations
// where the ridge guarantees positive definiteness.
inline std::vector<double> solve_spd(Mat g, std::vector<double> rhs) {
  const std::size_t n = g.rows;
  require(g.cols == n && rhs.size() == n, ErrorKind::shape_mismatch, "solve_spd shape");
  for (std::size_t j = 0; j < n; ++j) {
    double d = g(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= g(j, k) * g(j, k);
    if (!(d > 0.0) || !std::isfinite(d))
      fail(ErrorKind::singular_regression, "non-positive pivot in normal equations");
    d = std::sqrt(d);
    g(j, j) = d;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = g(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= g(i, k) * g(j, k);
      g(i, j) = s / d;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = rhs[i];
    for (std::size_t k = 0; k < i; ++k) s -= g(i, k) * rhs[k];
    rhs[i] = s / g(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = rhs[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= g(k, ii) * rhs[k];
    rhs[ii] = s / g(ii, ii);
  }
  return rhs;
}

// Eigenvalues of a small symmetric matrix by cyclic Jacobi; used to derive
// convexity constants of catalog entries from their Hessian blocks.
inline std::vector<double> symmetric_eigenvalues(Mat m) {
  const std::size_t n = m.rows;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += m(p, q) * m(p, q);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(m(p, q)) < 1e-300) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * m(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m(k, p), mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m(p, k), mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = m(i, i);
  return ev;
}

inline double spectral_norm_symmetric(const Mat& m) {
  double worst = 0.0;
  for (double e : symmetric_eigenvalues(m)) worst = std::max(worst, std::abs(e));
  return worst;
}

inline double min_eigenvalue_symmetric(const Mat& m) {
  double lo = std::numeric_limits<double>::infinity();
  for (double e : symmetric_eigenvalues(m)) lo = std::min(lo, e);
  return lo;
}

// ---------------------------------------------------------------------------
// Tridiagonal (Thomas) solve: sub/diag/super of length n (sub[0], super[n-1]
// unused). Stable for the diagonally dominant systems produced by implicit
// diffusion steps.
// ---------------------------------------------------------------------------

inline void solve_tridiagonal(std::span<const double> sub, std::span<const double> diag,
                              std::span<const double> super, std::span<double> rhs) {
  const std::size_t n = diag.size();
  std::vector<double> c(n), d(n);
  c[0] = super[0] / diag[0];
  d[0] = rhs[0] / diag[0];
  for (std::size_t i = 1; i < n; ++i) {
    const double m = diag[i] - sub[i] * c[i - 1];
    c[i] = (i + 1 < n) ? super[i] / m : 0.0;
    d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
  }
  rhs[n - 1] = d[n - 1];
  for (std::size_t ii = n - 1; ii-- > 0;) rhs[ii] = d[ii] - c[ii] * rhs[ii + 1];
}

// Least-squares slope of log(y) against log(x); the rate estimator behind the
// residual reports. Non-positive y values are clipped to a tiny floor first.
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(std::max(y[i], 1e-300));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double denom = n * sxx - sx * sx;
  if (std::abs(denom) < 1e-30) return 0.0;
  return (n * sxy - sx * sy) / denom;
}

}  // namespace mfc
