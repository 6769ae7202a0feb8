#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mfc/common.hpp"
#include "mfc/ensemble.hpp"

namespace mfc {

// ---------------------------------------------------------------------------
// Law summaries consumed by catalog entries. Computed once per evaluation from
// the canonical (sorted) law so every law-dependent quantity is exactly
// permutation invariant.
// ---------------------------------------------------------------------------

struct LawStats {
  std::size_t dim = 0;
  std::vector<double> mean;
  std::vector<double> mean_cos;  // E[cos X_c], filled only when an entry needs it
  std::vector<double> mean_sin;  // E[sin X_c]
  bool trig_filled = false;
};

inline LawStats law_stats(const EmpiricalLaw& law, bool with_trig) {
  LawStats s;
  s.dim = law.dim;
  s.mean = law.mean();
  if (with_trig) {
    s.mean_cos.resize(law.dim);
    s.mean_sin.resize(law.dim);
    for (std::size_t c = 0; c < law.dim; ++c) {
      s.mean_cos[c] = pairwise_sum_indexed(law.n_atoms, [&](std::size_t i) {
                        return std::cos(law.at(i, c));
                      }) /
                      static_cast<double>(law.n_atoms);
      s.mean_sin[c] = pairwise_sum_indexed(law.n_atoms, [&](std::size_t i) {
                        return std::sin(law.at(i, c));
                      }) /
                      static_cast<double>(law.n_atoms);
    }
    s.trig_filled = true;
  }
  return s;
}

// Declared regularity record for a running/terminal pair (Lipschitz constants,
// quasi-convexity constants, Holder exponent of the second derivative).
struct FunctionalBounds {
  double c = 0.0;
  double c_T = 0.0;
  double c_prime = 0.0;
  double c_T_prime = 0.0;
  double delta = 1.0;
};

// Per-entry regularity constants; pairs are assembled into FunctionalBounds.
struct EntryConstants {
  double lipschitz = 0.0;      // gradient Lipschitz constant
  double growth = 0.0;         // ||grad(X)|| <= growth * (1 + ||X||)
  double quasiconvexity = 0.0; // ((dgrad, dX)) >= -quasiconvexity * ||dX||^2
  double holder_delta = 1.0;   // Holder exponent of the second derivative
};

// ---------------------------------------------------------------------------
// Functional: a cost F(m) = int f(x,m) m(dx) with analytic derivative actions
// in the lifted space and functional-derivative data on the Wasserstein side.
// ---------------------------------------------------------------------------

class Functional {
 public:
  virtual ~Functional() = default;
  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  virtual bool needs_trig_stats() const { return false; }

  // f(x, m)
  virtual double integrand(std::span<const double> x, const LawStats& m) const = 0;

  // D_x dF/dm (m)(x): the pointwise gradient function; sigma(X)-measurable by
  // construction since it only sees the sample value and law statistics.
  virtual void grad_at(std::span<const double> x, const LawStats& m,
                       std::span<double> out) const = 0;

  // D_x^2 dF/dm (m)(x)
  virtual Mat hess_pointwise(std::span<const double> x, const LawStats& m) const = 0;

  // D_xi D_eta d2F/dm2 (m)(x, xt): the mixed kernel of the second-derivative
  // decomposition.
  virtual Mat mixed_kernel(std::span<const double> x, std::span<const double> xt,
                           const LawStats& m) const = 0;

  // Exact second-derivative action D_X^2 F(X) Z = Gamma(X) Z, evaluated via
  // closed-form law statistics (entries in this catalog all admit one).
  virtual void hess_action_exact(const ParticleEnsemble& X, const ParticleEnsemble& Z,
                                 const LawStats& m, ParticleEnsemble& out) const = 0;

  // True when hess_pointwise and mixed_kernel do not depend on the state; the
  // fbsde derivative systems then condition pathwise instead of regressing.
  virtual bool constant_hessian() const = 0;

  virtual bool has_third() const { return false; }
  virtual ParticleEnsemble third_action(const ParticleEnsemble&, const ParticleEnsemble&,
                                        const ParticleEnsemble&, const LawStats&) const {
    fail(ErrorKind::missing_derivative_data, "entry has no third-derivative data");
  }

  // dF/dm(m)(x) under the catalog normalization f + int df/dm dm.
  virtual double fun_deriv(std::span<const double> x, const LawStats& m) const = 0;

  // df(xi, m)/dm(x), the integrand of the marginal-cost correction.
  virtual double fun_deriv_integrand(std::span<const double> xi, std::span<const double> x,
                                     const LawStats& m) const = 0;

  virtual bool has_fun_deriv2() const { return false; }
  virtual double fun_deriv2(std::span<const double>, std::span<const double>,
                            const LawStats&) const {
    fail(ErrorKind::missing_derivative_data, "entry has no second functional derivative");
  }

  virtual EntryConstants constants() const = 0;
};

using FunctionalPtr = std::shared_ptr<const Functional>;

inline LawStats stats_of(const Functional& f, const ParticleEnsemble& X) {
  return law_stats(law_of(X), f.needs_trig_stats());
}

// ---------------------------------------------------------------------------
// Catalog entry: F == 0.
// ---------------------------------------------------------------------------

class ZeroFunctional final : public Functional {
 public:
  explicit ZeroFunctional(std::size_t dim) : dim_(dim) {}
  std::string name() const override { return "zero"; }
  std::size_t dim() const override { return dim_; }
  double integrand(std::span<const double>, const LawStats&) const override { return 0.0; }
  void grad_at(std::span<const double>, const LawStats&, std::span<double> out) const override {
    for (double& v : out) v = 0.0;
  }
  Mat hess_pointwise(std::span<const double>, const LawStats&) const override {
    return Mat(dim_, dim_);
  }
  Mat mixed_kernel(std::span<const double>, std::span<const double>,
                   const LawStats&) const override {
    return Mat(dim_, dim_);
  }
  void hess_action_exact(const ParticleEnsemble& X, const ParticleEnsemble&, const LawStats&,
                         ParticleEnsemble& out) const override {
    out = ParticleEnsemble(X.n_particles, X.dim);
  }
  bool constant_hessian() const override { return true; }
  bool has_third() const override { return true; }
  ParticleEnsemble third_action(const ParticleEnsemble& X, const ParticleEnsemble&,
                                const ParticleEnsemble&, const LawStats&) const override {
    return ParticleEnsemble(X.n_particles, X.dim);
  }
  double fun_deriv(std::span<const double>, const LawStats&) const override { return 0.0; }
  double fun_deriv_integrand(std::span<const double>, std::span<const double>,
                             const LawStats&) const override {
    return 0.0;
  }
  bool has_fun_deriv2() const override { return true; }
  double fun_deriv2(std::span<const double>, std::span<const double>,
                    const LawStats&) const override {
    return 0.0;
  }
  EntryConstants constants() const override { return {0.0, 0.0, 0.0, 1.0}; }

 private:
  std::size_t dim_;
};

// ---------------------------------------------------------------------------
// Quadratic mean-field family: f(x,m) = 1/2 x.Qx + b.x + x.S mbar
//                                        + kappa |x - mbar|^2.
// Every object of the theory has a closed form here, which is what makes the
// family the workhorse of the oracle suite.
// ---------------------------------------------------------------------------

class QuadraticMeanField final : public Functional {
 public:
  QuadraticMeanField(std::string name, Mat Q, std::vector<double> b, Mat S, double kappa)
      : name_(std::move(name)), q_(std::move(Q)), b_(std::move(b)), s_(std::move(S)),
        kappa_(kappa) {
    dim_ = b_.size();
    require(q_.rows == dim_ && q_.cols == dim_ && s_.rows == dim_ && s_.cols == dim_,
            ErrorKind::shape_mismatch, "quadratic entry parameter shapes");
    q_sym_ = q_.symmetrized();
    s_sym2_ = s_ + s_.transposed();  // S + S^T
    // Gamma(X) block-diagonalizes over mean-zero vs constant directions:
    //   mean-zero: Q_sym + 2 kappa I,  constants: Q_sym + S + S^T.
    m_zero_ = q_sym_ + Mat::identity(dim_, 2.0 * kappa_);
    m_const_ = q_sym_ + s_sym2_;
    k_mixed_ = s_sym2_ - Mat::identity(dim_, 2.0 * kappa_);
  }

  static FunctionalPtr isotropic(std::size_t dim, double q, double b, double s, double kappa,
                                 const std::string& name = "quadratic") {
    std::vector<double> bv(dim, b);
    return std::make_shared<QuadraticMeanField>(name, Mat::identity(dim, q), bv,
                                                Mat::identity(dim, s), kappa);
  }

  std::string name() const override { return name_; }
  std::size_t dim() const override { return dim_; }

  double integrand(std::span<const double> x, const LawStats& m) const override {
    double xqx = 0.0, bx = 0.0, xsm = 0.0, dev = 0.0;
    for (std::size_t r = 0; r < dim_; ++r) {
      double qx = 0.0, sm = 0.0;
      for (std::size_t c = 0; c < dim_; ++c) {
        qx += q_(r, c) * x[c];
        sm += s_(r, c) * m.mean[c];
      }
      xqx += x[r] * qx;
      xsm += x[r] * sm;
      bx += b_[r] * x[r];
      const double d = x[r] - m.mean[r];
      dev += d * d;
    }
    return 0.5 * xqx + bx + xsm + kappa_ * dev;
  }

  void grad_at(std::span<const double> x, const LawStats& m, std::span<double> out) const override {
    for (std::size_t r = 0; r < dim_; ++r) {
      double v = b_[r] + 2.0 * kappa_ * (x[r] - m.mean[r]);
      for (std::size_t c = 0; c < dim_; ++c)
        v += q_sym_(r, c) * x[c] + s_sym2_(r, c) * m.mean[c];
      out[r] = v;
    }
  }

  Mat hess_pointwise(std::span<const double>, const LawStats&) const override { return m_zero_; }

  Mat mixed_kernel(std::span<const double>, std::span<const double>,
                   const LawStats&) const override {
    return k_mixed_;
  }

  void hess_action_exact(const ParticleEnsemble& X, const ParticleEnsemble& Z, const LawStats&,
                         ParticleEnsemble& out) const override {
    require_same_shape(X, Z, "hess_action");
    out = ParticleEnsemble(X.n_particles, X.dim);
    const auto zbar = ensemble_mean(Z);
    std::vector<double> kz(dim_);
    k_mixed_.apply(zbar.data(), kz.data());
    std::vector<double> mz(dim_);
    for (std::size_t i = 0; i < X.n_particles; ++i) {
      m_zero_.apply(Z.x.data() + i * dim_, mz.data());
      for (std::size_t c = 0; c < dim_; ++c) out.at(i, c) = mz[c] + kz[c];
    }
  }

  bool constant_hessian() const override { return true; }

  bool has_third() const override { return true; }
  ParticleEnsemble third_action(const ParticleEnsemble& X, const ParticleEnsemble&,
                                const ParticleEnsemble&, const LawStats&) const override {
    return ParticleEnsemble(X.n_particles, X.dim);
  }

  double fun_deriv(std::span<const double> x, const LawStats& m) const override {
    // dF/dm(x) = f(x,m) + (S^T mbar) . x
    double extra = 0.0;
    for (std::size_t r = 0; r < dim_; ++r)
      for (std::size_t c = 0; c < dim_; ++c) extra += s_(c, r) * m.mean[c] * x[r];
    return integrand(x, m) + extra;
  }

  double fun_deriv_integrand(std::span<const double> xi, std::span<const double> x,
                             const LawStats& m) const override {
    // df(xi, .)/dm(x) = (S^T xi - 2 kappa (xi - mbar)) . x
    double v = 0.0;
    for (std::size_t r = 0; r < dim_; ++r) {
      double g = -2.0 * kappa_ * (xi[r] - m.mean[r]);
      for (std::size_t c = 0; c < dim_; ++c) g += s_(c, r) * xi[c];
      v += g * x[r];
    }
    return v;
  }

  bool has_fun_deriv2() const override { return true; }
  double fun_deriv2(std::span<const double> x1, std::span<const double> x2,
                    const LawStats& m) const override {
    double v = 0.0;
    for (std::size_t r = 0; r < dim_; ++r) {
      double g = -2.0 * kappa_ * (x1[r] - m.mean[r]);
      for (std::size_t c = 0; c < dim_; ++c) g += s_sym2_(r, c) * x1[c];
      v += g * x2[r];
    }
    return v;
  }

  EntryConstants constants() const override {
    EntryConstants k;
    k.lipschitz = std::max(spectral_norm_symmetric(m_zero_.symmetrized()),
                           spectral_norm_symmetric(m_const_.symmetrized()));
    double bnorm = 0.0;
    for (double v : b_) bnorm += v * v;
    k.growth = k.lipschitz + std::sqrt(bnorm);
    k.quasiconvexity = std::max(0.0, -std::min(min_eigenvalue_symmetric(m_zero_.symmetrized()),
                                               min_eigenvalue_symmetric(m_const_.symmetrized())));
    k.holder_delta = 1.0;
    return k;
  }

  const Mat& gamma_mean_zero_block() const { return m_zero_; }
  const Mat& gamma_const_block() const { return m_const_; }

 private:
  std::string name_;
  std::size_t dim_;
  Mat q_, q_sym_, s_, s_sym2_;
  std::vector<double> b_;
  double kappa_;
  Mat m_zero_, m_const_, k_mixed_;
};

// ---------------------------------------------------------------------------
// Smooth non-convex stress entry:
//   f(x,m) = 1/2 q |x|^2 + sum_c [ alpha cos(x_c) + gamma cos(x_c) mbar_c ].
// State-dependent Hessian and nonzero third derivatives; exercises c' > 0 and
// the regression/nested conditional expectations.
// ---------------------------------------------------------------------------

class StressCosine final : public Functional {
 public:
  StressCosine(std::size_t dim, double q, double alpha, double gamma,
               std::string name = "stress")
      : name_(std::move(name)), dim_(dim), q_(q), alpha_(alpha), gamma_(gamma) {}

  std::string name() const override { return name_; }
  std::size_t dim() const override { return dim_; }
  bool needs_trig_stats() const override { return true; }

  double integrand(std::span<const double> x, const LawStats& m) const override {
    double v = 0.0;
    for (std::size_t c = 0; c < dim_; ++c)
      v += 0.5 * q_ * x[c] * x[c] + (alpha_ + gamma_ * m.mean[c]) * std::cos(x[c]);
    return v;
  }

  void grad_at(std::span<const double> x, const LawStats& m, std::span<double> out) const override {
    for (std::size_t c = 0; c < dim_; ++c)
      out[c] = q_ * x[c] - (alpha_ + gamma_ * m.mean[c]) * std::sin(x[c]) +
               gamma_ * m.mean_cos[c];
  }

  Mat hess_pointwise(std::span<const double> x, const LawStats& m) const override {
    Mat h(dim_, dim_);
    for (std::size_t c = 0; c < dim_; ++c)
      h(c, c) = q_ - (alpha_ + gamma_ * m.mean[c]) * std::cos(x[c]);
    return h;
  }

  Mat mixed_kernel(std::span<const double> x, std::span<const double> xt,
                   const LawStats&) const override {
    Mat k(dim_, dim_);
    for (std::size_t c = 0; c < dim_; ++c)
      k(c, c) = -gamma_ * (std::sin(x[c]) + std::sin(xt[c]));
    return k;
  }

  void hess_action_exact(const ParticleEnsemble& X, const ParticleEnsemble& Z, const LawStats& m,
                         ParticleEnsemble& out) const override {
    require_same_shape(X, Z, "hess_action");
    out = ParticleEnsemble(X.n_particles, X.dim);
    const auto zbar = ensemble_mean(Z);
    // Separable kernel: E[K(x, Xt) Zt] = -gamma sin(x) E[Z] - gamma E[sin(X) Z].
    std::vector<double> sinxz(dim_);
    for (std::size_t c = 0; c < dim_; ++c)
      sinxz[c] = pairwise_sum_indexed(X.n_particles,
                                      [&](std::size_t i) {
                                        return std::sin(X.at(i, c)) * Z.at(i, c);
                                      }) /
                 static_cast<double>(X.n_particles);
    for (std::size_t i = 0; i < X.n_particles; ++i)
      for (std::size_t c = 0; c < dim_; ++c) {
        const double xc = X.at(i, c);
        out.at(i, c) = (q_ - (alpha_ + gamma_ * m.mean[c]) * std::cos(xc)) * Z.at(i, c) -
                       gamma_ * std::sin(xc) * zbar[c] - gamma_ * sinxz[c];
      }
  }

  bool constant_hessian() const override { return false; }

  bool has_third() const override { return true; }
  ParticleEnsemble third_action(const ParticleEnsemble& X, const ParticleEnsemble& Xi,
                                const ParticleEnsemble& Ups, const LawStats& m) const override {
    require_same_shape(X, Xi, "third_action");
    require_same_shape(X, Ups, "third_action");
    ParticleEnsemble out(X.n_particles, X.dim);
    const auto xibar = ensemble_mean(Xi);
    const auto upsbar = ensemble_mean(Ups);
    std::vector<double> cos_xi_ups(dim_);
    for (std::size_t c = 0; c < dim_; ++c)
      cos_xi_ups[c] = pairwise_sum_indexed(X.n_particles,
                                           [&](std::size_t i) {
                                             return std::cos(X.at(i, c)) * Xi.at(i, c) *
                                                    Ups.at(i, c);
                                           }) /
                      static_cast<double>(X.n_particles);
    for (std::size_t i = 0; i < X.n_particles; ++i)
      for (std::size_t c = 0; c < dim_; ++c) {
        const double xc = X.at(i, c);
        out.at(i, c) = (alpha_ + gamma_ * m.mean[c]) * std::sin(xc) * Xi.at(i, c) * Ups.at(i, c) -
                       gamma_ * std::cos(xc) * (Xi.at(i, c) * upsbar[c] + Ups.at(i, c) * xibar[c]) -
                       gamma_ * cos_xi_ups[c];
      }
    return out;
  }

  double fun_deriv(std::span<const double> x, const LawStats& m) const override {
    double v = integrand(x, m);
    for (std::size_t c = 0; c < dim_; ++c) v += gamma_ * m.mean_cos[c] * x[c];
    return v;
  }

  double fun_deriv_integrand(std::span<const double> xi, std::span<const double> x,
                             const LawStats&) const override {
    double v = 0.0;
    for (std::size_t c = 0; c < dim_; ++c) v += gamma_ * std::cos(xi[c]) * x[c];
    return v;
  }

  bool has_fun_deriv2() const override { return true; }
  double fun_deriv2(std::span<const double> x1, std::span<const double> x2,
                    const LawStats&) const override {
    double v = 0.0;
    for (std::size_t c = 0; c < dim_; ++c)
      v += gamma_ * (std::cos(x1[c]) * x2[c] + std::cos(x2[c]) * x1[c]);
    return v;
  }

  EntryConstants constants() const override {
    // Desk-scale constants: laws kept with |mean| <= 2 by the test harness.
    const double mbar_bound = 2.0;
    EntryConstants k;
    k.lipschitz = q_ + alpha_ + gamma_ * (mbar_bound + 3.0);
    k.growth = k.lipschitz + alpha_ + gamma_ * (mbar_bound + 1.0);
    k.quasiconvexity = std::max(0.0, alpha_ + gamma_ * mbar_bound + 2.0 * gamma_ - q_);
    k.holder_delta = 1.0;
    return k;
  }

 private:
  std::string name_;
  std::size_t dim_;
  double q_, alpha_, gamma_;
};

// ---------------------------------------------------------------------------
// Operations on functionals
// ---------------------------------------------------------------------------

// F(X) = F(L_X): mean of the integrand over the canonical law, exactly
// permutation invariant.
inline double eval_F(const Functional& f, const ParticleEnsemble& X) {
  require(X.dim == f.dim(), ErrorKind::shape_mismatch, "eval_F dim");
  const EmpiricalLaw law = law_of(X);
  const LawStats stats = law_stats(law, f.needs_trig_stats());
  const double v = pairwise_sum_indexed(law.n_atoms, [&](std::size_t i) {
    return f.integrand({law.atoms.data() + i * law.dim, law.dim}, stats);
  }) / static_cast<double>(law.n_atoms);
  require(std::isfinite(v), ErrorKind::numerical_overflow, "eval_F produced a non-finite value");
  return v;
}

// D_X F(X): per-particle Riesz representative.
inline ParticleEnsemble grad_F(const Functional& f, const ParticleEnsemble& X) {
  require(X.dim == f.dim(), ErrorKind::shape_mismatch, "grad_F dim");
  const LawStats stats = stats_of(f, X);
  ParticleEnsemble g(X.n_particles, X.dim);
  for (std::size_t i = 0; i < X.n_particles; ++i)
    f.grad_at(X.sample(i), stats, {g.x.data() + i * X.dim, X.dim});
  return g;
}

inline ParticleEnsemble grad_with_stats(const Functional& f, const ParticleEnsemble& X,
                                        const LawStats& stats) {
  ParticleEnsemble g(X.n_particles, X.dim);
  for (std::size_t i = 0; i < X.n_particles; ++i)
    f.grad_at(X.sample(i), stats, {g.x.data() + i * X.dim, X.dim});
  return g;
}

// Gamma(X) Z = D_X^2 F(X) Z via the entry's closed form.
inline ParticleEnsemble hess_action(const Functional& f, const ParticleEnsemble& X,
                                    const ParticleEnsemble& Z) {
  ParticleEnsemble out;
  f.hess_action_exact(X, Z, stats_of(f, X), out);
  return out;
}

inline ParticleEnsemble gamma_action(const Functional& f, const ParticleEnsemble& X,
                                     const ParticleEnsemble& Z) {
  return hess_action(f, X, Z);
}

// Generic estimators for the mixed term, kept for cross-checks against the
// closed forms: a single permutation-based independent copy (O(N)) and the
// exact double average (O(N^2), test oracle only).
inline ParticleEnsemble hess_action_permutation(const Functional& f, const ParticleEnsemble& X,
                                                const ParticleEnsemble& Z, std::uint64_t seed) {
  const LawStats stats = stats_of(f, X);
  const auto perm = seeded_permutation(X.n_particles, seed);
  ParticleEnsemble out(X.n_particles, X.dim);
  std::vector<double> tmp(X.dim);
  for (std::size_t i = 0; i < X.n_particles; ++i) {
    const Mat h = f.hess_pointwise(X.sample(i), stats);
    h.apply(Z.x.data() + i * X.dim, tmp.data());
    const std::size_t j = perm[i];
    const Mat k = f.mixed_kernel(X.sample(i), X.sample(j), stats);
    std::vector<double> kz(X.dim);
    k.apply(Z.x.data() + j * X.dim, kz.data());
    for (std::size_t c = 0; c < X.dim; ++c) out.at(i, c) = tmp[c] + kz[c];
  }
  return out;
}

inline ParticleEnsemble hess_action_double_sum(const Functional& f, const ParticleEnsemble& X,
                                               const ParticleEnsemble& Z) {
  require(X.n_particles <= 1024, ErrorKind::too_large,
          "double-sum mixed term is capped at 1024 particles");
  const LawStats stats = stats_of(f, X);
  ParticleEnsemble out(X.n_particles, X.dim);
  std::vector<double> tmp(X.dim), kz(X.dim);
  const double w = 1.0 / static_cast<double>(X.n_particles);
  for (std::size_t i = 0; i < X.n_particles; ++i) {
    const Mat h = f.hess_pointwise(X.sample(i), stats);
    h.apply(Z.x.data() + i * X.dim, tmp.data());
    std::vector<double> acc(X.dim, 0.0);
    for (std::size_t j = 0; j < X.n_particles; ++j) {
      const Mat k = f.mixed_kernel(X.sample(i), X.sample(j), stats);
      k.apply(Z.x.data() + j * X.dim, kz.data());
      for (std::size_t c = 0; c < X.dim; ++c) acc[c] += kz[c];
    }
    for (std::size_t c = 0; c < X.dim; ++c) out.at(i, c) = tmp[c] + w * acc[c];
  }
  return out;
}

inline ParticleEnsemble third_action(const Functional& f, const ParticleEnsemble& X,
                                     const ParticleEnsemble& Xi, const ParticleEnsemble& Ups) {
  require(f.has_third(), ErrorKind::missing_derivative_data,
          "third derivative unavailable for entry " + f.name());
  return f.third_action(X, Xi, Ups, stats_of(f, X));
}

// B(X)(Z,Y) of the second-derivative correspondence, evaluated through the
// independent-copy double average (the definitional route, distinct from the
// closed-form Gamma path so the consistency identity is a real check).
inline double bilinear_B(const Functional& f, const ParticleEnsemble& X, const ParticleEnsemble& Z,
                         const ParticleEnsemble& Y) {
  require_same_shape(X, Z, "bilinear_B");
  require_same_shape(X, Y, "bilinear_B");
  const LawStats stats = stats_of(f, X);
  const std::size_t n = X.n_particles, d = X.dim;
  std::vector<double> hz(d);
  const double first = pairwise_sum_indexed(n, [&](std::size_t i) {
    const Mat h = f.hess_pointwise(X.sample(i), stats);
    h.apply(Z.x.data() + i * d, hz.data());
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += hz[c] * Y.at(i, c);
    return s;
  }) / static_cast<double>(n);
  std::vector<double> kz(d);
  const double mixed = pairwise_sum_indexed(n, [&](std::size_t i) {
    std::vector<double> acc(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const Mat k = f.mixed_kernel(X.sample(i), X.sample(j), stats);
      k.apply(Z.x.data() + j * d, kz.data());
      for (std::size_t c = 0; c < d; ++c) acc[c] += kz[c];
    }
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += acc[c] * Y.at(i, c) / static_cast<double>(n);
    return s;
  }) / static_cast<double>(n);
  return first + mixed;
}

// |F(X+eY) - F(X) - e ((D_XF, Y)) - e^2/2 ((Gamma(X)Y, Y))|: vanishes to
// roundoff for the quadratic family and decays at rate 2+delta otherwise.
inline double second_order_taylor_residual(const Functional& f, const ParticleEnsemble& X,
                                           const ParticleEnsemble& Y, double eps) {
  if (eps == 0.0) return 0.0;
  ParticleEnsemble xp = X;
  axpy(xp, eps, Y);
  const double fx = eval_F(f, X);
  const double fxp = eval_F(f, xp);
  const double lin = h_inner(grad_F(f, X), Y);
  const double quad = h_inner(hess_action(f, X, Y), Y);
  return std::abs(fxp - fx - eps * lin - 0.5 * eps * eps * quad);
}

// lambda_T = lambda - c' T - c'_T T^2 / 2 (solver admission requires > 0).
inline double lambda_T(double lambda, double horizon, const FunctionalBounds& b) {
  return lambda - b.c_prime * horizon - 0.5 * b.c_T_prime * horizon * horizon;
}

inline FunctionalBounds pair_bounds(const Functional& running, const Functional& terminal) {
  const EntryConstants r = running.constants();
  const EntryConstants t = terminal.constants();
  FunctionalBounds b;
  b.c = r.lipschitz;
  b.c_T = t.lipschitz;
  b.c_prime = r.quasiconvexity;
  b.c_T_prime = t.quasiconvexity;
  b.delta = std::min(r.holder_delta, t.holder_delta);
  return b;
}

// ---------------------------------------------------------------------------
// Finite-difference oracles
// ---------------------------------------------------------------------------

// Central-difference Gateaux gradient: per-particle, per-component bumps scaled
// by 1/weight so each bump is a unit H-direction. Reconstructs the Riesz
// representative of D_X F.
inline ParticleEnsemble fd_gateaux_grad(const Functional& f, const ParticleEnsemble& X,
                                        double step) {
  require(step > 0.0, ErrorKind::step_too_small, "fd step must be positive");
  const double f0 = eval_F(f, X);
  // Roundoff-dominance guard: central differences lose to cancellation once
  // eps*|F|/step exceeds the truncation scale step^2.
  const double scale = std::max(1.0, std::abs(f0));
  const double noise = 2.2e-16 * scale / step;
  if (noise > 10.0 * step * step * scale)
    fail(ErrorKind::step_too_small, "cancellation would dominate the central difference");
  ParticleEnsemble g(X.n_particles, X.dim);
  ParticleEnsemble xb = X;
  const double n = static_cast<double>(X.n_particles);
  for (std::size_t i = 0; i < X.n_particles; ++i) {
    for (std::size_t c = 0; c < X.dim; ++c) {
      const double orig = xb.at(i, c);
      xb.at(i, c) = orig + step;
      const double fp = eval_F(f, xb);
      xb.at(i, c) = orig - step;
      const double fm = eval_F(f, xb);
      xb.at(i, c) = orig;
      g.at(i, c) = n * (fp - fm) / (2.0 * step);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Empirical validation of declared bounds
// ---------------------------------------------------------------------------

struct BoundsReport {
  double worst_lipschitz_ratio = 0.0;   // ||dgrad|| / ||dX||
  double worst_growth_ratio = 0.0;      // ||grad|| / (1 + ||X||)
  double worst_convexity_margin = 0.0;  // min ((dgrad,dX))/||dX||^2 over trials
  double worst_holder_ratio = 0.0;      // ||dGamma Z|| / (||dX||^delta ||Z||)
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

inline BoundsReport validate_bounds(const Functional& f, const FunctionalBounds& declared,
                                    bool terminal_role, std::size_t n_trials, std::uint64_t seed) {
  const double slack = 1.05;
  const double c_decl = terminal_role ? declared.c_T : declared.c;
  const double cp_decl = terminal_role ? declared.c_T_prime : declared.c_prime;
  const EntryConstants ec = f.constants();
  BoundsReport rep;
  rep.worst_convexity_margin = std::numeric_limits<double>::infinity();
  const std::size_t n = 128;
  for (std::size_t trial = 0; trial < n_trials; ++trial) {
    ParticleEnsemble x1(n, f.dim()), x2(n, f.dim()), z(n, f.dim());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < f.dim(); ++c) {
        const double shift1 = standard_normal(seed, RngStream::bounds_validation, trial, 0, c);
        const double shift2 = standard_normal(seed, RngStream::bounds_validation, trial, 1, c);
        x1.at(i, c) = shift1 + standard_normal(seed, RngStream::bounds_validation, trial, 10 + i, c);
        x2.at(i, c) =
            shift2 + standard_normal(seed ^ 0xabcdULL, RngStream::bounds_validation, trial, 10 + i, c);
        z.at(i, c) = standard_normal(seed ^ 0x1234ULL, RngStream::bounds_validation, trial, 10 + i, c);
      }
    const ParticleEnsemble g1 = grad_F(f, x1), g2 = grad_F(f, x2);
    const ParticleEnsemble dx = x1 - x2;
    const double ndx = h_norm(dx);
    if (ndx > 1e-12) {
      const double lip = h_norm(g1 - g2) / ndx;
      rep.worst_lipschitz_ratio = std::max(rep.worst_lipschitz_ratio, lip);
      const double conv = h_inner(g1 - g2, dx) / (ndx * ndx);
      rep.worst_convexity_margin = std::min(rep.worst_convexity_margin, conv);
      const ParticleEnsemble dh = hess_action(f, x1, z) - hess_action(f, x2, z);
      const double nz = h_norm(z);
      if (nz > 1e-12)
        rep.worst_holder_ratio =
            std::max(rep.worst_holder_ratio,
                     h_norm(dh) / (std::pow(ndx, ec.holder_delta) * nz));
    }
    rep.worst_growth_ratio = std::max(rep.worst_growth_ratio, h_norm(g1) / (1.0 + h_norm(x1)));
  }
  if (rep.worst_lipschitz_ratio > c_decl * slack)
    rep.violations.push_back("lipschitz ratio " + std::to_string(rep.worst_lipschitz_ratio) +
                             " exceeds declared " + std::to_string(c_decl));
  if (rep.worst_convexity_margin < -cp_decl * slack - 1e-12)
    rep.violations.push_back("quasi-convexity margin " +
                             std::to_string(rep.worst_convexity_margin) + " below declared -" +
                             std::to_string(cp_decl));
  if (rep.worst_growth_ratio > (ec.growth + 1e-9) * slack)
    rep.violations.push_back("growth ratio " + std::to_string(rep.worst_growth_ratio) +
                             " exceeds " + std::to_string(ec.growth));
  return rep;
}

}  // namespace mfc
