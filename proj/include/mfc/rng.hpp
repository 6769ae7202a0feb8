#pragma once

#include <cstdint>
#include <vector>

#include "mfc/common.hpp"

namespace mfc {

// Counter-based random numbers: every variate is a pure function of
// (seed, stream, k1, k2, k3), so regeneration is bit-identical regardless of
// call order or thread count. Streams keep independent uses (lattice, probes,
// permutations, test draws) from colliding.

enum class RngStream : std::uint64_t {
  lattice = 1,
  initial_ensemble = 2,
  probe = 3,
  permutation = 4,
  bounds_validation = 5,
  controls = 6,
  directions = 7,
  test = 8,
  mixture = 9,
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 33;
  z *= 0xff51afd7ed558ccdULL;
  z ^= z >> 33;
  z *= 0xc4ceb9fe1a85ec53ULL;
  z ^= z >> 33;
  return z;
}

inline std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t stream, std::uint64_t k1,
                                  std::uint64_t k2, std::uint64_t k3) {
  std::uint64_t h = mix64(seed + 0x9e3779b97f4a7c15ULL);
  h = mix64(h ^ (stream * 0xbf58476d1ce4e5b9ULL + 0x94d049bb133111ebULL));
  h = mix64(h ^ (k1 + 0x9e3779b97f4a7c15ULL));
  h = mix64(h ^ (k2 + 0xc2b2ae3d27d4eb4fULL));
  h = mix64(h ^ (k3 + 0x165667b19e3779f9ULL));
  return h;
}

// Wichura's AS241 inverse normal CDF (double precision). Maps the counter
// uniform to a Gaussian without any rejection state.
inline double inverse_normal_cdf(double p) {
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                 6.7265770927008700853e+4) *
                    r +
                4.5921953931549871457e+4) *
                   r +
               1.3731693765509461125e+4) *
                  r +
              1.9715909503065514427e+3) *
                 r +
             1.3314166789178437745e+2) *
                r +
            3.3871328727963666080e+0) /
           (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                 3.9307895800092710610e+4) *
                    r +
                2.1213794301586595867e+4) *
                   r +
               5.3941960214247511077e+3) *
                  r +
              6.8718700749205790830e+2) *
                 r +
             4.2313330701600911252e+1) *
                r +
            1.0);
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) *
                   r +
               1.27045825245236838258e+0) *
                  r +
              3.64784832476320460504e+0) *
                 r +
             5.76949722146069140550e+0) *
                r +
            4.63033784615654529590e+0) *
               r +
           1.42343711074968357734e+0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) *
                   r +
               1.48103976427480074590e-1) *
                  r +
              6.89767334985100004550e-1) *
                 r +
             1.67638483018380384940e+0) *
                r +
            2.05319162663775882187e+0) *
               r +
           1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) *
                   r +
               2.65321895265761230930e-2) *
                  r +
              2.96560571828504891230e-1) *
                 r +
             1.78482653991729133580e+0) *
                r +
            5.46378491116411436990e+0) *
               r +
           6.65790464350110377720e+0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) *
                   r +
               7.86869131145613259100e-4) *
                  r +
              1.48753612908506148525e-2) *
                 r +
             1.36929880922735805310e-1) *
                r +
            5.99832206555887937690e-1) *
               r +
           1.0);
  }
  return (q < 0.0) ? -val : val;
}

}  // namespace detail

inline double uniform01(std::uint64_t seed, RngStream stream, std::uint64_t k1, std::uint64_t k2 = 0,
                        std::uint64_t k3 = 0) {
  const std::uint64_t h =
      detail::counter_hash(seed, static_cast<std::uint64_t>(stream), k1, k2, k3);
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;  // strictly inside (0,1)
}

inline double standard_normal(std::uint64_t seed, RngStream stream, std::uint64_t k1,
                              std::uint64_t k2 = 0, std::uint64_t k3 = 0) {
  return detail::inverse_normal_cdf(uniform01(seed, stream, k1, k2, k3));
}

// Deterministic Fisher-Yates permutation of {0,..,n-1} keyed on (seed, tag).
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed,
                                                   std::uint64_t tag = 0) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i-- > 1;) {
    const double u = uniform01(seed, RngStream::permutation, tag, i);
    const std::size_t j = static_cast<std::size_t>(u * static_cast<double>(i + 1));
    std::swap(p[i], p[j > i ? i : j]);
  }
  return p;
}

}  // namespace mfc
