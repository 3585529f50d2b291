// Shared helpers for the unit tests: random inputs and independent oracles.

#ifndef RQOC_TESTS_SUPPORT_HPP
#define RQOC_TESTS_SUPPORT_HPP

#include "rqoc/ensemble.hpp"

#include <random>

namespace rqoc::testing {

inline CMatrix random_hermitian(Index n, std::mt19937_64& rng, bool real = false) {
  std::normal_distribution<double> normal;
  CMatrix a(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) a(i, j) = Complex(normal(rng), real ? 0.0 : normal(rng));
  return 0.5 * (a + a.adjoint());
}

inline CVector random_unit_vector(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  CVector v(n);
  for (Index i = 0; i < n; ++i) v(i) = Complex(normal(rng), normal(rng));
  return v.normalized();
}

inline RVector random_vector(Index n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> uniform(lo, hi);
  RVector v(n);
  for (Index i = 0; i < n; ++i) v(i) = uniform(rng);
  return v;
}

// Classical RK4 for i psi' = H psi with constant H over [0, t].
inline CVector rk4_constant(const CMatrix& h, const CVector& psi0, double t, int substeps) {
  const double dt = t / substeps;
  const Complex mi(0.0, -1.0);
  CVector psi = psi0;
  for (int s = 0; s < substeps; ++s) {
    const CVector k1 = mi * (h * psi);
    const CVector k2 = mi * (h * (psi + 0.5 * dt * k1));
    const CVector k3 = mi * (h * (psi + 0.5 * dt * k2));
    const CVector k4 = mi * (h * (psi + dt * k3));
    psi += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return psi;
}

// Direct Taylor-series exponential, adequate for small well-scaled inputs.
inline CMatrix taylor_expm(const CMatrix& a, int squarings = 8, int terms = 30) {
  const CMatrix scaled = a / std::ldexp(1.0, squarings);
  CMatrix out = CMatrix::Identity(a.rows(), a.cols());
  CMatrix term = out;
  for (int k = 1; k <= terms; ++k) {
    term = term * scaled / static_cast<double>(k);
    out += term;
  }
  for (int s = 0; s < squarings; ++s) out = out * out;
  return out;
}

}  // namespace rqoc::testing

#endif  // RQOC_TESTS_SUPPORT_HPP
