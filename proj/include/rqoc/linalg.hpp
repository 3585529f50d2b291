/* Copyright 2026 The rqoc Authors. All Rights Reserved.
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at
    http://www.apache.org/licenses/LICENSE-2.0
Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef RQOC_LINALG_HPP
#define RQOC_LINALG_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace rqoc {

using Index = Eigen::Index;
using Complex = std::complex<double>;
using RVector = Eigen::VectorXd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using CMatrix = Eigen::MatrixXcd;

/// Raised when a numerical routine cannot produce a trustworthy result
/// (non-finite values, failed decompositions, lost unitarity).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Derived>
double one_norm(const Eigen::MatrixBase<Derived>& a) {
  if (a.size() == 0) return 0.0;
  return a.cwiseAbs().colwise().sum().maxCoeff();
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& a) {
  return a.allFinite();
}

/// Largest entrywise deviation from Hermitian symmetry, max |A - A^H|.
template <typename Derived>
double hermitian_defect(const Eigen::MatrixBase<Derived>& a) {
  if (a.rows() != a.cols()) return std::numeric_limits<double>::infinity();
  if (a.size() == 0) return 0.0;
  return (a - a.adjoint()).cwiseAbs().maxCoeff();
}

/// Kronecker product of two dense matrices, row-major block layout
/// (the right factor's index varies fastest).
template <typename DA, typename DB>
auto kron(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  using Scalar = typename Eigen::ScalarBinaryOpTraits<typename DA::Scalar,
                                                      typename DB::Scalar>::ReturnType;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(a.rows() * b.rows(),
                                                            a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) =
          static_cast<Scalar>(a(i, j)) * b.template cast<Scalar>();
    }
  }
  return out;
}

namespace detail {

// Pade coefficients b_0..b_m for the [m/m] approximant of exp.
inline constexpr double kPade3[] = {120.0, 60.0, 12.0, 1.0};
inline constexpr double kPade5[] = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
inline constexpr double kPade7[] = {17297280.0, 8648640.0, 1995840.0, 277200.0,
                                    25200.0,    1512.0,    56.0,      1.0};
inline constexpr double kPade9[] = {17643225600.0, 8821612800.0, 2075673600.0, 302702400.0,
                                    30270240.0,    2162160.0,    110880.0,     3960.0,
                                    90.0,          1.0};
inline constexpr double kPade13[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                     1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                     670442572800.0,      33522128640.0,       1323241920.0,
                                     40840800.0,          960960.0,            16380.0,
                                     182.0,               1.0};

// Backward-error bounds theta_m for double precision.
inline constexpr double kTheta3 = 1.495585217958292e-2;
inline constexpr double kTheta5 = 2.539398330063230e-1;
inline constexpr double kTheta7 = 9.504178996162932e-1;
inline constexpr double kTheta9 = 2.097847961257068e0;
inline constexpr double kTheta13 = 5.371920351148152e0;

template <typename Matrix, std::size_t M>
void pade_low(const Matrix& a, const double (&b)[M], Matrix& u, Matrix& v) {
  const Index n = a.rows();
  const Matrix a2 = a * a;
  Matrix power = Matrix::Identity(n, n);
  Matrix odd = b[1] * power;
  v = b[0] * power;
  for (std::size_t j = 2; j < M; j += 2) {
    power = power * a2;
    v += b[j] * power;
    if (j + 1 < M) odd += b[j + 1] * power;
  }
  u = a * odd;
}

template <typename Matrix>
void pade13(const Matrix& a, Matrix& u, Matrix& v) {
  const double* b = kPade13;
  const Index n = a.rows();
  const Matrix ident = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  Matrix inner = b[13] * a6 + b[11] * a4 + b[9] * a2;
  Matrix tmp = a6 * inner;
  tmp += b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident;
  u = a * tmp;
  inner = b[12] * a6 + b[10] * a4 + b[8] * a2;
  v = a6 * inner;
  v += b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;
}

}  // namespace detail

/// Matrix exponential by scaling and squaring with a Pade approximant
/// whose degree is chosen from the 1-norm (Higham 2005 bounds).
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> expm(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& a) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (a.rows() != a.cols()) throw std::invalid_argument("expm: matrix must be square");
  if (a.size() == 0) return a;
  if (!a.allFinite()) throw NumericalError("expm: non-finite input");

  const double norm = one_norm(a);
  Matrix u;
  Matrix v;
  int squarings = 0;
  if (norm <= detail::kTheta3) {
    detail::pade_low(a, detail::kPade3, u, v);
  } else if (norm <= detail::kTheta5) {
    detail::pade_low(a, detail::kPade5, u, v);
  } else if (norm <= detail::kTheta7) {
    detail::pade_low(a, detail::kPade7, u, v);
  } else if (norm <= detail::kTheta9) {
    detail::pade_low(a, detail::kPade9, u, v);
  } else {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm / detail::kTheta13))));
    const Matrix scaled = a * std::ldexp(1.0, -squarings);
    detail::pade13(scaled, u, v);
  }
  Matrix r = (v - u).partialPivLu().solve(v + u);
  for (int s = 0; s < squarings; ++s) r = r * r;
  return r;
}

/// Result of the augmented block exponential exp([[A, E], [0, A]]):
/// exp(A) and the Frechet derivative L(A, E).
template <typename Scalar>
struct ExpmFrechet {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> exp;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> derivative;
};

template <typename Scalar>
ExpmFrechet<Scalar> expm_frechet(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& a,
                                 const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& e) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (a.rows() != a.cols() || e.rows() != a.rows() || e.cols() != a.cols())
    throw std::invalid_argument("expm_frechet: shape mismatch");
  const Index n = a.rows();
  Matrix big = Matrix::Zero(2 * n, 2 * n);
  big.topLeftCorner(n, n) = a;
  big.topRightCorner(n, n) = e;
  big.bottomRightCorner(n, n) = a;
  const Matrix full = expm(big);
  return {full.topLeftCorner(n, n), full.topRightCorner(n, n)};
}

/// sin(x)/x, accurate near zero.
inline double sinc(double x) {
  if (std::abs(x) < 1e-4) {
    const double x2 = x * x;
    return 1.0 - x2 / 6.0 + x2 * x2 / 120.0;
  }
  return std::sin(x) / x;
}

/// One time step exp(-i dt H) for Hermitian H held in spectral form.
///
/// Scalar is double for real symmetric generators and Complex otherwise.
/// The derivative of the step with respect to a perturbation H -> H + eps E
/// uses first divided differences of the exponential on the spectrum, which
/// for imaginary-axis eigenvalues reduce to a phase times sinc.
template <typename Scalar>
class SpectralStep {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  SpectralStep() = default;

  SpectralStep(const Matrix& h, double dt) : dt_(dt) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(h);
    if (solver.info() != Eigen::Success) throw NumericalError("SpectralStep: eigensolver failed");
    vectors_ = solver.eigenvectors();
    values_ = solver.eigenvalues();
    set_phases();
  }

  /// Real symmetric tridiagonal generator given by its diagonal and
  /// first sub-diagonal.
  static SpectralStep tridiagonal(const RVector& diag, const RVector& sub, double dt) {
    static_assert(std::is_same_v<Scalar, double>, "tridiagonal path is real only");
    SpectralStep step;
    step.dt_ = dt;
    // Scale to unit max-norm as the dense solver does; the unscaled QL
    // iteration can stall on exactly paired diagonals.
    double scale = diag.size() > 0 ? diag.cwiseAbs().maxCoeff() : 0.0;
    if (sub.size() > 0) scale = std::max(scale, sub.cwiseAbs().maxCoeff());
    if (!(scale > 0.0)) scale = 1.0;
    Eigen::SelfAdjointEigenSolver<RMatrix> solver;
    solver.computeFromTridiagonal(diag / scale, sub / scale, Eigen::ComputeEigenvectors);
    if (solver.info() != Eigen::Success) {
      RMatrix h = RMatrix::Zero(diag.size(), diag.size());
      h.diagonal() = diag;
      h.diagonal(-1) = sub;
      h.diagonal(1) = sub;
      solver.compute(h / scale);
      if (solver.info() != Eigen::Success) throw NumericalError("SpectralStep: tridiagonal eigensolver failed");
    }
    step.vectors_ = solver.eigenvectors();
    step.values_ = scale * solver.eigenvalues();
    step.set_phases();
    return step;
  }

  Index dim() const { return values_.size(); }
  double dt() const { return dt_; }
  const Matrix& eigenvectors() const { return vectors_; }
  const RVector& eigenvalues() const { return values_; }
  const CVector& phases() const { return phases_; }

  CVector apply(const CVector& v) const {
    CVector coeffs = vectors_.adjoint().template cast<Complex>() * v;
    coeffs.array() *= phases_.array();
    return vectors_.template cast<Complex>() * coeffs;
  }

  CMatrix unitary() const {
    const CMatrix vc = vectors_.template cast<Complex>();
    return vc * phases_.asDiagonal() * vc.adjoint();
  }

  /// Divided-difference kernel of exp(-i dt lambda) on the spectrum.
  CMatrix divided_differences() const {
    const Index n = dim();
    CMatrix phi(n, n);
    for (Index j = 0; j < n; ++j) {
      for (Index i = 0; i < n; ++i) {
        const double mean = 0.5 * (values_(i) + values_(j)) * dt_;
        const double half_gap = 0.5 * (values_(i) - values_(j)) * dt_;
        phi(i, j) = std::polar(sinc(half_gap), -mean);
      }
    }
    return phi;
  }

  /// Generator perturbation E expressed in the eigenbasis and scaled as the
  /// exponent perturbation, i.e. V^H (-i dt E) V ∘ divided differences.
  CMatrix frechet_kernel(const Matrix& direction) const {
    const Matrix rotated = vectors_.adjoint() * direction * vectors_;
    CMatrix kernel = rotated.template cast<Complex>() * Complex(0.0, -dt_);
    return kernel.cwiseProduct(divided_differences());
  }

  /// d/de exp(-i dt (H + e E)) v at e = 0.
  CVector frechet_apply(const Matrix& direction, const CVector& v) const {
    const CVector coeffs = vectors_.adjoint().template cast<Complex>() * v;
    return vectors_.template cast<Complex>() * (frechet_kernel(direction) * coeffs);
  }

 private:
  void set_phases() {
    phases_.resize(values_.size());
    for (Index i = 0; i < values_.size(); ++i) phases_(i) = std::polar(1.0, -values_(i) * dt_);
  }

  Matrix vectors_;
  RVector values_;
  CVector phases_;
  double dt_ = 0.0;
};

}  // namespace rqoc

#endif  // RQOC_LINALG_HPP
