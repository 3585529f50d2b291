#include "rqoc/linalg.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace rqoc {
namespace {

using testing::random_hermitian;

TEST(Expm, MatchesTaylorSeriesAcrossPadeDegrees) {
  std::mt19937_64 rng(7);
  for (double scale : {1e-3, 0.1, 0.5, 1.5, 4.0, 20.0}) {
    const CMatrix h = random_hermitian(6, rng);
    const CMatrix a = Complex(0.0, -scale / one_norm(h)) * h;
    const CMatrix expected = testing::taylor_expm(a, 12, 40);
    EXPECT_LT((expm(a) - expected).cwiseAbs().maxCoeff(), 1e-12) << "scale " << scale;
  }
}

TEST(Expm, TwoByTwoRotation) {
  CMatrix a(2, 2);
  a << 0.0, Complex(0.0, -1.0), Complex(0.0, -1.0), 0.0;
  const double theta = 0.7;
  const CMatrix u = expm(CMatrix(theta * a));
  EXPECT_NEAR(u(0, 0).real(), std::cos(theta), 1e-15);
  EXPECT_NEAR(u(0, 1).imag(), -std::sin(theta), 1e-15);
}

TEST(Expm, LargeNormStaysUnitary) {
  std::mt19937_64 rng(11);
  const CMatrix h = random_hermitian(12, rng);
  const CMatrix u = expm(CMatrix(Complex(0.0, -40.0) * h));
  EXPECT_LT((u.adjoint() * u - CMatrix::Identity(12, 12)).norm(), 1e-11);
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(h);
  const CVector phases = (eig.eigenvalues().cast<Complex>() * Complex(0.0, -40.0)).array().exp();
  const CMatrix expected = eig.eigenvectors() * phases.asDiagonal() * eig.eigenvectors().adjoint();
  EXPECT_LT((u - expected).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Expm, RealInputStaysReal) {
  RMatrix a(2, 2);
  a << 0.0, 1.0, -1.0, 0.0;
  const RMatrix r = expm(RMatrix(std::numbers::pi / 2 * a));
  EXPECT_NEAR(r(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(r(0, 1), 1.0, 1e-15);
}

TEST(Expm, RejectsBadInput) {
  EXPECT_THROW(expm(CMatrix(2, 3)), std::invalid_argument);
  CMatrix nan = CMatrix::Zero(2, 2);
  nan(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(expm(nan), NumericalError);
}

TEST(ExpmFrechet, MatchesCentralDifferences) {
  std::mt19937_64 rng(3);
  const CMatrix a = Complex(0.0, -0.8) * random_hermitian(5, rng);
  const CMatrix e = Complex(0.0, -1.0) * random_hermitian(5, rng);
  const auto fr = expm_frechet(a, e);
  const double h = 1e-5;
  const CMatrix fd = (expm(CMatrix(a + h * e)) - expm(CMatrix(a - h * e))) / (2 * h);
  EXPECT_LT((fr.derivative - fd).norm() / fd.norm(), 1e-8);
  EXPECT_LT((fr.exp - expm(a)).norm(), 1e-12);
}

TEST(SpectralStep, AgreesWithPade) {
  std::mt19937_64 rng(5);
  for (bool real : {false, true}) {
    const CMatrix h = random_hermitian(7, rng, real);
    const double dt = 0.37;
    const CMatrix expected = expm(CMatrix(Complex(0.0, -dt) * h));
    CMatrix u;
    if (real) {
      u = SpectralStep<double>(h.real(), dt).unitary();
    } else {
      u = SpectralStep<Complex>(h, dt).unitary();
    }
    EXPECT_LT((u - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SpectralStep, TridiagonalMatchesDense) {
  std::mt19937_64 rng(9);
  const RVector diag = testing::random_vector(6, rng, -3.0, 3.0);
  const RVector sub = testing::random_vector(5, rng);
  RMatrix h = diag.asDiagonal();
  for (Index i = 0; i < 5; ++i) h(i + 1, i) = h(i, i + 1) = sub(i);
  const auto tri = SpectralStep<double>::tridiagonal(diag, sub, 0.2);
  const CMatrix expected = expm(CMatrix(Complex(0.0, -0.2) * h.cast<Complex>()));
  EXPECT_LT((tri.unitary() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SpectralStep, FrechetMatchesAugmentedBlock) {
  std::mt19937_64 rng(13);
  const CMatrix h = random_hermitian(6, rng);
  const CMatrix dir = random_hermitian(6, rng);
  const CVector v = testing::random_unit_vector(6, rng);
  const double dt = 0.9;
  const SpectralStep<Complex> step(h, dt);
  const auto fr = expm_frechet(CMatrix(Complex(0.0, -dt) * h), CMatrix(Complex(0.0, -dt) * dir));
  EXPECT_LT((step.frechet_apply(dir, v) - fr.derivative * v).norm(), 1e-12);
}

TEST(SpectralStep, DegenerateSpectrumDerivative) {
  // Repeated eigenvalues exercise the sinc limit of the divided differences.
  const CMatrix h = CMatrix::Identity(3, 3) * 2.0;
  std::mt19937_64 rng(17);
  const CMatrix dir = random_hermitian(3, rng);
  const SpectralStep<Complex> step(h, 0.5);
  const auto fr = expm_frechet(CMatrix(Complex(0.0, -0.5) * h), CMatrix(Complex(0.0, -0.5) * dir));
  const CVector v = testing::random_unit_vector(3, rng);
  EXPECT_LT((step.frechet_apply(dir, v) - fr.derivative * v).norm(), 1e-13);
}

TEST(Kron, RowMajorBlocks) {
  RMatrix a(2, 2);
  a << 1, 2, 3, 4;
  RMatrix b(1, 2);
  b << 5, 6;
  const RMatrix k = kron(a, b);
  ASSERT_EQ(k.rows(), 2);
  ASSERT_EQ(k.cols(), 4);
  EXPECT_EQ(k(0, 0), 5);
  EXPECT_EQ(k(0, 3), 12);
  EXPECT_EQ(k(1, 2), 20);
}

TEST(Sinc, SmoothAcrossSeriesSwitch) {
  EXPECT_DOUBLE_EQ(sinc(0.0), 1.0);
  EXPECT_NEAR(sinc(0.99e-4), std::sin(0.99e-4) / 0.99e-4, 3e-16);
  EXPECT_DOUBLE_EQ(sinc(1.0), std::sin(1.0));
}

TEST(HermitianDefect, DetectsAsymmetry) {
  CMatrix m = CMatrix::Zero(2, 2);
  m(0, 1) = Complex(1.0, 1.0);
  m(1, 0) = Complex(1.0, -1.0);
  EXPECT_EQ(hermitian_defect(m), 0.0);
  m(1, 0) = Complex(1.0, 1.0);
  EXPECT_GT(hermitian_defect(m), 1.0);
  EXPECT_TRUE(std::isinf(hermitian_defect(CMatrix(2, 3))));
}

}  // namespace
}  // namespace rqoc
