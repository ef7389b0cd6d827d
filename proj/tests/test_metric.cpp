#include <gtest/gtest.h>

#include <Eigen/QR>

#include <cmath>

#include "precgd/metric.hpp"
#include "test_support.hpp"

using namespace precgd;
using precgd::testing::inner;

namespace {

Matrix diag2(double a, double b) {
  Matrix x = Matrix::Zero(2, 2);
  x(0, 0) = a;
  x(1, 1) = b;
  return x;
}

Matrix orthonormal(Rng& rng, Index n, Index r) {
  Eigen::HouseholderQR<Matrix> qr(rng.normal_matrix(n, r));
  return qr.householderQ() * Matrix::Identity(n, r);
}

}  // namespace

TEST(PGram, Examples) {
  Rng rng(1);
  const Matrix q = orthonormal(rng, 6, 3);
  EXPECT_LE((p_gram(q, 0.0) - Matrix::Identity(3, 3)).norm(), 1e-14);
  EXPECT_LE((p_gram(diag2(1, 0.5), 0.25) - diag2(1.25, 0.5)).norm(), 1e-16);
  EXPECT_EQ(p_gram(Matrix::Zero(4, 2), 0.0).norm(), 0.0);
  EXPECT_THROW(p_gram(q, -1.0), DomainError);
}

TEST(PNorm, Examples) {
  Rng rng(2);
  const Matrix q = orthonormal(rng, 6, 3);
  const Matrix g = rng.normal_matrix(6, 3);
  EXPECT_NEAR(p_norm(q, 0.0, g), g.norm(), 1e-13);
  EXPECT_EQ(p_norm(q, 0.3, Matrix::Zero(6, 3)), 0.0);
  EXPECT_NEAR(p_norm(diag2(1, 0.5), 0.25, Matrix::Identity(2, 2)), std::sqrt(1.75), 1e-15);
  EXPECT_NEAR(p_norm(diag2(1, 0.5), 0.25, Matrix::Identity(2, 2)), 1.322876, 1e-6);
  EXPECT_THROW(p_norm(q, 0.0, Matrix::Zero(5, 3)), DimensionError);
}

TEST(DualPNorm, Examples) {
  Rng rng(3);
  const Matrix q = orthonormal(rng, 6, 3);
  const Matrix g = rng.normal_matrix(6, 3);
  EXPECT_NEAR(dual_p_norm(q, 0.0, g), g.norm(), 1e-13);
  const double want = std::sqrt(1 / 1.25 + 1 / 0.5);
  EXPECT_NEAR(dual_p_norm(diag2(1, 0.5), 0.25, Matrix::Identity(2, 2)), want, 1e-15);
  EXPECT_NEAR(want, 1.67332, 1e-5);
}

TEST(DualPNorm, CauchySchwarzHundredPairs) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const Matrix x = rng.normal_matrix(7, 3);
    const double eta = rng.uniform();
    const Matrix g = rng.normal_matrix(7, 3), h = rng.normal_matrix(7, 3);
    EXPECT_LE(std::abs(inner(g, h)), p_norm(x, eta, h) * dual_p_norm(x, eta, g) * (1 + 1e-12));
  }
}

TEST(DualPNorm, DualityAttained) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const Matrix x = rng.normal_matrix(6, 4);
    const double eta = 0.01 + rng.uniform();
    const Matrix g = rng.normal_matrix(6, 4);
    const double d = dual_p_norm(x, eta, g);
    const Matrix y = apply_inverse(x, eta, g) / d;
    EXPECT_NEAR(p_norm(x, eta, y), 1.0, 1e-12);
    EXPECT_NEAR(inner(y, g), d, 1e-12 * d);
    EXPECT_NEAR(p_norm(x, eta, apply_inverse(x, eta, g)), d, 1e-12 * d);
  }
}

TEST(DualPNorm, EigenAndCholeskyAgree) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const Matrix x = rng.normal_matrix(8, 3);
    const double eta = t % 4 == 0 ? 0.0 : rng.uniform();
    const Matrix g = rng.normal_matrix(8, 3);
    const double a = dual_p_norm(x, eta, g), b = dual_p_norm_eig(x, eta, g);
    EXPECT_NEAR(a, b, 1e-12 * a);
  }
}

TEST(DualPNorm, SingularCarriesEigenvalue) {
  Matrix x = Matrix::Zero(3, 2);
  x(0, 0) = 1.0;  // rank 1, eta = 0
  try {
    dual_p_norm(x, 0.0, Matrix::Ones(3, 2));
    FAIL() << "expected SingularityError";
  } catch (const SingularityError& e) {
    EXPECT_LE(e.min_eigenvalue(), 1e-14);
  }
  EXPECT_THROW(apply_inverse(x, 0.0, Matrix::Ones(3, 2)), SingularityError);
  EXPECT_THROW(dual_p_norm_eig(x, 0.0, Matrix::Ones(3, 2)), SingularityError);
  EXPECT_NO_THROW(dual_p_norm(x, 1e-3, Matrix::Ones(3, 2)));
}

TEST(ApplyInverse, Examples) {
  Rng rng(7);
  const Matrix q = orthonormal(rng, 5, 2);
  const Matrix g = rng.normal_matrix(5, 2);
  EXPECT_LE((apply_inverse(q, 0.0, g) - g).norm(), 1e-13 * g.norm());
  const Matrix got = apply_inverse(diag2(1, 0.5), 0.0, diag2(0, 0.5));
  EXPECT_LE((got - diag2(0, 2)).norm(), 1e-15);
}

TEST(ApplyInverse, LargeEtaRecoversGradient) {
  Rng rng(8);
  const Matrix x = rng.normal_matrix(6, 3);
  const Matrix g = rng.normal_matrix(6, 3);
  const double eta = 1e8;
  EXPECT_LE((apply_inverse(x, eta, g) * eta - g).norm(), 1e-6 * g.norm());
}

TEST(Damping, Examples) {
  EXPECT_NEAR(damping(DampingSchedule::sqrt_f(), 0.04), 0.2, 1e-16);
  EXPECT_NEAR(damping(DampingSchedule::variance_proxy(1.0), 1.25), 0.5, 1e-15);
  EXPECT_NEAR(damping(DampingSchedule::variance_proxy(1.0), 0.75), 0.5, 1e-15);
  EXPECT_EQ(damping(DampingSchedule::lp_root(1.4), 1.0), 1.0);
  EXPECT_NEAR(damping(DampingSchedule::lp_root(2.0), 9.0), 3.0, 1e-15);
  EXPECT_EQ(damping(DampingSchedule::fixed(0.3), 123.0), 0.3);
  EXPECT_EQ(damping(DampingSchedule::oracle_residual(), 5.0, 0.7), 0.7);
}

TEST(Damping, OracleNeedsResidual) {
  EXPECT_THROW(damping(DampingSchedule::oracle_residual(), 1.0), ConfigError);
}

TEST(Damping, InvalidParameters) {
  EXPECT_THROW(DampingSchedule::fixed(-1.0), DomainError);
  EXPECT_THROW(DampingSchedule::variance_proxy(-0.1), DomainError);
}

TEST(Damping, SqrtFMonotone) {
  double prev = 0.0;
  for (double f = 0.0; f < 10.0; f += 0.37) {
    const double e = damping(DampingSchedule::sqrt_f(), f);
    EXPECT_GE(e, prev);
    prev = e;
  }
}

TEST(Damping, SqrtFEqualsErrorOnIdentity) {
  // Identity operator, norm 1: sqrt(f) = ||X X^T - M*||_F.
  Rng rng(9);
  const auto truth = make_ground_truth(6, 2, 3.0, 1);
  const auto ens = MeasurementEnsemble::identity(6).with_normalization(1.0);
  const auto y = observe(ens, truth, 0.0, 0).y;
  for (int t = 0; t < 20; ++t) {
    const Matrix x = rng.normal_matrix(6, 3);
    const double eta = damping(DampingSchedule::sqrt_f(), loss_l2(ens, y, x));
    const double err = factor_error(x, truth.m_star());
    EXPECT_NEAR(eta, err, 1e-12 * err);
  }
}
