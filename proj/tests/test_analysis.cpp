#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>

#include "precgd/analysis.hpp"
#include "precgd/metric.hpp"
#include "test_support.hpp"

using namespace precgd;
using precgd::testing::identity_instance;

namespace {

Matrix e1(Index n) {
  Matrix z = Matrix::Zero(n, 1);
  z(0, 0) = 1.0;
  return z;
}

Matrix counter_point(double xi) {
  Matrix x = Matrix::Zero(2, 2);
  x(0, 0) = 1.0;
  x(1, 1) = xi;
  return x;
}

// sin(theta_k) from an eigendecomposition of X X^T rather than an SVD of X.
double sin_theta_oracle(const Matrix& x, const Matrix& ms, Index k) {
  const Index n = x.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> es(x * x.transpose());
  Matrix uk(n, k);
  for (Index j = 0; j < k; ++j) uk.col(j) = es.eigenvectors().col(n - 1 - j);
  const Matrix q = Matrix::Identity(n, n) - uk * uk.transpose();
  const Matrix e = x * x.transpose() - ms;
  return (q * e * q).norm() / e.norm();
}

}  // namespace

TEST(LipschitzLP, Examples) {
  Rng rng(1);
  const Matrix x = rng.normal_matrix(5, 2);
  EXPECT_NEAR(lipschitz_LP(x, Matrix::Zero(5, 2), 0.1, 0.0, 0.0), 8.0, 1e-14);

  Matrix q = Matrix::Zero(4, 2);
  q(0, 0) = 1.0;
  q(1, 1) = 1.0;
  Matrix d = Matrix::Zero(4, 2);
  d(2, 0) = 1.0;  // ||D||_P = ||D||_F = 1 with P = I
  EXPECT_NEAR(lipschitz_LP(q, d, 0.0, 0.0, 1.0), 22.0, 1e-13);
}

TEST(LipschitzLP, DecreasesWithLargerDenominator) {
  // X = c Q with orthonormal Q gives lambda_min = c^2 and P = c^2 I. D is
  // rescaled so ||D||_P stays 1 while lambda_min doubles.
  Matrix q = Matrix::Zero(4, 2);
  q(0, 0) = 1.0;
  q(1, 1) = 1.0;
  Matrix d = Matrix::Zero(4, 2);
  d(2, 0) = 1.0;
  const Matrix x2 = q * std::sqrt(2.0), d2 = d / std::sqrt(2.0);
  ASSERT_NEAR(p_norm(x2, 0.0, d2), 1.0, 1e-14);
  EXPECT_LT(lipschitz_LP(x2, d2, 0.0, 0.0, 1.0), lipschitz_LP(q, d, 0.0, 0.0, 1.0));
}

TEST(LipschitzLP, DomainError) {
  EXPECT_THROW(lipschitz_LP(Matrix::Zero(3, 2), Matrix::Zero(3, 2), 0.0, 0.0, 1.0), DomainError);
}

TEST(MuP, Examples) {
  const double a = mu_P(0.0, 1.0, 4, 2);
  EXPECT_NEAR(a, 0.5 / (1 + 3 * std::sqrt(2.0)), 1e-15);
  EXPECT_NEAR(a, 0.09537, 5e-6);
  const double b = mu_P(0.0, 1.0, 2, 2);
  EXPECT_NEAR(b, 0.5 / (1 + 1 / (std::sqrt(2.0) - 1)), 1e-15);
  EXPECT_NEAR(b, 0.14645, 5e-6);
}

TEST(MuP, Monotone) {
  for (Index gap : {0, 1, 3}) {
    double prev = 1e9;
    for (double d = 0.0; d < 0.95; d += 0.05) {
      const double v = mu_P(d, 1.0, 2 + gap, 2);
      EXPECT_LE(v, prev);
      EXPECT_GT(v, 0.0);
      prev = v;
    }
    prev = 1e9;
    for (double c = 0.1; c < 5.0; c += 0.3) {
      const double v = mu_P(0.2, c, 2 + gap, 2);
      EXPECT_LE(v, prev);
      prev = v;
    }
  }
}

TEST(MuP, ShortFormDiffersOnlyInFirstTerm) {
  EXPECT_NEAR(mu_P_short_form(0.0, 1.0, 2, 2), 0.5 * (std::sqrt(2.0) - 1), 1e-15);
  EXPECT_NEAR(mu_P_short_form(0.0, 1.0, 4, 2), mu_P(0.0, 1.0, 4, 2), 1e-15);
}

TEST(MuP, Errors) {
  EXPECT_THROW(mu_P(0.0, 1.0, 1, 2), DomainError);
  EXPECT_THROW(mu_P(1.0, 1.0, 2, 2), DomainError);
  EXPECT_THROW(mu_P(0.1, 0.0, 2, 2), DomainError);
}

TEST(SinTheta, CounterExample) {
  const Matrix ms = e1(2) * e1(2).transpose();
  EXPECT_NEAR(*sin_theta(counter_point(0.5), ms, 1), 1.0, 1e-15);
  EXPECT_NEAR(*sin_theta(counter_point(0.5), ms, 2), 0.0, 1e-15);
}

TEST(SinTheta, ZeroWhenErrorInsideSubspace) {
  Rng rng(2);
  const Matrix z = rng.normal_matrix(6, 2);
  Matrix x(6, 3);
  x << z, Matrix::Zero(6, 1);
  x.col(2) = z.col(0) * 0.3;  // E supported on range(Z) = range(U_2)
  const Matrix ms = z * z.transpose();
  EXPECT_LE(*sin_theta(x, ms, 2), 1e-12);
}

TEST(SinTheta, MatchesProjectorOracle) {
  Rng rng(3);
  for (int t = 0; t < 30; ++t) {
    const Matrix x = rng.normal_matrix(7, 3);
    const Matrix z = rng.normal_matrix(7, 2);
    const Matrix ms = z * z.transpose();
    const auto all = *sin_theta_all(x, ms);
    for (Index k = 1; k <= 3; ++k) {
      const double want = sin_theta_oracle(x, ms, k);
      EXPECT_NEAR(*sin_theta(x, ms, k), want, 1e-10);
      EXPECT_NEAR(all(k - 1), want, 1e-10);
      EXPECT_GE(all(k - 1), 0.0);
      EXPECT_LE(all(k - 1), 1.0);
    }
  }
}

TEST(SinTheta, UndefinedAtExactRecovery) {
  Rng rng(4);
  const Matrix z = rng.normal_matrix(5, 2);
  EXPECT_FALSE(sin_theta(z, z * z.transpose(), 1).has_value());
  EXPECT_THROW(sin_theta(z, z * z.transpose(), 3), DomainError);
}

TEST(GradientLowerBound, ClampAndScaledForm) {
  Rng rng(5);
  const Matrix x = rng.normal_matrix(6, 3);
  const Matrix z = rng.normal_matrix(6, 2);
  const Matrix ms = z * z.transpose();
  EXPECT_EQ(*gradient_lower_bound(x, ms, 0.3, 1.0), 0.0);

  // eta = 0: max_k 2 cos^2 * ||E||^2.
  const auto s = *sin_theta_all(x, ms);
  const double e2 = (x * x.transpose() - ms).squaredNorm();
  double want = 0.0;
  for (Index k = 0; k < 3; ++k) want = std::max(want, 2 * (1 - s(k) * s(k)) * e2);
  EXPECT_NEAR(*gradient_lower_bound(x, ms, 0.0, 0.0), want, 1e-10 * want);
}

TEST(GradientLowerBound, HoldsOnIdentitySamples) {
  Rng rng(6);
  const auto truth = make_ground_truth(8, 2, 4.0, 2);
  const auto inst = identity_instance(truth.z(), 4);
  const double rho2 = 1.0 / 3.0, lam = truth.lambda_r_star();
  for (int t = 0; t < 100; ++t) {
    const Matrix x = precgd::testing::sample_near(rng, truth.z(), 4, 1e-3, 0.5, [&](const Matrix& c) {
      return loss_l2(inst.ensemble, inst.observations.y, c) <= rho2 * lam * lam;
    });
    const double err = factor_error(x, truth.m_star());
    const Matrix g = grad_l2(inst.ensemble, inst.observations.y, x);
    const double d = dual_p_norm(x, err, g);
    EXPECT_GE(d * d * (1 + 1e-10), *gradient_lower_bound(x, truth.m_star(), err, 0.0));
  }
}

TEST(BasisAlignment, ZeroWhenRangesContain) {
  Rng rng(7);
  const Matrix z = rng.normal_matrix(6, 2);
  Matrix x(6, 3);
  x.leftCols(2) = z * 1.1;
  x.col(2) = z.col(1) * 0.2;
  EXPECT_LE(*basis_alignment_ratio(x, z, 2), 1e-12);
  EXPECT_LE(*basis_alignment_ratio(x, z, 3), 1e-12);
  EXPECT_THROW(basis_alignment_ratio(x, z, 1), DomainError);
}

TEST(RestrictedFrobenius, Examples) {
  Matrix h = Matrix::Zero(3, 3);
  h.diagonal() << 3, 2, 1;
  EXPECT_NEAR(restricted_frobenius(h, 2), std::sqrt(13.0), 1e-14);
  EXPECT_NEAR(restricted_frobenius(h, 3), h.norm(), 1e-14);
  Rng rng(8);
  const Matrix b = rng.normal_matrix(6, 2);
  const Matrix low = b * rng.normal_matrix(2, 6);
  EXPECT_NEAR(restricted_frobenius(low, 2), low.norm(), 1e-12 * low.norm());
  const Matrix full = rng.normal_matrix(6, 6);
  EXPECT_LT(restricted_frobenius(full, 3), full.norm());
  EXPECT_THROW(restricted_frobenius(full, 0), DomainError);
}

TEST(PlRatio, EuclideanCounterExample) {
  // At eta -> infinity the scaled ratio approaches ||grad||_F^2 / f = 16 xi^2.
  const auto inst = identity_instance(e1(2), 2);
  for (double xi : {0.5, 0.1, 0.01}) {
    const double eta = 1e10;
    const double v = *pl_ratio(inst.ensemble, inst.observations.y, counter_point(xi), eta) * eta;
    EXPECT_NEAR(v, 16 * xi * xi, 1e-6 * 16 * xi * xi);
  }
  Matrix x = Matrix::Zero(2, 2);
  x(0, 0) = 1.0;
  EXPECT_FALSE(pl_ratio(inst.ensemble, inst.observations.y, x, 0.1).has_value());
}

TEST(PlRatio, PreconditionedCounterExampleIsConstant) {
  // With eta = xi^2: dual norm^2 = 16 xi^6 / (2 xi^2) = 8 f, for every xi.
  const auto inst = identity_instance(e1(2), 2);
  const double a = *pl_ratio(inst.ensemble, inst.observations.y, counter_point(0.5), 0.25);
  const double b = *pl_ratio(inst.ensemble, inst.observations.y, counter_point(0.01), 1e-4);
  EXPECT_NEAR(a, 8.0, 1e-12);
  EXPECT_NEAR(b, 8.0, 1e-10);
}

TEST(RadiusCheck, Examples) {
  const auto truth = make_ground_truth(5, 2, 3.0, 1);
  const auto ens = MeasurementEnsemble::gaussian(5, 100, 2);
  EXPECT_TRUE(radius_check(truth.z(), truth, 1e-3, 0.0, ens));
  EXPECT_FALSE(radius_check(Matrix::Zero(5, 2), truth, 0.1, 0.0, ens));

  // Strict inequality at the boundary: scale rho so lhs equals the bound.
  const auto unit = MeasurementEnsemble::identity(5).with_normalization(1.0);
  Matrix x0 = truth.z();
  x0.col(1) *= 0.9;
  const double lhs = (x0 * x0.transpose() - truth.m_star()).squaredNorm();
  const double rho = std::sqrt(lhs) / truth.lambda_r_star();
  EXPECT_FALSE(radius_check(x0, truth, rho * (1 - 1e-12), 0.0, unit));
  EXPECT_TRUE(radius_check(x0, truth, rho * (1 + 1e-9), 0.0, unit));
}

TEST(Diagnose, CounterExampleReport) {
  auto inst = identity_instance(e1(2), 2);
  const auto rep = diagnose(inst, counter_point(0.5));
  ASSERT_TRUE(rep.sin_theta.has_value());
  EXPECT_NEAR((*rep.sin_theta)(0), 1.0, 1e-14);
  EXPECT_NEAR(rep.lambda_spectrum(0), 1.0, 1e-14);
  EXPECT_NEAR(rep.lambda_spectrum(1), 0.25, 1e-14);
  EXPECT_NEAR(rep.delta_hat, 0.0, 1e-12);
  ASSERT_TRUE(rep.mu_P.has_value());
  EXPECT_TRUE(rep.L_P.has_value());
}

TEST(Diagnose, ExactSolutionAndBlind) {
  const auto truth = make_ground_truth(4, 2, 3.0, 0);
  auto inst = identity_instance(truth.z(), 2);
  const auto rep = diagnose(inst, truth.z());
  EXPECT_TRUE(*rep.radius_ok);
  EXPECT_FALSE(rep.sin_theta.has_value());
  const auto text = rep.to_key_value();
  EXPECT_NE(text.find("sin_theta_1=converged"), std::string::npos) << text;

  inst.truth.reset();
  const auto blind = diagnose(inst, truth.z());
  EXPECT_FALSE(blind.has_truth);
  const auto btext = blind.to_key_value();
  EXPECT_NE(btext.find("mu_P=unavailable"), std::string::npos) << btext;
  EXPECT_NE(btext.find("radius_ok=unavailable"), std::string::npos) << btext;
}
