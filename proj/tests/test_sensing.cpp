#include <gtest/gtest.h>

#include <cmath>

#include "precgd/sensing.hpp"
#include "test_support.hpp"

using namespace precgd;
using precgd::testing::inner;
using precgd::testing::random_orthogonal;

namespace {

Matrix sym(Rng& rng, Index n) { return symmetrize(rng.normal_matrix(n, n)); }

// Scalar loop: r_i = y_i - <A_i, X X^T>.
Vector residual_loop(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x) {
  const Matrix xx = x * x.transpose();
  Vector r(ens.m());
  for (Index i = 0; i < ens.m(); ++i) r(i) = y(i) - inner(ens.matrix(i), xx);
  return r;
}

template <class F>
Matrix finite_diff(F f, const Matrix& x, double h) {
  Matrix g(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.cols(); ++j) {
      Matrix xp = x, xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      g(i, j) = (f(xp) - f(xm)) / (2 * h);
    }
  return g;
}

struct Setup {
  MeasurementEnsemble ens;
  Vector y;
  Matrix x;
};

Setup random_setup(std::uint64_t seed, Index n = 5, Index m = 40, Index r = 2) {
  Rng rng(seed);
  auto ens = MeasurementEnsemble::gaussian(n, m, seed + 100);
  const auto truth = make_ground_truth(n, 2, 3.0, seed);
  auto obs = observe(ens, truth, 0.1, seed + 200);
  return {ens, obs.y, rng.normal_matrix(n, r)};
}

}  // namespace

TEST(Ensemble, GaussianMatricesSymmetric) {
  const auto ens = MeasurementEnsemble::gaussian(6, 10, 1);
  for (Index i = 0; i < ens.m(); ++i) {
    const Matrix a = ens.matrix(i);
    EXPECT_LE((a - a.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_EQ(ens.normalization(), 10.0);
}

TEST(Ensemble, CustomIsSymmetrized) {
  std::vector<double> flat = {1, 2, 0, 3};  // row-major [[1,2],[0,3]]
  const auto ens = MeasurementEnsemble::custom(2, 1, flat);
  EXPECT_DOUBLE_EQ(ens.matrix(0)(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(ens.matrix(0)(1, 0), 1.0);
  EXPECT_THROW(MeasurementEnsemble::custom(2, 2, flat), DimensionError);
}

TEST(Forward, IdentityVectorizes) {
  const auto ens = MeasurementEnsemble::identity(2);
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = 1;
  m(1, 1) = 2;
  const Vector v = ens.forward(m);
  ASSERT_EQ(v.size(), 4);
  EXPECT_EQ(v(0), 1);
  EXPECT_EQ(v(1), 0);
  EXPECT_EQ(v(2), 0);
  EXPECT_EQ(v(3), 2);
  EXPECT_EQ(ens.m(), 4);
}

TEST(Forward, ZeroGivesZero) {
  const auto ens = MeasurementEnsemble::gaussian(4, 7, 3);
  EXPECT_EQ(ens.forward(Matrix::Zero(4, 4)).norm(), 0.0);
}

TEST(Forward, MatchesDoubleLoop) {
  Rng rng(5);
  const auto ens = MeasurementEnsemble::gaussian(5, 3, 9);
  const Matrix m = rng.normal_matrix(5, 5);
  const Vector v = ens.forward(m);
  for (Index i = 0; i < 3; ++i) {
    const double ref = inner(ens.matrix(i), m);
    EXPECT_NEAR(v(i), ref, 1e-12 * (1 + std::abs(ref)));
  }
}

TEST(Forward, DimensionMismatch) {
  const auto ens = MeasurementEnsemble::gaussian(4, 7, 3);
  EXPECT_THROW(ens.forward(Matrix::Zero(3, 3)), DimensionError);
  EXPECT_THROW(ens.adjoint(Vector::Zero(6)), DimensionError);
}

TEST(Adjoint, ZeroAndSelection) {
  const auto ens = MeasurementEnsemble::gaussian(4, 6, 2);
  EXPECT_EQ(ens.adjoint(Vector::Zero(6)).norm(), 0.0);
  Vector e1 = Vector::Zero(6);
  e1(0) = 1.0;
  EXPECT_LE((ens.adjoint(e1) - ens.matrix(0)).norm(), 1e-15);
}

TEST(Adjoint, AdjointnessHundredPairs) {
  Rng rng(8);
  for (const auto& ens :
       {MeasurementEnsemble::gaussian(6, 30, 4), MeasurementEnsemble::identity(5)}) {
    for (int t = 0; t < 100; ++t) {
      const Matrix m = sym(rng, ens.n());
      Vector v(ens.m());
      for (Index i = 0; i < ens.m(); ++i) v(i) = rng.normal();
      const double lhs = ens.forward(m).dot(v);
      const double rhs = inner(m, ens.adjoint(v));
      EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
    }
  }
}

TEST(Adjoint, IdentityReshapesAndSymmetrizes) {
  const auto ens = MeasurementEnsemble::identity(2);
  Vector v(4);
  v << 1, 2, 4, 3;  // column-major [[1,4],[2,3]]
  const Matrix a = ens.adjoint(v);
  EXPECT_DOUBLE_EQ(a(0, 0), 1);
  EXPECT_DOUBLE_EQ(a(0, 1), 3);
  EXPECT_DOUBLE_EQ(a(1, 0), 3);
  EXPECT_DOUBLE_EQ(a(1, 1), 3);
}

TEST(Kernels, ParallelMatchesReferenceBitwise) {
  Rng rng(13);
  const auto ens = MeasurementEnsemble::gaussian(9, 257, 21);
  const Matrix m = rng.normal_matrix(9, 9);
  Vector v(257);
  for (Index i = 0; i < 257; ++i) v(i) = rng.normal();
  EXPECT_TRUE(ens.forward(m) == ens.forward_reference(m));
  EXPECT_TRUE(ens.adjoint(v) == ens.adjoint_reference(v));
}

TEST(Observe, NoiselessEqualsForward) {
  const auto ens = MeasurementEnsemble::gaussian(5, 20, 1);
  const auto truth = make_ground_truth(5, 2, 2.0, 1);
  const auto obs = observe(ens, truth, 0.0, 3);
  EXPECT_TRUE(obs.y == ens.forward(truth.m_star()));
}

TEST(Observe, Deterministic) {
  const auto ens = MeasurementEnsemble::gaussian(5, 20, 1);
  const auto truth = make_ground_truth(5, 2, 2.0, 1);
  EXPECT_TRUE(observe(ens, truth, 0.5, 3).y == observe(ens, truth, 0.5, 3).y);
  EXPECT_FALSE(observe(ens, truth, 0.5, 3).y == observe(ens, truth, 0.5, 4).y);
  EXPECT_THROW(observe(ens, truth, -1.0, 3), DomainError);
}

TEST(Observe, NoiseVarianceConcentrates) {
  // (1/m)||eps||^2 in [0.95, 1.05] for m = 1e4, checked over 100 seeds.
  const auto ens = MeasurementEnsemble::identity(100);
  const auto truth = make_ground_truth(100, 2, 2.0, 0);
  const Vector clean = ens.forward(truth.m_star());
  int inside = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto obs = observe(ens, truth, 1.0, s);
    const double v = (obs.y - clean).squaredNorm() / 1e4;
    inside += (v >= 0.95 && v <= 1.05);
  }
  EXPECT_GE(inside, 99);
}

TEST(LossL2, ZeroAtTruth) {
  const auto ens = MeasurementEnsemble::gaussian(5, 30, 1);
  const auto truth = make_ground_truth(5, 2, 2.0, 1);
  const auto obs = observe(ens, truth, 0.0, 0);
  EXPECT_LE(loss_l2(ens, obs.y, truth.z()), 1e-24);
  EXPECT_LE(grad_l2(ens, obs.y, truth.z()).norm(), 1e-12);
}

TEST(LossL2, CounterExampleValues) {
  Matrix z = Matrix::Zero(2, 1);
  z(0, 0) = 1;
  const auto truth = GroundTruth::from_factor(z);
  const auto ens = MeasurementEnsemble::identity(2);
  const auto y = observe(ens, truth, 0.0, 0).y;
  Matrix x = Matrix::Zero(2, 2);
  x(0, 0) = 1;
  x(1, 1) = 0.5;
  EXPECT_NEAR(loss_l2(ens, y, x), 0.015625, 1e-16);
  const auto unit = ens.with_normalization(1.0);
  EXPECT_NEAR(loss_l2(unit, y, x), 0.0625, 1e-16);
  const Matrix g = grad_l2(unit, y, x);
  EXPECT_NEAR(g(0, 0), 0.0, 1e-16);
  EXPECT_NEAR(g(0, 1), 0.0, 1e-16);
  EXPECT_NEAR(g(1, 0), 0.0, 1e-16);
  EXPECT_NEAR(g(1, 1), 0.5, 1e-15);
  EXPECT_NEAR(g.squaredNorm(), 0.25, 1e-15);
}

TEST(LossL2, GradNormScalesWithXiSquared) {
  // ||grad||_F^2 / f = 16 xi^2 on the counter-example family.
  Matrix z = Matrix::Zero(2, 1);
  z(0, 0) = 1;
  const auto truth = GroundTruth::from_factor(z);
  const auto ens = MeasurementEnsemble::identity(2).with_normalization(1.0);
  const auto y = observe(ens, truth, 0.0, 0).y;
  for (double xi : {0.9, 0.5, 0.1, 0.01}) {
    Matrix x = Matrix::Zero(2, 2);
    x(0, 0) = 1;
    x(1, 1) = xi;
    const auto e = eval_l2(ens, y, x);
    EXPECT_NEAR(e.grad.squaredNorm() / e.f, 16 * xi * xi, 1e-10 * xi * xi);
  }
}

TEST(LossL2, MatchesScalarLoop) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto st = random_setup(s);
    const double ref = residual_loop(st.ens, st.y, st.x).squaredNorm() / st.ens.m();
    EXPECT_NEAR(loss_l2(st.ens, st.y, st.x), ref, 1e-12 * ref);
    EXPECT_GE(loss_l2(st.ens, st.y, st.x), 0.0);
  }
}

TEST(GradL2, FiniteDifferences) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto st = random_setup(s);
    const Matrix g = grad_l2(st.ens, st.y, st.x);
    const Matrix fd =
        finite_diff([&](const Matrix& x) { return loss_l2(st.ens, st.y, x); }, st.x, 1e-5);
    for (Index i = 0; i < g.rows(); ++i)
      for (Index j = 0; j < g.cols(); ++j)
        EXPECT_NEAR(g(i, j), fd(i, j), 1e-5 * std::max(1.0, std::abs(g(i, j))));
  }
}

TEST(GradL2, DirectionalIdentity) {
  // <grad, D> = (2/m) <A(X D^T + D X^T), A(X X^T) - y>.
  Rng rng(77);
  for (int t = 0; t < 50; ++t) {
    const auto st = random_setup(1000 + t);
    const Matrix d = rng.normal_matrix(st.x.rows(), st.x.cols());
    const double lhs = inner(grad_l2(st.ens, st.y, st.x), d);
    const Matrix sdir = st.x * d.transpose() + d * st.x.transpose();
    const Vector res = st.ens.forward(st.x * st.x.transpose()) - st.y;
    const double rhs = 2.0 / st.ens.m() * st.ens.forward(sdir).dot(res);
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(rhs)));
  }
}

TEST(LossLp, TrivialValues) {
  // A = [e1 e1^T ; e2 e2^T] on n = 2, X = 0: residuals are -y.
  std::vector<double> flat = {1, 0, 0, 0, 0, 0, 0, 1};
  const auto ens = MeasurementEnsemble::custom(2, 2, flat);
  Vector y(2);
  y << -3, 4;
  const Matrix x = Matrix::Zero(2, 1);
  EXPECT_NEAR(loss_lp(ens, y, x, 1.0), 7.0, 1e-15);
  EXPECT_EQ(loss_lp(ens, Vector::Zero(2), x, 1.4), 0.0);
  EXPECT_EQ(grad_lp(ens, Vector::Zero(2), x, 1.4).norm(), 0.0);
  EXPECT_THROW(loss_lp(ens, y, x, 2.0), DomainError);
  EXPECT_THROW(loss_lp(ens, y, x, 0.9), DomainError);
}

TEST(LossLp, MatchesScalarLoop) {
  const auto st = random_setup(4);
  const Vector r = residual_loop(st.ens, st.y, st.x);
  double ref = 0.0;
  for (Index i = 0; i < r.size(); ++i) ref += std::pow(std::abs(r(i)), 1.4);
  EXPECT_NEAR(loss_lp(st.ens, st.y, st.x, 1.4), ref, 1e-12 * ref);
}

TEST(GradLp, FiniteDifferencesAwayFromKinks) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto st = random_setup(s);
    const Vector r = residual_loop(st.ens, st.y, st.x);
    ASSERT_GT(r.cwiseAbs().minCoeff(), 1e-3);
    const Matrix g = grad_lp(st.ens, st.y, st.x, 1.4);
    const Matrix fd =
        finite_diff([&](const Matrix& x) { return loss_lp(st.ens, st.y, x, 1.4); }, st.x, 1e-6);
    for (Index i = 0; i < g.rows(); ++i)
      for (Index j = 0; j < g.cols(); ++j)
        EXPECT_NEAR(g(i, j), fd(i, j), 1e-4 * std::max(1.0, std::abs(g(i, j))));
  }
}

TEST(GradLp, PTwoMatchesL2UnitNormalization) {
  const auto st = random_setup(9);
  const auto unit = st.ens.with_normalization(1.0);
  const Matrix g2 = grad_l2(unit, st.y, st.x);
  const auto lp = detail::eval_lp_unchecked(st.ens, st.y, st.x, 2.0);
  EXPECT_LE((lp.grad - g2).norm(), 1e-10 * g2.norm());
  EXPECT_NEAR(lp.f, loss_l2(unit, st.y, st.x), 1e-10 * lp.f);
}

TEST(LossLp, RotationInvariant) {
  Rng rng(3);
  const auto st = random_setup(2, 5, 40, 3);
  const Matrix q = random_orthogonal(rng, 3);
  const double a = loss_lp(st.ens, st.y, st.x, 1.1);
  EXPECT_NEAR(loss_lp(st.ens, st.y, st.x * q, 1.1), a, 1e-12 * a);
}

TEST(Rip, IdentityIsIsometry) {
  const auto ens = MeasurementEnsemble::identity(6).with_normalization(1.0);
  EXPECT_LE(estimate_delta(ens, 2, 50, 1), 1e-12);
  Rng rng(1);
  const Matrix m = sym(rng, 6);
  EXPECT_NEAR(ens.forward(m).squaredNorm(), m.squaredNorm(), 1e-12 * m.squaredNorm());
}

TEST(Rip, GaussianWellSampledIsSmall) {
  const Index n = 8, r = 2;
  const auto ens = MeasurementEnsemble::gaussian(n, 20 * n * r, 5);
  EXPECT_LT(estimate_delta(ens, r, 100, 2), 0.5);
}

TEST(Rip, ZeroTrialsRejected) {
  const auto ens = MeasurementEnsemble::identity(3);
  EXPECT_THROW(estimate_delta(ens, 1, 0, 0), DomainError);
}

TEST(Ensemble, NormalizationMustBePositive) {
  EXPECT_THROW(MeasurementEnsemble::identity(3).with_normalization(0.0), DomainError);
}
