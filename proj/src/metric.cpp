#include "precgd/metric.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

namespace precgd {

namespace {

void check_shapes(const Matrix& x, const Matrix& g, const char* who) {
  if (g.rows() != x.rows() || g.cols() != x.cols()) {
    std::ostringstream os;
    os << who << ": G is " << g.rows() << " x " << g.cols() << ", X is " << x.rows() << " x "
       << x.cols();
    throw DimensionError(os.str());
  }
}

void check_eta(double eta) {
  if (!(eta >= 0.0)) throw DomainError("damping eta must be >= 0");
}

// Rejects P when its spectrum is degenerate relative to its scale.
void guard_singular(const Matrix& p, const char* who) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(p, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues()(0);
  const double hi = es.eigenvalues()(p.rows() - 1);
  if (!(hi > 0.0) || !(lo >= kSingularRelTol * hi)) {
    std::ostringstream os;
    os << who << ": preconditioner is singular (lambda_min=" << lo << ", lambda_max=" << hi
       << ")";
    throw SingularityError(os.str(), lo);
  }
}

Eigen::LLT<Matrix> factorize(const Matrix& x, double eta, const char* who) {
  const Matrix p = p_gram(x, eta);
  guard_singular(p, who);
  Eigen::LLT<Matrix> llt(p);
  if (llt.info() != Eigen::Success)
    throw SingularityError(std::string(who) + ": Cholesky factorization failed", 0.0);
  return llt;
}

}  // namespace

Matrix p_gram(const Matrix& x, double eta) {
  check_eta(eta);
  Matrix p = x.transpose() * x;
  p.diagonal().array() += eta;
  return p;
}

double p_norm(const Matrix& x, double eta, const Matrix& g) {
  check_shapes(x, g, "p_norm");
  const Matrix p = p_gram(x, eta);
  const double t = (g * p).cwiseProduct(g).sum();
  return std::sqrt(std::max(t, 0.0));
}

double dual_p_norm(const Matrix& x, double eta, const Matrix& g) {
  check_shapes(x, g, "dual_p_norm");
  const auto llt = factorize(x, eta, "dual_p_norm");
  // tr(G P^{-1} G^T) = ||L^{-1} G^T||_F^2 with P = L L^T.
  const Matrix w = llt.matrixL().solve(g.transpose());
  return w.norm();
}

double dual_p_norm_eig(const Matrix& x, double eta, const Matrix& g) {
  check_shapes(x, g, "dual_p_norm");
  const Matrix p = p_gram(x, eta);
  guard_singular(p, "dual_p_norm");
  Eigen::SelfAdjointEigenSolver<Matrix> es(p);
  const Vector inv_sqrt = es.eigenvalues().cwiseSqrt().cwiseInverse();
  return (g * es.eigenvectors() * inv_sqrt.asDiagonal()).norm();
}

Matrix apply_inverse(const Matrix& x, double eta, const Matrix& g) {
  check_shapes(x, g, "apply_inverse");
  const auto llt = factorize(x, eta, "apply_inverse");
  // G P^{-1} = (P^{-1} G^T)^T since P is symmetric.
  return llt.solve(g.transpose()).transpose();
}

DampingSchedule DampingSchedule::fixed(double eta0) {
  if (!(eta0 >= 0.0)) throw DomainError("fixed damping must be >= 0");
  return {Kind::Fixed, eta0};
}

DampingSchedule DampingSchedule::variance_proxy(double sigma2_hat) {
  if (!(sigma2_hat >= 0.0)) throw DomainError("variance proxy must be >= 0");
  return {Kind::VarianceProxy, sigma2_hat};
}

DampingSchedule DampingSchedule::lp_root(double p) {
  if (!(p >= 1.0)) throw DomainError("lp damping exponent must be >= 1");
  return {Kind::LpRoot, p};
}

std::string to_string(DampingSchedule::Kind kind) {
  switch (kind) {
    case DampingSchedule::Kind::Fixed: return "fixed";
    case DampingSchedule::Kind::NoiselessSqrtF: return "sqrt_f";
    case DampingSchedule::Kind::OracleResidual: return "oracle_residual";
    case DampingSchedule::Kind::VarianceProxy: return "variance_proxy";
    case DampingSchedule::Kind::LpRoot: return "lp_root";
  }
  return "unknown";
}

double damping(const DampingSchedule& schedule, double f_value,
               std::optional<double> residual_norm) {
  using K = DampingSchedule::Kind;
  switch (schedule.kind) {
    case K::Fixed: return schedule.value;
    case K::NoiselessSqrtF: return std::sqrt(std::max(f_value, 0.0));
    case K::OracleResidual:
      if (!residual_norm)
        throw ConfigError("oracle_residual damping requires a ground truth");
      return *residual_norm;
    case K::VarianceProxy: return std::sqrt(std::abs(f_value - schedule.value));
    case K::LpRoot: return std::pow(std::max(f_value, 0.0), 1.0 / schedule.value);
  }
  throw ConfigError("unknown damping schedule");
}

}  // namespace precgd
