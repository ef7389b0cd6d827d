#include "precgd/model.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <string>

namespace precgd {

Factor::Factor(Matrix data) : data_(std::move(data)) {
  if (data_.rows() < 1 || data_.cols() < 1)
    throw DomainError("Factor: shape must be at least 1 x 1");
  if (!data_.allFinite()) throw DomainError("Factor: non-finite entry");
}

namespace {

// Nonzero spectrum of Z Z^T via the small r* x r* Gram matrix, descending.
Vector gram_spectrum(const Matrix& z) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(z.transpose() * z, Eigen::EigenvaluesOnly);
  return es.eigenvalues().reverse();
}

double gram_kappa(const Matrix& z) {
  const Vector ev = gram_spectrum(z);
  const double lo = ev(ev.size() - 1);
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return ev(0) / lo;
}

}  // namespace

GroundTruth GroundTruth::from_factor(Matrix z) {
  if (z.rows() < 1 || z.cols() < 1 || z.cols() > z.rows())
    throw DimensionError("GroundTruth: Z must be n x r* with 1 <= r* <= n");
  if (!z.allFinite()) throw DomainError("GroundTruth: non-finite entry in Z");
  GroundTruth t;
  t.m_star_ = z * z.transpose();
  t.spectrum_ = Vector::Zero(z.rows());
  t.spectrum_.head(z.cols()) = gram_spectrum(z);
  const double lo = t.spectrum_(z.cols() - 1);
  t.kappa_ = lo > 0.0 ? t.spectrum_(0) / lo : std::numeric_limits<double>::infinity();
  t.z_ = std::move(z);
  return t;
}

namespace {

constexpr int kMaxTruthDraws = 64;

// Rescales the last column so the gram condition number equals target.
// Returns false when no scale factor reaches it.
bool rescale_last_column(Matrix& z, double target) {
  const Index last = z.cols() - 1;
  const Vector base_col = z.col(last);
  auto kappa_at = [&](double s) {
    z.col(last) = s * base_col;
    return gram_kappa(z);
  };
  if (kappa_at(1.0) == target) return true;
  // kappa(s) -> inf as s -> 0; walk up until the ratio drops to the target.
  double lo = 1e-8;
  double hi = lo;
  bool bracketed = false;
  while (hi < 1e8) {
    const double next = hi * 1.25;
    if (kappa_at(next) <= target) {
      lo = hi;
      hi = next;
      bracketed = true;
      break;
    }
    hi = next;
  }
  if (!bracketed) {
    z.col(last) = base_col;
    return false;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(lo * hi);
    if (mid <= lo || mid >= hi) break;
    (kappa_at(mid) > target ? lo : hi) = mid;
  }
  const double k_lo = kappa_at(lo);
  const double k_hi = kappa_at(hi);
  z.col(last) = (std::abs(k_lo - target) < std::abs(k_hi - target) ? lo : hi) * base_col;
  return true;
}

}  // namespace

GroundTruth make_ground_truth(Index n, Index r_star, std::optional<double> kappa,
                              std::uint64_t seed, TruthScale scale) {
  if (n < 1 || r_star < 1 || r_star > n)
    throw DimensionError("make_ground_truth: need 1 <= r_star <= n, got r_star=" +
                         std::to_string(r_star) + ", n=" + std::to_string(n));
  if (kappa && !(*kappa >= 1.0))
    throw DomainError("make_ground_truth: kappa must be >= 1");

  Rng rng(derive_seed(seed, stream::kTruth));
  Matrix z = rng.normal_matrix(n, r_star);

  if (kappa && r_star == 1 && *kappa != 1.0)
    throw DomainError("make_ground_truth: rank-1 truth always has kappa = 1");

  if (kappa && r_star > 1) {
    // Correlated columns can put the target below the reachable minimum;
    // such draws are rejected and Z is resampled from the same stream.
    bool done = false;
    for (int attempt = 0; attempt < kMaxTruthDraws && !done; ++attempt) {
      if (attempt > 0) z = rng.normal_matrix(n, r_star);
      done = rescale_last_column(z, *kappa);
    }
    if (!done)
      throw DomainError("make_ground_truth: kappa=" + std::to_string(*kappa) +
                        " is below what rescaling the last column can reach");
  }

  if (scale == TruthScale::UnitTop) {
    const double top = gram_spectrum(z)(0);
    z /= std::sqrt(top);
  }
  return GroundTruth::from_factor(std::move(z));
}

double factor_error(const Matrix& x, const Matrix& m_star) {
  if (x.rows() != m_star.rows() || m_star.rows() != m_star.cols())
    throw DimensionError("factor_error: X has " + std::to_string(x.rows()) +
                         " rows but M* is " + std::to_string(m_star.rows()) + " x " +
                         std::to_string(m_star.cols()));
  return (x * x.transpose() - m_star).norm();
}

double factor_error(const Factor& x, const GroundTruth& truth) {
  return factor_error(x.matrix(), truth.m_star());
}

}  // namespace precgd
