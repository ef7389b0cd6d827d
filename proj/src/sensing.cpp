#include "precgd/sensing.hpp"

#include <cmath>
#include <string>

#include "precgd/kernels.hpp"

namespace precgd {

std::string_view to_string(EnsembleKind kind) {
  switch (kind) {
    case EnsembleKind::Identity: return "identity";
    case EnsembleKind::GaussianSym: return "gaussian";
    case EnsembleKind::Custom: return "custom";
  }
  return "unknown";
}

namespace {

// Symmetrize each n x n block in place.
void symmetrize_blocks(std::vector<double>& flat, Index n, Index m) {
  const auto nn = static_cast<std::size_t>(n * n);
  for (Index i = 0; i < m; ++i) {
    Eigen::Map<Matrix> a(flat.data() + static_cast<std::size_t>(i) * nn, n, n);
    const Matrix s = symmetrize(a);
    a = s;
  }
}

void check_square(const MeasurementEnsemble& ens, const Matrix& m, const char* who) {
  if (m.rows() != ens.n() || m.cols() != ens.n())
    throw DimensionError(std::string(who) + ": expected " + std::to_string(ens.n()) + " x " +
                         std::to_string(ens.n()) + " matrix, got " + std::to_string(m.rows()) +
                         " x " + std::to_string(m.cols()));
}

void check_length(const MeasurementEnsemble& ens, const Vector& v, const char* who) {
  if (v.size() != ens.m())
    throw DimensionError(std::string(who) + ": expected length " + std::to_string(ens.m()) +
                         ", got " + std::to_string(v.size()));
}

void check_factor(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x,
                  const char* who) {
  check_length(ens, y, who);
  if (x.rows() != ens.n() || x.cols() < 1)
    throw DimensionError(std::string(who) + ": factor has " + std::to_string(x.rows()) +
                         " rows, operator dimension is " + std::to_string(ens.n()));
}

void check_p(double p) {
  if (!(p >= 1.0 && p < 2.0))
    throw DomainError("lp loss: p must lie in [1, 2), got " + std::to_string(p));
}

}  // namespace

MeasurementEnsemble MeasurementEnsemble::identity(Index n) {
  if (n < 1) throw DimensionError("identity ensemble: n must be >= 1");
  MeasurementEnsemble e;
  e.kind_ = EnsembleKind::Identity;
  e.n_ = n;
  e.m_ = n * n;
  e.norm_ = static_cast<double>(e.m_);
  e.ops_ = std::make_shared<const std::vector<double>>();
  return e;
}

MeasurementEnsemble MeasurementEnsemble::gaussian(Index n, Index m, std::uint64_t seed) {
  if (n < 1 || m < 1) throw DimensionError("gaussian ensemble: n and m must be >= 1");
  Rng rng(seed);
  std::vector<double> flat(static_cast<std::size_t>(m * n * n));
  for (double& v : flat) v = rng.normal();
  symmetrize_blocks(flat, n, m);
  MeasurementEnsemble e;
  e.kind_ = EnsembleKind::GaussianSym;
  e.n_ = n;
  e.m_ = m;
  e.norm_ = static_cast<double>(m);
  e.ops_ = std::make_shared<const std::vector<double>>(std::move(flat));
  return e;
}

MeasurementEnsemble MeasurementEnsemble::custom(Index n, Index m, std::vector<double> flat) {
  if (n < 1 || m < 1) throw DimensionError("custom ensemble: n and m must be >= 1");
  if (flat.size() != static_cast<std::size_t>(m * n * n))
    throw DimensionError("custom ensemble: expected " + std::to_string(m * n * n) +
                         " values, got " + std::to_string(flat.size()));
  for (double v : flat)
    if (!std::isfinite(v)) throw DomainError("custom ensemble: non-finite entry");
  // Row-major input; after symmetrization the layout no longer matters.
  symmetrize_blocks(flat, n, m);
  MeasurementEnsemble e;
  e.kind_ = EnsembleKind::Custom;
  e.n_ = n;
  e.m_ = m;
  e.norm_ = static_cast<double>(m);
  e.ops_ = std::make_shared<const std::vector<double>>(std::move(flat));
  return e;
}

MeasurementEnsemble MeasurementEnsemble::restore(EnsembleKind kind, Index n, Index m, double norm,
                                                 std::vector<double> flat) {
  MeasurementEnsemble e;
  if (kind == EnsembleKind::Identity) {
    e = identity(n);
    if (m != e.m_) throw DimensionError("identity ensemble must have m = n^2");
  } else {
    e = custom(n, m, std::move(flat));
    e.kind_ = kind;
  }
  return e.with_normalization(norm);
}

MeasurementEnsemble MeasurementEnsemble::with_normalization(double norm) const {
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw DomainError("normalization constant must be positive");
  MeasurementEnsemble e = *this;
  e.norm_ = norm;
  return e;
}

Eigen::Map<const Matrix> MeasurementEnsemble::matrix(Index i) const {
  if (kind_ == EnsembleKind::Identity)
    throw std::logic_error("identity ensemble stores no matrices");
  if (i < 0 || i >= m_) throw DimensionError("measurement index out of range");
  return Eigen::Map<const Matrix>(ops_->data() + static_cast<std::size_t>(i * n_ * n_), n_, n_);
}

std::span<const double> MeasurementEnsemble::data() const noexcept {
  return {ops_->data(), ops_->size()};
}

Vector MeasurementEnsemble::forward(const Matrix& mat) const {
  check_square(*this, mat, "forward");
  if (kind_ == EnsembleKind::Identity) return mat.reshaped();
  Vector out(m_);
  kernels::forward_parallel(data(), static_cast<std::size_t>(m_),
                            static_cast<std::size_t>(n_ * n_), {mat.data(), static_cast<std::size_t>(mat.size())},
                            {out.data(), static_cast<std::size_t>(m_)});
  return out;
}

Matrix MeasurementEnsemble::adjoint(const Vector& v) const {
  check_length(*this, v, "adjoint");
  if (kind_ == EnsembleKind::Identity) return symmetrize(v.reshaped(n_, n_));
  Matrix out(n_, n_);
  kernels::adjoint_parallel(data(), static_cast<std::size_t>(m_),
                            static_cast<std::size_t>(n_ * n_), {v.data(), static_cast<std::size_t>(v.size())},
                            {out.data(), static_cast<std::size_t>(out.size())});
  return out;
}

Vector MeasurementEnsemble::forward_reference(const Matrix& mat) const {
  check_square(*this, mat, "forward");
  if (kind_ == EnsembleKind::Identity) return mat.reshaped();
  Vector out(m_);
  kernels::forward_serial(data(), static_cast<std::size_t>(m_),
                          static_cast<std::size_t>(n_ * n_), {mat.data(), static_cast<std::size_t>(mat.size())},
                          {out.data(), static_cast<std::size_t>(m_)});
  return out;
}

Matrix MeasurementEnsemble::adjoint_reference(const Vector& v) const {
  check_length(*this, v, "adjoint");
  if (kind_ == EnsembleKind::Identity) return symmetrize(v.reshaped(n_, n_));
  Matrix out(n_, n_);
  kernels::adjoint_serial(data(), static_cast<std::size_t>(m_),
                          static_cast<std::size_t>(n_ * n_), {v.data(), static_cast<std::size_t>(v.size())},
                          {out.data(), static_cast<std::size_t>(out.size())});
  return out;
}

Observations observe(const MeasurementEnsemble& ens, const GroundTruth& truth, double sigma,
                     std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw DomainError("observe: sigma must be >= 0");
  if (truth.n() != ens.n()) throw DimensionError("observe: truth and operator dimensions differ");
  Observations obs;
  obs.y = ens.forward(truth.m_star());
  obs.sigma2 = sigma * sigma;
  obs.noise_seed = seed;
  if (sigma > 0.0) {
    Rng rng(seed);
    for (Index i = 0; i < obs.y.size(); ++i) obs.y(i) += sigma * rng.normal();
  }
  return obs;
}

LossEval eval_l2(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x) {
  check_factor(ens, y, x, "l2 loss");
  const Vector resid = ens.forward(x * x.transpose()) - y;
  LossEval out;
  out.f = resid.squaredNorm() / ens.normalization();
  out.grad = (4.0 / ens.normalization()) * (ens.adjoint(resid) * x);
  return out;
}

double loss_l2(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x) {
  check_factor(ens, y, x, "l2 loss");
  return (ens.forward(x * x.transpose()) - y).squaredNorm() / ens.normalization();
}

Matrix grad_l2(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x) {
  return eval_l2(ens, y, x).grad;
}

namespace detail {

LossEval eval_lp_unchecked(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x,
                           double p) {
  check_factor(ens, y, x, "lp loss");
  const Vector resid = ens.forward(x * x.transpose()) - y;
  Vector weight(resid.size());
  double f = 0.0;
  for (Index i = 0; i < resid.size(); ++i) {
    const double e = resid(i);
    const double a = std::abs(e);
    f += std::pow(a, p);
    weight(i) = e == 0.0 ? 0.0 : p * std::copysign(std::pow(a, p - 1.0), e);
  }
  LossEval out;
  out.f = f;
  out.grad = 2.0 * (ens.adjoint(weight) * x);
  return out;
}

}  // namespace detail

LossEval eval_lp(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x, double p) {
  check_p(p);
  return detail::eval_lp_unchecked(ens, y, x, p);
}

double loss_lp(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x, double p) {
  check_p(p);
  check_factor(ens, y, x, "lp loss");
  const Vector resid = ens.forward(x * x.transpose()) - y;
  double f = 0.0;
  for (Index i = 0; i < resid.size(); ++i) f += std::pow(std::abs(resid(i)), p);
  return f;
}

Matrix grad_lp(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x, double p) {
  return eval_lp(ens, y, x, p).grad;
}

double estimate_delta(const MeasurementEnsemble& ens, Index r, int trials, std::uint64_t seed) {
  if (trials < 1) throw DomainError("estimate_delta: trials must be >= 1");
  if (r < 1) throw DomainError("estimate_delta: r must be >= 1");
  const Index k = std::min<Index>(2 * r, ens.n());
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Matrix b = rng.normal_matrix(ens.n(), k);
    Vector s(k);
    for (Index j = 0; j < k; ++j) s(j) = rng.normal();
    const Matrix m = b * s.asDiagonal() * b.transpose();
    const double fro2 = m.squaredNorm();
    if (fro2 == 0.0) continue;
    const double ratio = ens.forward(m).squaredNorm() / ens.normalization() / fro2;
    worst = std::max(worst, std::abs(ratio - 1.0));
  }
  return worst;
}

}  // namespace precgd
