#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "precgd/core.hpp"
#include "precgd/model.hpp"

namespace precgd {

enum class EnsembleKind { Identity, GaussianSym, Custom };

std::string_view to_string(EnsembleKind kind);

/// Linear measurement operator A : S^n -> R^m, A(M)_i = <A_i, M>.
///
/// Every stored A_i is symmetric. The ensemble also carries the loss
/// normalization constant (m by default, or 1 for the unnormalized
/// convention); losses, gradients and RIP estimates divide by it.
/// Copies share the immutable operator data.
class MeasurementEnsemble {
 public:
  /// forward(M) = vec(M) (column stacking), m = n^2.
  static MeasurementEnsemble identity(Index n);
  /// A_i = (G_i + G_i^T) / 2 with G_i i.i.d. N(0, 1) entries.
  static MeasurementEnsemble gaussian(Index n, Index m, std::uint64_t seed);
  /// m row-major n x n matrices laid end to end; each is symmetrized.
  static MeasurementEnsemble custom(Index n, Index m, std::vector<double> flat);

  /// Rebuilds a stored operator with its original kind and normalization.
  /// `flat` is ignored for the identity kind.
  static MeasurementEnsemble restore(EnsembleKind kind, Index n, Index m, double norm,
                                     std::vector<double> flat);

  /// Same operator, different normalization constant (must be > 0).
  MeasurementEnsemble with_normalization(double norm) const;

  EnsembleKind kind() const noexcept { return kind_; }
  Index n() const noexcept { return n_; }
  Index m() const noexcept { return m_; }
  double normalization() const noexcept { return norm_; }

  /// A_i as an n x n matrix. Not available for the identity kind.
  Eigen::Map<const Matrix> matrix(Index i) const;
  /// Flattened operator storage (empty for the identity kind).
  std::span<const double> data() const noexcept;

  Vector forward(const Matrix& m) const;
  /// sum_i v_i A_i, symmetric.
  Matrix adjoint(const Vector& v) const;

  /// Reference implementations with plain serial loops.
  Vector forward_reference(const Matrix& m) const;
  Matrix adjoint_reference(const Vector& v) const;

 private:
  MeasurementEnsemble() = default;
  EnsembleKind kind_ = EnsembleKind::Identity;
  Index n_ = 0;
  Index m_ = 0;
  double norm_ = 1.0;
  std::shared_ptr<const std::vector<double>> ops_;
};

struct Observations {
  Vector y;
  double sigma2 = 0.0;
  std::uint64_t noise_seed = 0;
};

/// y = A(M*) + eps with eps_i i.i.d. N(0, sigma^2).
Observations observe(const MeasurementEnsemble& ens, const GroundTruth& truth, double sigma,
                     std::uint64_t seed);

/// Value and gradient of a loss at one point.
struct LossEval {
  double f = 0.0;
  Matrix grad;
};

/// (1/norm) ||y - A(X X^T)||^2.
double loss_l2(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x);
/// (4/norm) A*(A(X X^T) - y) X.
Matrix grad_l2(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x);
LossEval eval_l2(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x);

/// sum_i |<A_i, X X^T> - y_i|^p, 1 <= p < 2. No 1/m factor.
double loss_lp(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x, double p);
/// 2 sum_i p sign(e_i) |e_i|^(p-1) A_i X; residuals that are exactly zero contribute 0.
Matrix grad_lp(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x, double p);
LossEval eval_lp(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x, double p);

namespace detail {
/// eval_lp without the p < 2 guard; p = 2 reproduces the unnormalized l2 gradient.
LossEval eval_lp_unchecked(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x,
                           double p);
}  // namespace detail

/// Empirical lower bound on the RIP constant over random rank-min(2r, n)
/// symmetric matrices: max |(1/norm) ||A(M)||^2 / ||M||_F^2 - 1|.
double estimate_delta(const MeasurementEnsemble& ens, Index r, int trials, std::uint64_t seed);

}  // namespace precgd
