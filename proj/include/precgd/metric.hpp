#pragma once

#include <optional>
#include <string>

#include "precgd/core.hpp"

namespace precgd {

// P-metric on R^{n x r} induced by the r x r matrix P = X^T X + eta I.
// The nr x nr Kronecker form P (x) I_n is never built; every quantity goes
// through the small r x r factor.

/// Relative floor on lambda_min(P) / lambda_max(P) below which P counts as singular.
inline constexpr double kSingularRelTol = 1e-14;

/// X^T X + eta I.
Matrix p_gram(const Matrix& x, double eta);

/// ||G P^{1/2}||_F = sqrt(tr(G P G^T)).
double p_norm(const Matrix& x, double eta, const Matrix& g);

/// ||G P^{-1/2}||_F via a Cholesky solve. Throws SingularityError.
double dual_p_norm(const Matrix& x, double eta, const Matrix& g);

/// ||G P^{-1/2}||_F via an explicit eigendecomposition of P. Throws SingularityError.
double dual_p_norm_eig(const Matrix& x, double eta, const Matrix& g);

/// G P^{-1} via a Cholesky solve (no explicit inverse). Throws SingularityError.
Matrix apply_inverse(const Matrix& x, double eta, const Matrix& g);

/// Rule producing the damping eta_k at each iterate.
struct DampingSchedule {
  enum class Kind {
    Fixed,           ///< eta = value
    NoiselessSqrtF,  ///< eta = sqrt(f)
    OracleResidual,  ///< eta = ||A(X X^T - M*)|| / sqrt(norm); needs ground truth
    VarianceProxy,   ///< eta = sqrt(|f - value|), value = estimated noise variance
    LpRoot,          ///< eta = f^(1/value), value = p
  };

  Kind kind = Kind::NoiselessSqrtF;
  double value = 0.0;

  static DampingSchedule fixed(double eta0);
  static DampingSchedule sqrt_f() { return {Kind::NoiselessSqrtF, 0.0}; }
  static DampingSchedule oracle_residual() { return {Kind::OracleResidual, 0.0}; }
  static DampingSchedule variance_proxy(double sigma2_hat);
  static DampingSchedule lp_root(double p);
};

std::string to_string(DampingSchedule::Kind kind);

/// eta_k for the given schedule. `residual_norm` is (1/sqrt(norm)) ||A(X X^T - M*)||
/// and is only consulted by OracleResidual, which throws ConfigError without it.
double damping(const DampingSchedule& schedule, double f_value,
               std::optional<double> residual_norm = std::nullopt);

}  // namespace precgd
