#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "precgd/core.hpp"
#include "precgd/instance.hpp"

namespace precgd {

// Closed-form quantities from the local convergence analysis of PrecGD.
// Functions whose value is undefined at an exact solution (zero error or
// zero loss) return std::nullopt as the "converged" signal.

/// Lipschitz-like constant
///   2(1+delta) [4 + (2 err + 4 ||D||_P) / (lambda_min(X^T X) + eta)
///               + (||D||_P / (lambda_min(X^T X) + eta))^2].
/// Throws DomainError when lambda_min(X^T X) + eta <= 0.
double lipschitz_LP(const Matrix& x, const Matrix& d, double eta, double delta, double err_fro);

/// Gradient-dominance constant
///   (sqrt((1+delta^2)/2) - delta)^2
///     * min{ (1 + C_ub/(sqrt2 - 1))^-1, (1 + 3 C_ub sqrt((r-r*)/(1-delta^2)))^-1 }.
/// Throws DomainError for r < r_star, delta outside [0, 1) or C_ub <= 0.
double mu_P(double delta, double c_ub, Index r, Index r_star);

/// Variant with first min-term (C_ub/(sqrt2 - 1))^-1, kept for comparison.
double mu_P_short_form(double delta, double c_ub, Index r, Index r_star);

/// Left singular vectors of X (the eigenvectors of X X^T), descending order,
/// together with the eigenvalues lambda_k = sigma_k^2.
struct FactorSpectrum {
  Matrix u;       ///< n x r
  Vector lambda;  ///< length r, descending
};
FactorSpectrum factor_spectrum(const Matrix& x);

/// sin(theta_k) = ||(I - U_k U_k^T) E (I - U_k U_k^T)||_F / ||E||_F, E = X X^T - M*.
std::optional<double> sin_theta(const Matrix& x, const Matrix& m_star, Index k);
/// sin(theta_k) for k = 1..r from one decomposition.
std::optional<Vector> sin_theta_all(const Matrix& x, const Matrix& m_star);

/// max_k 2 (cos(theta_k) - delta)_+^2 / (1 + eta / lambda_k) * ||E||_F^2.
/// With eta = 0 the denominator is 1 for every k.
std::optional<double> gradient_lower_bound(const Matrix& x, const Matrix& m_star, double eta,
                                           double delta);

/// ||Z^T (I - U_k U_k^T) Z||_F / ||X X^T - Z Z^T||_F for r* <= k <= r.
std::optional<double> basis_alignment_ratio(const Matrix& x, const Matrix& z, Index k);

/// Root-sum-of-squares of the r largest singular values of H.
double restricted_frobenius(const Matrix& h, Index r);

/// ||grad f(X)||_{P*}^2 / f(X) for the l2 loss.
std::optional<double> pl_ratio(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x,
                               double eta);

/// (1/norm) ||A(X0 X0^T - M*)||^2 < rho^2 (1 - delta) lambda_{r*}(M*)^2.
bool radius_check(const Matrix& x0, const GroundTruth& truth, double rho, double delta,
                  const MeasurementEnsemble& ens);

struct DiagnosticsOptions {
  double rho = 0.5;
  double c_ub = 1.0;
  int delta_trials = 200;
  std::uint64_t seed = 0;
};

/// Snapshot of every diagnostic at one iterate. Fields that need the ground
/// truth are empty on blind instances; sin_theta is empty when X X^T = M*.
struct DiagnosticsReport {
  double delta_hat = 0.0;
  std::optional<double> mu_P;
  std::optional<double> L_P;
  std::optional<double> pl_ratio;
  std::optional<Vector> sin_theta;
  Vector lambda_spectrum;  ///< eigenvalues of X^T X, descending
  std::optional<bool> radius_ok;
  bool has_truth = false;
  double f = 0.0;
  std::optional<double> err_fro;

  /// Flat `key=value` lines. Missing values print as `unavailable`
  /// (no ground truth) or `converged` (exact recovery).
  std::string to_key_value() const;
};

/// L_P is evaluated along the PrecGD direction with eta = sqrt(f).
DiagnosticsReport diagnose(const ProblemInstance& inst, const Matrix& x,
                           const DiagnosticsOptions& opts = {});

}  // namespace precgd
