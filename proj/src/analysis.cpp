#include "precgd/analysis.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <sstream>

#include "precgd/metric.hpp"

namespace precgd {

namespace {

double lambda_min_gram(const Matrix& x) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(x.transpose() * x, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

Matrix complement_projector(const Matrix& u, Index k) {
  const Index n = u.rows();
  const Matrix uk = u.leftCols(k);
  return Matrix::Identity(n, n) - uk * uk.transpose();
}

void check_k(Index k, Index r, const char* who) {
  if (k < 1 || k > r)
    throw DomainError(std::string(who) + ": k=" + std::to_string(k) + " outside [1, " +
                      std::to_string(r) + "]");
}

double clamp_unit(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace

double lipschitz_LP(const Matrix& x, const Matrix& d, double eta, double delta, double err_fro) {
  const double denom = lambda_min_gram(x) + eta;
  if (!(denom > 0.0)) throw DomainError("lipschitz_LP: lambda_min(X^T X) + eta must be > 0");
  const double dp = p_norm(x, eta, d);
  const double ratio = dp / denom;
  return 2.0 * (1.0 + delta) * (4.0 + (2.0 * err_fro + 4.0 * dp) / denom + ratio * ratio);
}

namespace {

double mu_common(double delta, double c_ub, Index r, Index r_star, double first_term) {
  const double lead = std::sqrt((1.0 + delta * delta) / 2.0) - delta;
  const double over = static_cast<double>(r - r_star) / (1.0 - delta * delta);
  const double second = 1.0 / (1.0 + 3.0 * c_ub * std::sqrt(over));
  return lead * lead * std::min(first_term, second);
}

void check_mu_args(double delta, double c_ub, Index r, Index r_star) {
  if (r < r_star) throw DomainError("mu_P: search rank r must be >= r_star");
  if (!(delta >= 0.0 && delta < 1.0)) throw DomainError("mu_P: delta must lie in [0, 1)");
  if (!(c_ub > 0.0)) throw DomainError("mu_P: C_ub must be > 0");
}

}  // namespace

double mu_P(double delta, double c_ub, Index r, Index r_star) {
  check_mu_args(delta, c_ub, r, r_star);
  const double first = 1.0 / (1.0 + c_ub / (std::sqrt(2.0) - 1.0));
  return mu_common(delta, c_ub, r, r_star, first);
}

double mu_P_short_form(double delta, double c_ub, Index r, Index r_star) {
  check_mu_args(delta, c_ub, r, r_star);
  const double first = 1.0 / (c_ub / (std::sqrt(2.0) - 1.0));
  return mu_common(delta, c_ub, r, r_star, first);
}

FactorSpectrum factor_spectrum(const Matrix& x) {
  Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinU);
  FactorSpectrum s;
  s.u = svd.matrixU();
  s.lambda = svd.singularValues().array().square();
  return s;
}

std::optional<Vector> sin_theta_all(const Matrix& x, const Matrix& m_star) {
  const Matrix e = x * x.transpose() - m_star;
  const double e_norm = e.norm();
  if (e_norm == 0.0) return std::nullopt;
  const FactorSpectrum s = factor_spectrum(x);
  Vector out(x.cols());
  for (Index k = 1; k <= x.cols(); ++k) {
    const Matrix q = complement_projector(s.u, k);
    out(k - 1) = clamp_unit((q * e * q).norm() / e_norm);
  }
  return out;
}

std::optional<double> sin_theta(const Matrix& x, const Matrix& m_star, Index k) {
  check_k(k, x.cols(), "sin_theta");
  const Matrix e = x * x.transpose() - m_star;
  const double e_norm = e.norm();
  if (e_norm == 0.0) return std::nullopt;
  const Matrix q = complement_projector(factor_spectrum(x).u, k);
  return clamp_unit((q * e * q).norm() / e_norm);
}

std::optional<double> gradient_lower_bound(const Matrix& x, const Matrix& m_star, double eta,
                                           double delta) {
  const auto sines = sin_theta_all(x, m_star);
  if (!sines) return std::nullopt;
  const FactorSpectrum s = factor_spectrum(x);
  const double e2 = (x * x.transpose() - m_star).squaredNorm();
  double best = 0.0;
  for (Index k = 0; k < x.cols(); ++k) {
    const double sn = (*sines)(k);
    const double cosv = std::sqrt(std::max(0.0, 1.0 - sn * sn));
    const double gap = std::max(0.0, cosv - delta);
    double denom = 1.0;
    if (eta > 0.0)
      denom = s.lambda(k) > 0.0 ? 1.0 + eta / s.lambda(k) : std::numeric_limits<double>::infinity();
    best = std::max(best, 2.0 * gap * gap / denom * e2);
  }
  return best;
}

std::optional<double> basis_alignment_ratio(const Matrix& x, const Matrix& z, Index k) {
  check_k(k, x.cols(), "basis_alignment_ratio");
  if (k < z.cols()) throw DomainError("basis_alignment_ratio: k must be >= r_star");
  if (x.rows() != z.rows()) throw DimensionError("basis_alignment_ratio: row counts differ");
  const double e_norm = (x * x.transpose() - z * z.transpose()).norm();
  if (e_norm == 0.0) return std::nullopt;
  const Matrix q = complement_projector(factor_spectrum(x).u, k);
  return (z.transpose() * q * z).norm() / e_norm;
}

double restricted_frobenius(const Matrix& h, Index r) {
  const Index lim = std::min(h.rows(), h.cols());
  if (r < 1 || r > lim) throw DomainError("restricted_frobenius: r outside [1, min(rows, cols)]");
  Eigen::JacobiSVD<Matrix> svd(h);
  return svd.singularValues().head(r).norm();
}

std::optional<double> pl_ratio(const MeasurementEnsemble& ens, const Vector& y, const Matrix& x,
                               double eta) {
  const LossEval ev = eval_l2(ens, y, x);
  if (ev.f == 0.0) return std::nullopt;
  const double g = dual_p_norm(x, eta, ev.grad);
  return g * g / ev.f;
}

bool radius_check(const Matrix& x0, const GroundTruth& truth, double rho, double delta,
                  const MeasurementEnsemble& ens) {
  const Vector a = ens.forward(x0 * x0.transpose() - truth.m_star());
  const double lhs = a.squaredNorm() / ens.normalization();
  const double lam = truth.lambda_r_star();
  return lhs < rho * rho * (1.0 - delta) * lam * lam;
}

DiagnosticsReport diagnose(const ProblemInstance& inst, const Matrix& x,
                           const DiagnosticsOptions& opts) {
  const auto& ens = inst.ensemble;
  const auto& y = inst.observations.y;
  DiagnosticsReport rep;
  rep.has_truth = inst.truth.has_value();
  rep.delta_hat = estimate_delta(ens, x.cols(), opts.delta_trials, opts.seed);

  Eigen::SelfAdjointEigenSolver<Matrix> es(x.transpose() * x, Eigen::EigenvaluesOnly);
  rep.lambda_spectrum = es.eigenvalues().reverse();

  const LossEval ev = eval_l2(ens, y, x);
  rep.f = ev.f;
  const double eta = std::sqrt(std::max(ev.f, 0.0));
  if (ev.f > 0.0) {
    try {
      const double g = dual_p_norm(x, eta, ev.grad);
      rep.pl_ratio = g * g / ev.f;
    } catch (const SingularityError&) {
    }
  }

  if (rep.has_truth) {
    const GroundTruth& t = *inst.truth;
    rep.err_fro = factor_error(x, t.m_star());
    if (rep.delta_hat < 1.0 && x.cols() >= t.r_star())
      rep.mu_P = mu_P(rep.delta_hat, opts.c_ub, x.cols(), t.r_star());
    rep.sin_theta = sin_theta_all(x, t.m_star());
    rep.radius_ok = radius_check(x, t, opts.rho, std::min(rep.delta_hat, 1.0), ens);
    try {
      const Matrix d = apply_inverse(x, eta, ev.grad);
      rep.L_P = lipschitz_LP(x, d, eta, rep.delta_hat, *rep.err_fro);
    } catch (const std::exception&) {
      // Singular metric at an exact low-rank solution; L_P is undefined there.
    }
  }
  return rep;
}

std::string DiagnosticsReport::to_key_value() const {
  std::ostringstream os;
  os.precision(17);
  const char* missing = has_truth ? "converged" : "unavailable";
  auto put = [&](const std::string& key, const std::optional<double>& v, const char* fallback) {
    os << key << '=';
    if (v)
      os << *v;
    else
      os << fallback;
    os << '\n';
  };
  os << "has_truth=" << (has_truth ? "true" : "false") << '\n';
  os << "f=" << f << '\n';
  os << "delta_hat=" << delta_hat << '\n';
  put("err_fro", err_fro, "unavailable");
  put("mu_P", mu_P, "unavailable");
  put("L_P", L_P, has_truth ? "undefined" : "unavailable");
  put("pl_ratio", pl_ratio, "converged");
  os << "radius_ok=" << (radius_ok ? (*radius_ok ? "true" : "false") : "unavailable") << '\n';
  for (Index k = 0; k < lambda_spectrum.size(); ++k)
    os << "lambda_" << (k + 1) << '=' << lambda_spectrum(k) << '\n';
  for (Index k = 0; k < lambda_spectrum.size(); ++k) {
    os << "sin_theta_" << (k + 1) << '=';
    if (sin_theta)
      os << (*sin_theta)(k);
    else
      os << missing;
    os << '\n';
  }
  return os.str();
}

}  // namespace precgd
