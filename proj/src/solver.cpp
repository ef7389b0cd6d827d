#include "precgd/solver.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <limits>

#include "precgd/analysis.hpp"

namespace precgd {

std::string to_string(Method m) {
  switch (m) {
    case Method::GD: return "gd";
    case Method::ScaledGD: return "scaledgd";
    case Method::PrecGD: return "precgd";
  }
  return "unknown";
}

std::string to_string(StepPolicy::Kind kind) {
  switch (kind) {
    case StepPolicy::Kind::Fixed: return "fixed";
    case StepPolicy::Kind::Polyak: return "polyak";
    case StepPolicy::Kind::PolyakSquared: return "polyak_squared";
    case StepPolicy::Kind::Decaying: return "decaying";
  }
  return "unknown";
}

std::string to_string(RecordFlag flag) {
  switch (flag) {
    case RecordFlag::Ok: return "ok";
    case RecordFlag::Diverged: return "diverged";
    case RecordFlag::Singular: return "singular";
    case RecordFlag::Converged: return "converged";
  }
  return "unknown";
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::MaxIters: return "max_iters";
    case StopReason::TolF: return "tol_f";
    case StopReason::TolError: return "tol_error";
    case StopReason::Converged: return "converged";
    case StopReason::Diverged: return "diverged";
  }
  return "unknown";
}

StepPolicy StepPolicy::fixed(double alpha) {
  if (!(alpha > 0.0)) throw DomainError("fixed step size must be > 0");
  StepPolicy s;
  s.kind = Kind::Fixed;
  s.alpha = alpha;
  return s;
}

StepPolicy StepPolicy::polyak(double exponent) {
  if (!(exponent > 0.0)) throw DomainError("Polyak exponent must be > 0");
  StepPolicy s;
  s.kind = Kind::Polyak;
  s.exponent = exponent;
  return s;
}

StepPolicy StepPolicy::polyak_squared() {
  StepPolicy s;
  s.kind = Kind::PolyakSquared;
  return s;
}

StepPolicy StepPolicy::decaying(double alpha0, double decay) {
  if (!(alpha0 > 0.0)) throw DomainError("decaying step alpha0 must be > 0");
  if (!(decay > 0.0 && decay <= 1.0)) throw DomainError("decay must lie in (0, 1]");
  StepPolicy s;
  s.kind = Kind::Decaying;
  s.alpha = alpha0;
  s.decay = decay;
  return s;
}

LossSpec LossSpec::lp(double p) {
  if (!(p >= 1.0 && p < 2.0)) throw DomainError("lp loss needs 1 <= p < 2");
  return {Kind::Lp, p};
}

void SolverConfig::validate() const {
  if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
  if (!(tol_f >= 0.0)) throw ConfigError("tol_f must be >= 0");
  if (tol_error && !(*tol_error >= 0.0)) throw ConfigError("tol_error must be >= 0");
  switch (step.kind) {
    case StepPolicy::Kind::Fixed:
      if (!(step.alpha > 0.0)) throw ConfigError("step alpha must be > 0");
      break;
    case StepPolicy::Kind::Decaying:
      if (!(step.alpha > 0.0)) throw ConfigError("step alpha0 must be > 0");
      if (!(step.decay > 0.0 && step.decay <= 1.0)) throw ConfigError("step decay must be in (0, 1]");
      break;
    case StepPolicy::Kind::Polyak:
      if (!(step.exponent > 0.0)) throw ConfigError("Polyak exponent must be > 0");
      break;
    case StepPolicy::Kind::PolyakSquared: break;
  }
  if (loss.kind == LossSpec::Kind::Lp && !(loss.p >= 1.0 && loss.p < 2.0))
    throw ConfigError("lp loss needs 1 <= p < 2");
}

std::optional<double> step_size(const StepPolicy& policy, const StepState& state) {
  switch (policy.kind) {
    case StepPolicy::Kind::Fixed: return policy.alpha;
    case StepPolicy::Kind::Decaying: return policy.alpha * std::pow(policy.decay, state.k);
    case StepPolicy::Kind::Polyak:
      if (!(state.grad_dual > 0.0)) return std::nullopt;
      return std::pow(state.f, policy.exponent) / state.grad_dual;
    case StepPolicy::Kind::PolyakSquared:
      if (!(state.grad_dual > 0.0)) return std::nullopt;
      return state.f / (state.grad_dual * state.grad_dual);
  }
  return std::nullopt;
}

Factor rank_r_projection(const Matrix& m, Index r) {
  if (m.rows() != m.cols()) throw DimensionError("rank_r_projection: matrix must be square");
  if (r < 1 || r > m.rows()) throw DimensionError("rank_r_projection: r outside [1, n]");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  const Index n = m.rows();
  Matrix x(n, r);
  for (Index j = 0; j < r; ++j) {
    const Index src = n - 1 - j;  // ascending order from the solver
    x.col(j) = es.eigenvectors().col(src) * std::sqrt(std::max(es.eigenvalues()(src), 0.0));
  }
  return Factor(std::move(x));
}

Factor spectral_init(const MeasurementEnsemble& ens, const Vector& y, Index r) {
  if (y.size() != ens.m()) throw DimensionError("spectral_init: y length differs from m");
  return rank_r_projection(ens.adjoint(y) / ens.normalization(), r);
}

Matrix step(Method method, const Matrix& x, const Matrix& grad, double alpha, double eta) {
  switch (method) {
    case Method::GD:
      if (grad.rows() != x.rows() || grad.cols() != x.cols())
        throw DimensionError("step: gradient shape differs from X");
      return x - alpha * grad;
    case Method::ScaledGD: return x - alpha * apply_inverse(x, 0.0, grad);
    case Method::PrecGD: return x - alpha * apply_inverse(x, eta, grad);
  }
  throw ConfigError("unknown method");
}

namespace {

LossEval evaluate(const ProblemInstance& inst, const LossSpec& loss, const Matrix& x) {
  if (loss.kind == LossSpec::Kind::L2) return eval_l2(inst.ensemble, inst.observations.y, x);
  return eval_lp(inst.ensemble, inst.observations.y, x, loss.p);
}

double min_gram_eigenvalue(const Matrix& x) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(x.transpose() * x, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

bool uses_best_iterate(const SolverConfig& cfg) {
  using K = DampingSchedule::Kind;
  return cfg.method == Method::PrecGD &&
         (cfg.damping.kind == K::OracleResidual || cfg.damping.kind == K::VarianceProxy);
}

}  // namespace

RunResult run(const ProblemInstance& inst, const SolverConfig& cfg, const std::optional<Factor>& x0) {
  cfg.validate();
  inst.validate();
  const auto& ens = inst.ensemble;
  const Index r = inst.search_rank;
  if (cfg.method == Method::PrecGD && cfg.damping.kind == DampingSchedule::Kind::OracleResidual &&
      !inst.truth)
    throw ConfigError("oracle_residual damping requires a ground truth");

  Matrix x = x0 ? x0->matrix() : spectral_init(ens, inst.observations.y, r).matrix();
  if (x.rows() != ens.n() || x.cols() != r)
    throw DimensionError("initial factor must be n x r");

  Trace trace;
  Matrix best = x;
  int best_k = 0;
  double best_eta = std::numeric_limits<double>::infinity();
  const bool track_best = uses_best_iterate(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const double sqrt_norm = std::sqrt(ens.normalization());

  auto stop = [&](StopReason why, std::string msg = {}) {
    trace.stop = why;
    trace.diverged = why == StopReason::Diverged;
    trace.message = std::move(msg);
  };

  for (int k = 0;; ++k) {
    IterationRecord rec;
    rec.k = k;
    const LossEval ev = evaluate(inst, cfg.loss, x);
    rec.f = ev.f;
    rec.grad_fro = ev.grad.norm();
    if (!std::isfinite(ev.f) || !all_finite(ev.grad)) {
      // Nothing finite to report for this iterate; the previous record is the last valid one.
      if (!trace.records.empty()) trace.records.back().flag = RecordFlag::Diverged;
      stop(StopReason::Diverged, "non-finite loss or gradient at k=" + std::to_string(k));
      break;
    }
    rec.lambda_min_gram = min_gram_eigenvalue(x);

    std::optional<double> residual;
    if (inst.truth) {
      const Matrix e = x * x.transpose() - inst.truth->m_star();
      rec.err_fro = e.norm();
      if (cfg.method == Method::PrecGD &&
          cfg.damping.kind == DampingSchedule::Kind::OracleResidual)
        residual = ens.forward(e).norm() / sqrt_norm;
    }

    double eta = 0.0;
    if (cfg.method == Method::PrecGD) {
      eta = damping(cfg.damping, ev.f, residual);
      rec.eta = eta;
    } else if (cfg.method == Method::ScaledGD) {
      rec.eta = 0.0;
    }

    double gdual = rec.grad_fro;
    if (cfg.method != Method::GD) {
      try {
        gdual = dual_p_norm(x, eta, ev.grad);
      } catch (const SingularityError& err) {
        rec.flag = RecordFlag::Singular;
        rec.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        trace.records.push_back(rec);
        stop(StopReason::Diverged, err.what());
        break;
      }
    }
    rec.grad_dual_p = gdual;

    if (cfg.record_diagnostics) {
      if (ev.f > 0.0) rec.pl_ratio = gdual * gdual / ev.f;
      if (inst.truth && inst.truth->r_star() <= r)
        rec.sin_theta_rstar = sin_theta(x, inst.truth->m_star(), inst.truth->r_star());
    }

    if (track_best && eta < best_eta) {
      best_eta = eta;
      best = x;
      best_k = k;
    }

    auto finish_record = [&] {
      rec.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      trace.records.push_back(rec);
    };

    if (ev.f <= cfg.tol_f) {
      rec.flag = RecordFlag::Converged;
      finish_record();
      stop(StopReason::TolF);
      break;
    }
    if (cfg.tol_error && rec.err_fro && *rec.err_fro <= *cfg.tol_error) {
      rec.flag = RecordFlag::Converged;
      finish_record();
      stop(StopReason::TolError);
      break;
    }
    const auto alpha = step_size(cfg.step, {ev.f, gdual, k});
    if (!alpha) {
      rec.flag = RecordFlag::Converged;
      finish_record();
      stop(StopReason::Converged, "zero dual gradient norm");
      break;
    }
    rec.alpha = *alpha;
    if (k >= cfg.max_iters) {
      finish_record();
      stop(StopReason::MaxIters);
      break;
    }

    Matrix next;
    try {
      next = step(cfg.method, x, ev.grad, *alpha, eta);
    } catch (const SingularityError& err) {
      rec.flag = RecordFlag::Singular;
      finish_record();
      stop(StopReason::Diverged, err.what());
      break;
    }
    if (!all_finite(next)) {
      rec.flag = RecordFlag::Diverged;
      finish_record();
      stop(StopReason::Diverged, "non-finite iterate after k=" + std::to_string(k));
      break;
    }
    finish_record();
    x = std::move(next);
  }

  if (!track_best) {
    best = x;
    best_k = trace.records.empty() ? 0 : trace.records.back().k;
  }
  return RunResult{std::move(trace), Factor(std::move(best)), best_k};
}

}  // namespace precgd
