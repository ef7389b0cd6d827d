#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "precgd/instance.hpp"
#include "precgd/metric.hpp"
#include "precgd/model.hpp"

namespace precgd {

enum class Method { GD, ScaledGD, PrecGD };
std::string to_string(Method m);

/// Step-size rule.
struct StepPolicy {
  enum class Kind {
    Fixed,          ///< alpha
    Polyak,         ///< f^p / ||grad||_{P*}, p = exponent
    PolyakSquared,  ///< f / ||grad||_{P*}^2
    Decaying,       ///< alpha0 * decay^k
  };
  Kind kind = Kind::Fixed;
  double alpha = 0.02;    ///< Fixed alpha, or alpha0 for Decaying
  double decay = 1.0;     ///< Decaying only, in (0, 1]
  double exponent = 1.0;  ///< Polyak only

  static StepPolicy fixed(double alpha);
  static StepPolicy polyak(double exponent);
  static StepPolicy polyak_squared();
  static StepPolicy decaying(double alpha0, double decay);
};

std::string to_string(StepPolicy::Kind kind);

struct StepState {
  double f = 0.0;
  double grad_dual = 0.0;  ///< ||grad||_{P*} (Frobenius norm for GD)
  int k = 0;
};

/// Step size for the current state. std::nullopt signals convergence
/// (Polyak rules with a zero gradient).
std::optional<double> step_size(const StepPolicy& policy, const StepState& state);

struct LossSpec {
  enum class Kind { L2, Lp };
  Kind kind = Kind::L2;
  double p = 2.0;

  static LossSpec l2() { return {Kind::L2, 2.0}; }
  static LossSpec lp(double p);
};

struct SolverConfig {
  Method method = Method::PrecGD;
  DampingSchedule damping = DampingSchedule::sqrt_f();  ///< ignored by GD and ScaledGD
  StepPolicy step = StepPolicy::fixed(0.02);
  LossSpec loss = LossSpec::l2();
  int max_iters = 5000;
  double tol_f = 1e-20;
  std::optional<double> tol_error;
  bool record_diagnostics = true;  ///< sin_theta and pl_ratio columns
  std::uint64_t seed = 0;

  /// Throws ConfigError on max_iters < 1, tol_f < 0 or a bad step policy.
  void validate() const;
};

enum class RecordFlag { Ok, Diverged, Singular, Converged };
std::string to_string(RecordFlag flag);

/// One row of the trace. Optional fields are empty when not applicable
/// (no truth, GD has no eta, undefined at exact recovery).
struct IterationRecord {
  int k = 0;
  double f = 0.0;
  std::optional<double> eta;
  std::optional<double> alpha;
  double grad_fro = 0.0;
  std::optional<double> grad_dual_p;
  double lambda_min_gram = 0.0;
  std::optional<double> err_fro;
  std::optional<double> sin_theta_rstar;
  std::optional<double> pl_ratio;
  std::int64_t wall_ns = 0;
  RecordFlag flag = RecordFlag::Ok;
};

enum class StopReason { MaxIters, TolF, TolError, Converged, Diverged };
std::string to_string(StopReason r);

struct Trace {
  std::vector<IterationRecord> records;
  bool diverged = false;
  StopReason stop = StopReason::MaxIters;
  std::string message;
};

struct RunResult {
  Trace trace;
  Factor best;
  int best_k = 0;
};

/// Best PSD rank-r approximation: top-r algebraic eigenpairs, negatives clipped.
Factor rank_r_projection(const Matrix& m, Index r);

/// rank_r_projection(adjoint(y) / norm, r).
Factor spectral_init(const MeasurementEnsemble& ens, const Vector& y, Index r);

/// One update X - alpha * direction. ScaledGD uses eta = 0.
/// Throws SingularityError from the metric solve.
Matrix step(Method method, const Matrix& x, const Matrix& grad, double alpha, double eta);

/// Runs the configured method from X0 (spectral_init when absent).
/// Divergence is reported in the trace, never thrown.
RunResult run(const ProblemInstance& inst, const SolverConfig& cfg,
              const std::optional<Factor>& x0 = std::nullopt);

}  // namespace precgd
