#pragma once

#include <optional>

#include "precgd/model.hpp"
#include "precgd/sensing.hpp"

namespace precgd {

/// Operator, data and search rank for one recovery problem. The ground truth
/// is present for synthetic problems and absent for blind runs.
struct ProblemInstance {
  MeasurementEnsemble ensemble;
  Observations observations;
  std::optional<GroundTruth> truth;
  Index search_rank = 1;

  /// Checks that y has length m, r >= 1 and the truth matches n.
  void validate() const;
};

/// Synthetic problem settings. Seeds for the truth, operator and noise are
/// derived from `seed` through independent sub-streams.
struct ProblemSpec {
  Index n = 4;
  Index r_star = 2;
  Index r = 2;
  std::optional<double> kappa;
  Index m = 0;  ///< ignored for the identity kind
  double sigma = 0.0;
  EnsembleKind ensemble = EnsembleKind::GaussianSym;
  bool unit_normalization = false;  ///< use norm = 1 instead of m
  TruthScale truth_scale = TruthScale::UnitTop;
  std::uint64_t seed = 0;
};

ProblemInstance make_instance(const ProblemSpec& spec);

}  // namespace precgd
