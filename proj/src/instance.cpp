#include "precgd/instance.hpp"

#include <string>

namespace precgd {

void ProblemInstance::validate() const {
  if (search_rank < 1) throw DomainError("search rank must be >= 1");
  if (search_rank > ensemble.n()) throw DimensionError("search rank exceeds n");
  if (observations.y.size() != ensemble.m())
    throw DimensionError("observations have length " + std::to_string(observations.y.size()) +
                         " but the operator has m=" + std::to_string(ensemble.m()));
  if (truth && truth->n() != ensemble.n())
    throw DimensionError("ground truth dimension differs from operator dimension");
}

ProblemInstance make_instance(const ProblemSpec& spec) {
  if (spec.ensemble == EnsembleKind::Custom)
    throw ConfigError("custom ensembles are loaded from file, not generated");
  GroundTruth truth = make_ground_truth(spec.n, spec.r_star, spec.kappa, spec.seed, spec.truth_scale);
  MeasurementEnsemble ens =
      spec.ensemble == EnsembleKind::Identity
          ? MeasurementEnsemble::identity(spec.n)
          : MeasurementEnsemble::gaussian(spec.n, spec.m, derive_seed(spec.seed, stream::kEnsemble));
  if (spec.unit_normalization) ens = ens.with_normalization(1.0);
  Observations obs = observe(ens, truth, spec.sigma, derive_seed(spec.seed, stream::kNoise));
  ProblemInstance inst{std::move(ens), std::move(obs), std::move(truth), spec.r};
  inst.validate();
  return inst;
}

}  // namespace precgd
