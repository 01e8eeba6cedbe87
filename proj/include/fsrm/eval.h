#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fsrm/dataset.h"
#include "fsrm/matching.h"
#include "fsrm/network.h"

namespace fsrm {

struct EffectEstimates {
  std::vector<double> ite_hat;
  double ate_hat = 0.0;
  std::optional<std::vector<double>> ite_true;
  std::optional<double> ate_true;
};

struct MetricReport {
  double eps_ate = 0.0;
  double pehe = 0.0;
  double sqrt_pehe = 0.0;
  std::size_t n_units = 0;
};

// Treated: y_f - cf. Control: cf - y_f. Ground truth attached when the
// dataset carries it.
EffectEstimates estimate_effects(const Dataset& ds, std::span<const double> cf_outcome);
EffectEstimates estimate_effects(const Dataset& ds, const MatchResult& mr);

// Throws std::invalid_argument when no ground truth is attached.
MetricReport metrics(const EffectEstimates& est);

// |w_j| / max_k |w_k| over the one-to-one layer; all zeros when w == 0.
std::vector<double> feature_importance(const NetworkParams& params);

}  // namespace fsrm
