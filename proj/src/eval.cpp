#include "fsrm/eval.h"

#include <cmath>
#include <stdexcept>

namespace fsrm {

EffectEstimates estimate_effects(const Dataset& ds, std::span<const double> cf_outcome) {
  if (cf_outcome.size() != ds.n())
    throw std::invalid_argument("estimate_effects: counterfactual outcome missing for some units");
  EffectEstimates est;
  est.ite_hat.resize(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (!std::isfinite(cf_outcome[i]))
      throw std::invalid_argument("estimate_effects: counterfactual outcome of unit " + std::to_string(i) + " is undefined");
    est.ite_hat[i] = ds.t[i] == 1 ? ds.y_f[i] - cf_outcome[i] : cf_outcome[i] - ds.y_f[i];
  }
  est.ate_hat = mean(est.ite_hat);
  est.ite_true = ds.true_ite();
  if (est.ite_true) est.ate_true = mean(*est.ite_true);
  return est;
}

EffectEstimates estimate_effects(const Dataset& ds, const MatchResult& mr) {
  return estimate_effects(ds, mr.cf_outcome);
}

MetricReport metrics(const EffectEstimates& est) {
  if (!est.ite_true || !est.ate_true) throw std::invalid_argument("metrics: no ground-truth effects available");
  if (est.ite_true->size() != est.ite_hat.size())
    throw std::invalid_argument("metrics: ground truth and estimates differ in length");
  MetricReport r;
  r.n_units = est.ite_hat.size();
  r.eps_ate = std::abs(*est.ate_true - est.ate_hat);
  double s = 0.0;
  for (std::size_t i = 0; i < r.n_units; ++i) {
    const double e = (*est.ite_true)[i] - est.ite_hat[i];
    s += e * e;
  }
  r.pehe = r.n_units ? s / static_cast<double>(r.n_units) : 0.0;
  r.sqrt_pehe = std::sqrt(r.pehe);
  return r;
}

std::vector<double> feature_importance(const NetworkParams& params) {
  const Vector a = params.feature_weights.cwiseAbs();
  std::vector<double> out(static_cast<std::size_t>(a.size()), 0.0);
  if (a.size() == 0) return out;
  const double top = a.maxCoeff();
  if (top == 0.0) return out;
  for (Eigen::Index j = 0; j < a.size(); ++j) out[static_cast<std::size_t>(j)] = a(j) / top;
  return out;
}

}  // namespace fsrm
