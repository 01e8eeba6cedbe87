#pragma once

#include <cstddef>
#include <vector>

#include "fsrm/dataset.h"
#include "fsrm/numcore.h"

namespace fsrm {

// Parameters of the partially linear synthetic benchmark
//   Y = tau(C, A) T + g(C, A) + eps,  T ~ Bernoulli(e0(C, Z)).
struct SyntheticSpec {
  std::size_t n_confounders = 15;
  std::size_t n_adjustment = 15;
  std::size_t n_instruments = 10;
  std::size_t n_irrelevant = 20;
  std::vector<double> b_tau;  // over (C, A)
  std::vector<double> b_g;    // over (C, A)
  std::vector<double> b_a;    // over (C, Z)
  double noise_std = 1.0;
  std::size_t pool_treated = 1000;
  std::size_t pool_control = 1000;
  std::size_t draw_treated = 250;
  std::size_t draw_control = 750;

  std::size_t n_covariates() const {
    return n_confounders + n_adjustment + n_instruments + n_irrelevant;
  }
  void validate() const;

  // Default block sizes with every weight drawn from uniform(0, 1).
  static SyntheticSpec with_random_weights(RandomStream& stream);
  // Redraws all three weight vectors for the current block sizes.
  void draw_weights(RandomStream& stream);
};

// Covariate column order is C, A, Z, I; block_labels records it.
// Returns the full pool (pool_treated + pool_control units) with e0, mu0,
// mu1 and y_cf populated.
Dataset generate_pool(const SyntheticSpec& spec, RandomStream& stream);

// generate_pool followed by an unbiased draw of draw_treated / draw_control.
Dataset generate_synthetic(const SyntheticSpec& spec, RandomStream& stream);

// Per drawn unit: with probability q take the not-yet-drawn unit of its group
// with the largest |e0 - 0.5| (lowest index on ties), otherwise a uniform
// not-yet-drawn unit of the group. Selected units keep pool order.
Dataset biased_resample(const Dataset& pool, double q, std::size_t draw_treated,
                        std::size_t draw_control, RandomStream& stream);

// Appends k irrelevant columns drawn jointly from N(0, R) with a fresh random
// correlation matrix R.
Dataset augment_irrelevant(const Dataset& ds, std::size_t k, RandomStream& stream);

}  // namespace fsrm
