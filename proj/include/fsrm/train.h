#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <vector>

#include "fsrm/dataset.h"
#include "fsrm/network.h"

namespace fsrm {

// Per-column affine standardization fitted on the training split. Constant
// columns have scale 0 and always map to 0.
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& x);
  Matrix apply(const Matrix& x) const;
};

// A trained network together with the preprocessing it expects.
struct Model {
  NetworkParams params;
  Standardizer standardizer;

  // Eval-mode forward pass on raw covariates.
  ForwardResult predict(const Matrix& x, std::span<const int> t) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  ObjectiveTerms train;  // mean over minibatches
  ObjectiveTerms validation;
  double best_validation = std::numeric_limits<double>::infinity();
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
  // Validation objective of the returned parameters (+inf if never finite).
  double best_validation = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> validation_indices;
};

// Stratified train/validation split: val_fraction of each treatment group,
// at least one unit of each group on both sides when the group allows it.
void split_train_validation(const Dataset& ds, double val_fraction, RandomStream& stream,
                            std::vector<std::size_t>& train_idx, std::vector<std::size_t>& val_idx);

TrainResult train(const TrainConfig& config, const Dataset& ds, RandomStream& stream);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace fsrm
