#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fsrm/datagen.h"
#include "fsrm/matching.h"
#include "fsrm/network.h"

namespace fsrm {

struct ExperimentConfig {
  TrainConfig train;
  SyntheticSpec synthetic;  // weights drawn from the master seed when left empty
  std::optional<std::filesystem::path> dataset;
  std::size_t augment_irrelevant = 0;
  std::vector<DistanceMetric> metrics = {DistanceMetric::euclidean};
  std::size_t n_realizations = 100;
  std::uint64_t seed = 1;
  double q = 0.0;
  bool disable_fsl = false;
  bool disable_ipm = false;
  std::optional<std::filesystem::path> output_dir;
  std::size_t workers = 1;

  // Training config after ablation flags: disable_fsl drops the one-to-one
  // layer and zeroes lambda/alpha, disable_ipm zeroes gamma.
  TrainConfig effective_train_config() const;
  // Synthetic spec with weights filled in from the master seed if missing.
  SyntheticSpec effective_synthetic_spec() const;
  void validate() const;
};

// Applies one `key = value` setting. Throws std::invalid_argument for
// unknown keys or malformed values.
void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value);

// Flat `key = value` text, '#' starts a comment.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});
std::string format_config(const ExperimentConfig& cfg);

// Search grid: each key lists its candidate values separated by '|'.
// `budget = N` switches from the full product to N random draws.
struct SearchGrid {
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  std::size_t budget = 0;
};

SearchGrid parse_grid(std::string_view text);
SearchGrid load_grid(const std::filesystem::path& path);
// Hyperparameter ranges used for model selection, 24 random draws.
SearchGrid default_search_grid();

}  // namespace fsrm
