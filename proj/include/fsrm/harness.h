#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "fsrm/config.h"
#include "fsrm/dataset.h"
#include "fsrm/eval.h"
#include "fsrm/matching.h"

namespace fsrm {

struct MetricOutcome {
  DistanceMetric metric = DistanceMetric::euclidean;
  MetricReport report;
  double ate_hat = 0.0;
  double pair_cost = 0.0;
};

struct RealizationResult {
  std::size_t index = 0;
  bool ok = false;
  std::string error;
  std::vector<MetricOutcome> outcomes;  // one per configured metric
  double train_loss = 0.0;              // training objective at the best epoch
  double val_loss = 0.0;                // best validation objective
  std::size_t best_epoch = 0;
  std::vector<double> importance;       // empty without feature selection
  std::vector<BlockLabel> labels;
};

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation, 0 for a single value
};
Summary summarize(const std::vector<double>& values);

struct MetricAggregate {
  DistanceMetric metric = DistanceMetric::euclidean;
  std::size_t n_ok = 0;
  std::size_t n_failed = 0;
  Summary sqrt_pehe, pehe, eps_ate, pair_cost;
};

struct ExperimentResult {
  std::uint64_t seed = 0;
  std::vector<RealizationResult> realizations;
  std::vector<MetricAggregate> aggregate;
  std::size_t failures = 0;
};

// The dataset a realization trains on, after ingest/generation, resampling and
// augmentation. Realization i draws from RandomStream(seed).split(i).
Dataset realization_dataset(const ExperimentConfig& cfg, std::size_t index);

// Runs cfg.n_realizations realizations on cfg.workers threads. Failed
// realizations are reported on `log` and counted; more than 10% failures
// throws std::runtime_error. Writes CSV outputs when cfg.output_dir is set.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

std::string format_realizations_csv(const ExperimentResult& r);
std::string format_aggregate_csv(const ExperimentResult& r);
std::string format_importance_csv(const ExperimentResult& r);
void write_experiment_outputs(const ExperimentResult& r, const std::filesystem::path& dir);

struct BiasSweepRow {
  double q = 0.0;
  MetricAggregate agg;
};

std::vector<BiasSweepRow> bias_sweep(const ExperimentConfig& cfg, const std::vector<double>& q_grid,
                                     std::ostream* log = nullptr);
std::string format_bias_csv(const std::vector<BiasSweepRow>& rows);

struct SearchCandidate {
  std::size_t id = 0;
  std::vector<std::pair<std::string, std::string>> settings;
  ExperimentConfig config;
  double score = 0.0;  // +inf when training failed or diverged
  std::size_t best_epoch = 0;
  std::string error;
};

struct SearchResult {
  std::vector<SearchCandidate> ranking;  // ascending score, ties by id
  const SearchCandidate& best() const { return ranking.front(); }
};

// Candidates are the full grid product, or grid.budget random draws. Each is
// trained on realization 0 and scored by its validation objective under the
// base config's loss weights.
SearchResult hyper_search(const ExperimentConfig& cfg, const SearchGrid& grid, std::ostream* log = nullptr);
std::string format_ranking_csv(const SearchResult& r);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace fsrm
