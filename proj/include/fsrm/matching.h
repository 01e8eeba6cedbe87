#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fsrm/dataset.h"
#include "fsrm/numcore.h"

namespace fsrm {

enum class DistanceMetric { euclidean, mahalanobis, propensity };

std::string_view to_string(DistanceMetric m);
// Accepts euclid/euclidean, mahal/mahalanobis, propensity.
DistanceMetric parse_metric(std::string_view text);

// Side information a metric needs: the pooled representation sample for
// Mahalanobis, per-unit treated probabilities for propensity.
struct MetricAux {
  Matrix pooled;
  std::vector<double> scores_a;
  std::vector<double> scores_b;
};

// Inverse of pooled covariance + 1e-6 * trace / dim * I. Throws
// NumericalError if the regularized matrix is still singular.
Matrix mahalanobis_precision(const Matrix& pooled);

// Mahalanobis distances under an explicitly given SPD covariance (no ridge).
Matrix mahalanobis_cost(const Matrix& rep_a, const Matrix& rep_b, const Matrix& cov);

Matrix pairwise_cost(const Matrix& rep_a, const Matrix& rep_b, DistanceMetric metric,
                     const MetricAux& aux = {});

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), sorted by row
  double total_cost = 0.0;
};

// Exact min-cost one-to-one matching of size min(rows, cols)
// (shortest augmenting path with potentials).
Assignment optimal_assignment(const Matrix& cost);

struct MatchResult {
  DistanceMetric metric = DistanceMetric::euclidean;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (treated unit, control unit) dataset indices
  double pair_cost = 0.0;                                  // mean distance over pairs
  std::vector<double> cf_outcome;
  std::vector<std::size_t> cf_source;
  std::vector<double> cf_distance;
  std::vector<std::optional<std::size_t>> pair_partner;
};

// `scores` is only used by the propensity metric (per-unit P(t=1)).
MatchResult impute_counterfactuals(const Dataset& ds, const Matrix& representation,
                                   DistanceMetric metric, std::span<const double> scores = {});

// Match report CSV: unit_id,t,yf,cf_outcome,cf_source,paired,pair_partner,distance
std::string format_match_report(const Dataset& ds, const MatchResult& mr);
void write_match_report(const Dataset& ds, const MatchResult& mr, const std::filesystem::path& path);

struct MatchReportRow {
  std::size_t unit_id = 0;
  int t = 0;
  double yf = 0.0;
  double cf_outcome = 0.0;
  std::size_t cf_source = 0;
  bool paired = false;
  std::optional<std::size_t> pair_partner;
  double distance = 0.0;
};
std::vector<MatchReportRow> read_match_report(const std::filesystem::path& path);

}  // namespace fsrm
