#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fsrm/numcore.h"

namespace fsrm {

enum class BlockLabel { confounder, adjustment, instrument, irrelevant, unknown };

std::string_view to_string(BlockLabel label);
BlockLabel parse_block_label(std::string_view text);

// Observational dataset: covariates, binary treatment, factual outcome and
// whatever ground truth is known.
struct Dataset {
  Matrix x;
  std::vector<int> t;
  std::vector<double> y_f;
  std::optional<std::vector<double>> y_cf;
  std::optional<std::vector<double>> mu0;
  std::optional<std::vector<double>> mu1;
  std::optional<std::vector<double>> e0;
  std::optional<std::vector<BlockLabel>> block_labels;

  std::size_t n() const { return t.size(); }
  std::size_t d() const { return static_cast<std::size_t>(x.cols()); }
  std::size_t n_treated() const;
  std::size_t n_control() const { return n() - n_treated(); }

  // Throws std::invalid_argument describing the first violated invariant.
  void validate() const;

  // Units at `indices`, in the given order.
  Dataset subset(const std::vector<std::size_t>& indices) const;

  // Ground-truth ITE: mu1 - mu0 when present, otherwise derived from y_cf.
  std::optional<std::vector<double>> true_ite() const;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Dataset read_dataset(const std::filesystem::path& path);
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset parse_dataset_csv(std::string_view text);
std::string format_dataset_csv(const Dataset& ds);

// Shortest representation that parses back to the same double.
std::string format_double(double v);

}  // namespace fsrm
