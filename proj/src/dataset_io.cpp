#include <algorithm>
#include <cmath>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "fsrm/dataset.h"

namespace fsrm {

namespace {

constexpr std::string_view kLabelNames[] = {"confounder", "adjustment", "instrument", "irrelevant",
                                            "unknown"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_real(std::string_view cell, std::size_t line_no, std::string_view column) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v))
    throw ParseError("line " + std::to_string(line_no) + ", column '" + std::string(column) +
                     "': invalid real '" + std::string(cell) + "'");
  return v;
}

void check_length(std::size_t got, std::size_t n, const char* what) {
  if (got != n)
    throw std::invalid_argument(std::string("Dataset: ") + what + " has length " +
                                std::to_string(got) + ", expected " + std::to_string(n));
}

}  // namespace

std::string_view to_string(BlockLabel label) { return kLabelNames[static_cast<int>(label)]; }

BlockLabel parse_block_label(std::string_view text) {
  for (int i = 0; i < 5; ++i)
    if (kLabelNames[i] == text) return static_cast<BlockLabel>(i);
  throw ParseError("unknown block label '" + std::string(text) + "'");
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::size_t Dataset::n_treated() const {
  std::size_t k = 0;
  for (int v : t) k += v == 1;
  return k;
}

void Dataset::validate() const {
  const std::size_t units = n();
  check_length(static_cast<std::size_t>(x.rows()), units, "x");
  check_length(y_f.size(), units, "y_f");
  if (y_cf) check_length(y_cf->size(), units, "y_cf");
  if (mu0) check_length(mu0->size(), units, "mu0");
  if (mu1) check_length(mu1->size(), units, "mu1");
  if (e0) check_length(e0->size(), units, "e0");
  if (block_labels) check_length(block_labels->size(), d(), "block_labels");
  if (mu0.has_value() != mu1.has_value())
    throw std::invalid_argument("Dataset: mu0 and mu1 must be given together");
  for (std::size_t i = 0; i < units; ++i)
    if (t[i] != 0 && t[i] != 1)
      throw std::invalid_argument("Dataset: t[" + std::to_string(i) + "] is not 0/1");
  if (e0)
    for (std::size_t i = 0; i < units; ++i)
      if (!((*e0)[i] > 0.0 && (*e0)[i] < 1.0))
        throw std::invalid_argument("Dataset: e0[" + std::to_string(i) + "] outside (0, 1)");
  if (!x.allFinite()) throw std::invalid_argument("Dataset: non-finite covariate");
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.x.resize(static_cast<Eigen::Index>(indices.size()), x.cols());
  auto pick = [&](const std::vector<double>& src) {
    std::vector<double> v;
    v.reserve(indices.size());
    for (std::size_t i : indices) v.push_back(src.at(i));
    return v;
  };
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out.x.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(indices[k]));
    out.t.push_back(t.at(indices[k]));
  }
  out.y_f = pick(y_f);
  if (y_cf) out.y_cf = pick(*y_cf);
  if (mu0) out.mu0 = pick(*mu0);
  if (mu1) out.mu1 = pick(*mu1);
  if (e0) out.e0 = pick(*e0);
  out.block_labels = block_labels;
  return out;
}

std::optional<std::vector<double>> Dataset::true_ite() const {
  std::vector<double> ite(n());
  if (mu0 && mu1) {
    for (std::size_t i = 0; i < n(); ++i) ite[i] = (*mu1)[i] - (*mu0)[i];
    return ite;
  }
  if (y_cf) {
    for (std::size_t i = 0; i < n(); ++i)
      ite[i] = t[i] == 1 ? y_f[i] - (*y_cf)[i] : (*y_cf)[i] - y_f[i];
    return ite;
  }
  return std::nullopt;
}

Dataset parse_dataset_csv(std::string_view text) {
  Dataset ds;
  std::vector<std::string_view> header;
  std::optional<std::vector<BlockLabel>> labels;
  std::vector<std::vector<double>> xcols;
  std::map<std::string, std::vector<double>, std::less<>> extra;
  std::vector<int> x_index;  // header position -> x column, or -1
  static const std::vector<std::string> kOptional = {"ycf", "mu0", "mu1", "e0"};

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = text.find('\n', pos);
    std::string_view line = text.substr(pos, end == std::string_view::npos ? end : end - pos);
    pos = end == std::string_view::npos ? text.size() : end + 1;
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '#') {
      std::string_view body = trim(line.substr(1));
      if (body.starts_with("blocks:")) body = trim(body.substr(7));
      std::vector<BlockLabel> parsed;
      for (auto tag : split_commas(body)) parsed.push_back(parse_block_label(tag));
      labels = std::move(parsed);
      continue;
    }

    const auto cells = split_commas(line);
    if (header.empty()) {
      header = cells;
      std::size_t d = 0;
      for (auto name : header)
        if (name.size() > 1 && name.front() == 'x') ++d;
      xcols.resize(d);
      for (auto name : header) {
        if (name.size() > 1 && name.front() == 'x') {
          std::size_t idx = 0;
          const auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), idx);
          if (ec != std::errc() || ptr != name.data() + name.size() || idx >= d)
            throw ParseError("line " + std::to_string(line_no) + ": bad covariate column '" +
                             std::string(name) + "' (expected x0..x" + std::to_string(d - 1) + ")");
          x_index.push_back(static_cast<int>(idx));
        } else if (name == "t" || name == "yf" ||
                   std::find(kOptional.begin(), kOptional.end(), name) != kOptional.end()) {
          x_index.push_back(-1);
          extra[std::string(name)];
        } else {
          throw ParseError("line " + std::to_string(line_no) + ": unknown column '" +
                           std::string(name) + "'");
        }
      }
      if (!extra.contains("t")) throw ParseError("missing required column 't'");
      if (!extra.contains("yf")) throw ParseError("missing required column 'yf'");
      if (d == 0) throw ParseError("no covariate columns x0..");
      std::vector<int> seen(d, 0);
      for (int idx : x_index)
        if (idx >= 0 && seen[static_cast<std::size_t>(idx)]++)
          throw ParseError("duplicate covariate column x" + std::to_string(idx));
      continue;
    }

    if (cells.size() != header.size())
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, found " +
                       std::to_string(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (header[c] == "t") {
        if (cells[c] != "0" && cells[c] != "1")
          throw ParseError("line " + std::to_string(line_no) + ", column 't': treatment '" +
                           std::string(cells[c]) + "' is not 0 or 1");
        ds.t.push_back(cells[c] == "1" ? 1 : 0);
      } else {
        const double v = parse_real(cells[c], line_no, header[c]);
        if (x_index[c] >= 0)
          xcols[static_cast<std::size_t>(x_index[c])].push_back(v);
        else
          extra.find(header[c])->second.push_back(v);
      }
    }
  }
  if (header.empty()) throw ParseError("empty dataset file (no header)");

  const std::size_t n = ds.t.size();
  ds.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(xcols.size()));
  for (std::size_t j = 0; j < xcols.size(); ++j)
    for (std::size_t i = 0; i < n; ++i)
      ds.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = xcols[j][i];
  ds.y_f = std::move(extra["yf"]);
  if (auto it = extra.find("ycf"); it != extra.end()) ds.y_cf = std::move(it->second);
  if (auto it = extra.find("mu0"); it != extra.end()) ds.mu0 = std::move(it->second);
  if (auto it = extra.find("mu1"); it != extra.end()) ds.mu1 = std::move(it->second);
  if (auto it = extra.find("e0"); it != extra.end()) ds.e0 = std::move(it->second);
  if (labels) {
    if (labels->size() != ds.d())
      throw ParseError("block label line has " + std::to_string(labels->size()) + " tags for " +
                       std::to_string(ds.d()) + " covariate columns");
    ds.block_labels = std::move(labels);
  }
  try {
    ds.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what());
  }
  return ds;
}

std::string format_dataset_csv(const Dataset& ds) {
  ds.validate();
  std::ostringstream out;
  if (ds.block_labels) {
    out << "# blocks:";
    for (std::size_t j = 0; j < ds.d(); ++j) out << (j ? "," : "") << to_string((*ds.block_labels)[j]);
    out << '\n';
  }
  for (std::size_t j = 0; j < ds.d(); ++j) out << 'x' << j << ',';
  out << "t,yf";
  if (ds.y_cf) out << ",ycf";
  if (ds.mu0) out << ",mu0,mu1";
  if (ds.e0) out << ",e0";
  out << '\n';
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < ds.x.cols(); ++j) out << format_double(ds.x(row, j)) << ',';
    out << ds.t[i] << ',' << format_double(ds.y_f[i]);
    if (ds.y_cf) out << ',' << format_double((*ds.y_cf)[i]);
    if (ds.mu0) out << ',' << format_double((*ds.mu0)[i]) << ',' << format_double((*ds.mu1)[i]);
    if (ds.e0) out << ',' << format_double((*ds.e0)[i]);
    out << '\n';
  }
  return out.str();
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open dataset file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_dataset_csv(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  const std::string text = format_dataset_csv(ds);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset file " + path.string());
  out << text;
}

}  // namespace fsrm
