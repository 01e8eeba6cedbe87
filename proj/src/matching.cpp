#include "fsrm/matching.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "fsrm/balance.h"

namespace fsrm {

namespace {

constexpr double kRidge = 1e-6;

// Rows of x mapped so that Euclidean distance equals Mahalanobis distance
// under covariance L L^T.
Matrix whiten(const Matrix& x, const Matrix& chol_lower) {
  // y^T = L^{-1} x^T
  return chol_lower.triangularView<Eigen::Lower>().solve(x.transpose()).transpose();
}

Matrix pooled_covariance(const Matrix& pooled) {
  const Eigen::Index n = pooled.rows();
  if (n < 2) throw NumericalError("mahalanobis: need at least 2 pooled samples for a covariance");
  const Matrix centered = pooled.rowwise() - pooled.colwise().mean();
  return (centered.transpose() * centered) / static_cast<double>(n - 1);
}

Matrix regularized_factor(const Matrix& pooled) {
  Matrix cov = pooled_covariance(pooled);
  const double ridge = kRidge * cov.trace() / static_cast<double>(cov.rows());
  cov.diagonal().array() += ridge;
  cov = 0.5 * (cov + cov.transpose()).eval();
  try {
    return cholesky_lower(cov);
  } catch (const std::invalid_argument& e) {
    throw NumericalError(std::string("mahalanobis: regularized pooled covariance is singular (trace ") +
                         format_double(cov.trace()) + ", ridge " + format_double(ridge) + "): " + e.what());
  }
}

}  // namespace

std::string_view to_string(DistanceMetric m) {
  switch (m) {
    case DistanceMetric::euclidean: return "euclid";
    case DistanceMetric::mahalanobis: return "mahal";
    case DistanceMetric::propensity: return "propensity";
  }
  return "?";
}

DistanceMetric parse_metric(std::string_view text) {
  if (text == "euclid" || text == "euclidean") return DistanceMetric::euclidean;
  if (text == "mahal" || text == "mahalanobis") return DistanceMetric::mahalanobis;
  if (text == "propensity") return DistanceMetric::propensity;
  throw std::invalid_argument("unknown metric '" + std::string(text) + "' (expected euclid, mahal or propensity)");
}

Matrix mahalanobis_precision(const Matrix& pooled) {
  const Matrix l = regularized_factor(pooled);
  const Matrix l_inv = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(l.rows(), l.cols()));
  return l_inv.transpose() * l_inv;
}

Matrix pairwise_cost(const Matrix& rep_a, const Matrix& rep_b, DistanceMetric metric,
                     const MetricAux& aux) {
  switch (metric) {
    case DistanceMetric::euclidean:
      return euclidean_cost(rep_a, rep_b);
    case DistanceMetric::mahalanobis: {
      if (rep_a.cols() != rep_b.cols() || aux.pooled.cols() != rep_a.cols())
        throw std::invalid_argument("pairwise_cost: representation dimensions differ");
      const Matrix l = regularized_factor(aux.pooled);
      return euclidean_cost(whiten(rep_a, l), whiten(rep_b, l));
    }
    case DistanceMetric::propensity: {
      if (aux.scores_a.size() != static_cast<std::size_t>(rep_a.rows()) ||
          aux.scores_b.size() != static_cast<std::size_t>(rep_b.rows()))
        throw std::invalid_argument("pairwise_cost: propensity scores missing for some units");
      Matrix c(rep_a.rows(), rep_b.rows());
      for (Eigen::Index i = 0; i < c.rows(); ++i)
        for (Eigen::Index j = 0; j < c.cols(); ++j)
          c(i, j) = std::abs(aux.scores_a[static_cast<std::size_t>(i)] - aux.scores_b[static_cast<std::size_t>(j)]);
      return c;
    }
  }
  throw std::invalid_argument("pairwise_cost: unknown metric");
}

Matrix mahalanobis_cost(const Matrix& rep_a, const Matrix& rep_b, const Matrix& cov) {
  const Matrix l = cholesky_lower(cov);
  return euclidean_cost(whiten(rep_a, l), whiten(rep_b, l));
}

Assignment optimal_assignment(const Matrix& cost) {
  Assignment out;
  if (cost.rows() == 0 || cost.cols() == 0) return out;
  if (!cost.allFinite()) throw std::invalid_argument("optimal_assignment: non-finite cost");
  const bool transposed = cost.rows() > cost.cols();
  const Matrix a = transposed ? Matrix(cost.transpose()) : cost;
  const auto n = static_cast<std::size_t>(a.rows());
  const auto m = static_cast<std::size_t>(a.cols());
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // 1-based potentials; column 0 is a virtual source.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> row_of_col(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    row_of_col[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = row_of_col[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[row_of_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of_col[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      row_of_col[j0] = row_of_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (std::size_t j = 1; j <= m; ++j) {
    if (row_of_col[j] == 0) continue;
    const std::size_t r = row_of_col[j] - 1, c = j - 1;
    out.pairs.emplace_back(transposed ? c : r, transposed ? r : c);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (auto [r, c] : out.pairs) out.total_cost += cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  return out;
}

MatchResult impute_counterfactuals(const Dataset& ds, const Matrix& representation,
                                   DistanceMetric metric, std::span<const double> scores) {
  if (static_cast<std::size_t>(representation.rows()) != ds.n())
    throw std::invalid_argument("impute_counterfactuals: representation has wrong number of rows");
  std::vector<std::size_t> treated, control;
  for (std::size_t i = 0; i < ds.n(); ++i) (ds.t[i] == 1 ? treated : control).push_back(i);
  if (treated.empty() || control.empty())
    throw std::invalid_argument("impute_counterfactuals: both treatment groups must be nonempty");
  if (metric == DistanceMetric::propensity && scores.size() != ds.n())
    throw std::invalid_argument("impute_counterfactuals: propensity metric needs one score per unit");

  auto rows_of = [&](const std::vector<std::size_t>& idx) {
    Matrix m(static_cast<Eigen::Index>(idx.size()), representation.cols());
    for (std::size_t k = 0; k < idx.size(); ++k)
      m.row(static_cast<Eigen::Index>(k)) = representation.row(static_cast<Eigen::Index>(idx[k]));
    return m;
  };
  MetricAux aux;
  if (metric == DistanceMetric::mahalanobis) aux.pooled = representation;
  if (metric == DistanceMetric::propensity) {
    for (auto i : treated) aux.scores_a.push_back(scores[i]);
    for (auto i : control) aux.scores_b.push_back(scores[i]);
  }
  const Matrix cost = pairwise_cost(rows_of(treated), rows_of(control), metric, aux);

  MatchResult mr;
  mr.metric = metric;
  mr.cf_outcome.assign(ds.n(), 0.0);
  mr.cf_source.assign(ds.n(), 0);
  mr.cf_distance.assign(ds.n(), 0.0);
  mr.pair_partner.assign(ds.n(), std::nullopt);

  // Nearest opposite-group unit, ties to the lowest dataset index.
  for (std::size_t a = 0; a < treated.size(); ++a) {
    std::size_t best = 0;
    for (std::size_t b = 1; b < control.size(); ++b)
      if (cost(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) <
          cost(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(best)))
        best = b;
    const std::size_t unit = treated[a];
    mr.cf_source[unit] = control[best];
    mr.cf_distance[unit] = cost(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(best));
  }
  for (std::size_t b = 0; b < control.size(); ++b) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < treated.size(); ++a)
      if (cost(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) <
          cost(static_cast<Eigen::Index>(best), static_cast<Eigen::Index>(b)))
        best = a;
    const std::size_t unit = control[b];
    mr.cf_source[unit] = treated[best];
    mr.cf_distance[unit] = cost(static_cast<Eigen::Index>(best), static_cast<Eigen::Index>(b));
  }

  const Assignment asg = optimal_assignment(cost);
  for (auto [a, b] : asg.pairs) {
    const std::size_t tu = treated[a], cu = control[b];
    mr.pairs.emplace_back(tu, cu);
    const double dist = cost(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    mr.pair_partner[tu] = cu;
    mr.pair_partner[cu] = tu;
    mr.cf_source[tu] = cu;
    mr.cf_source[cu] = tu;
    mr.cf_distance[tu] = mr.cf_distance[cu] = dist;
  }
  mr.pair_cost = asg.pairs.empty() ? 0.0 : asg.total_cost / static_cast<double>(asg.pairs.size());
  for (std::size_t i = 0; i < ds.n(); ++i) mr.cf_outcome[i] = ds.y_f[mr.cf_source[i]];
  return mr;
}

std::string format_match_report(const Dataset& ds, const MatchResult& mr) {
  std::ostringstream out;
  out << "unit_id,t,yf,cf_outcome,cf_source,paired,pair_partner,distance\n";
  for (std::size_t i = 0; i < ds.n(); ++i) {
    out << i << ',' << ds.t[i] << ',' << format_double(ds.y_f[i]) << ','
        << format_double(mr.cf_outcome[i]) << ',' << mr.cf_source[i] << ','
        << (mr.pair_partner[i] ? 1 : 0) << ',';
    if (mr.pair_partner[i]) out << *mr.pair_partner[i];
    else out << -1;
    out << ',' << format_double(mr.cf_distance[i]) << '\n';
  }
  return out.str();
}

void write_match_report(const Dataset& ds, const MatchResult& mr, const std::filesystem::path& path) {
  const std::string text = format_match_report(ds, mr);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write match report " + path.string());
  out << text;
}

std::vector<MatchReportRow> read_match_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open match report " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("unit_id,t,yf,cf_outcome,cf_source,paired,pair_partner,distance", 0) != 0)
    throw ParseError(path.string() + ": missing match report header");
  std::vector<MatchReportRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8)
      throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": expected 8 fields");
    try {
      MatchReportRow r;
      r.unit_id = std::stoul(cells[0]);
      r.t = std::stoi(cells[1]);
      r.yf = std::stod(cells[2]);
      r.cf_outcome = std::stod(cells[3]);
      r.cf_source = std::stoul(cells[4]);
      r.paired = cells[5] == "1";
      const long partner = std::stol(cells[6]);
      if (partner >= 0) r.pair_partner = static_cast<std::size_t>(partner);
      r.distance = std::stod(cells[7]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": malformed field");
    }
  }
  return rows;
}

}  // namespace fsrm
