#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fsrm/matching.h"
#include "oracles.h"

using namespace fsrm;

namespace {

Matrix random_points(std::size_t n, std::size_t d, RandomStream& rs) {
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rs.normal();
  return m;
}

oracle::Dense to_dense(const Matrix& m) {
  oracle::Dense d(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) d[i][j] = m(i, j);
  return d;
}

Dataset toy_dataset(const std::vector<int>& t) {
  Dataset ds;
  ds.t = t;
  for (std::size_t i = 0; i < t.size(); ++i) ds.y_f.push_back(10.0 * static_cast<double>(i) + 1.0);
  ds.x = Matrix::Zero(static_cast<Eigen::Index>(t.size()), 1);
  return ds;
}

}  // namespace

TEST(PairwiseCost, ThreeFourFive) {
  Matrix a(1, 2), b(1, 2);
  a << 0, 0;
  b << 3, 4;
  EXPECT_DOUBLE_EQ(pairwise_cost(a, b, DistanceMetric::euclidean)(0, 0), 5.0);
}

TEST(PairwiseCost, IdentityCovarianceIsEuclidean) {
  RandomStream rs(1);
  const Matrix a = random_points(6, 3, rs), b = random_points(4, 3, rs);
  const Matrix m = mahalanobis_cost(a, b, Matrix::Identity(3, 3));
  EXPECT_LT((m - pairwise_cost(a, b, DistanceMetric::euclidean)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(PairwiseCost, MahalanobisAgainstDirectFormula) {
  RandomStream rs(2);
  const Matrix pooled = random_points(50, 3, rs);
  const Matrix p = mahalanobis_precision(pooled);
  const Matrix a = random_points(3, 3, rs), b = random_points(2, 3, rs);
  MetricAux aux;
  aux.pooled = pooled;
  const Matrix c = pairwise_cost(a, b, DistanceMetric::mahalanobis, aux);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      const Vector diff = (a.row(i) - b.row(j)).transpose();
      EXPECT_NEAR(c(i, j), std::sqrt(diff.dot(p * diff)), 1e-10);
    }
}

TEST(PairwiseCost, RankDeficientPoolIsRegularized) {
  Matrix pooled = Matrix::Zero(3, 5);  // fewer samples than dimensions
  pooled(0, 0) = 1;
  pooled(1, 1) = 2;
  MetricAux aux;
  aux.pooled = pooled;
  const Matrix c = pairwise_cost(pooled, pooled, DistanceMetric::mahalanobis, aux);
  EXPECT_TRUE(c.allFinite());
}

TEST(PairwiseCost, ZeroOnSelfAndSymmetricForAllMetrics) {
  RandomStream rs(3);
  const Matrix p = random_points(5, 2, rs);
  MetricAux aux;
  aux.pooled = p;
  for (int i = 0; i < 5; ++i) aux.scores_a.push_back(rs.uniform());
  aux.scores_b = aux.scores_a;
  for (auto m : {DistanceMetric::euclidean, DistanceMetric::mahalanobis, DistanceMetric::propensity}) {
    const Matrix c = pairwise_cost(p, p, m, aux);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(c(i, i), 0.0, 1e-12);
    EXPECT_LT((c - c.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GE(c.minCoeff(), 0.0);
  }
}

TEST(PairwiseCost, TriangleInequality) {
  RandomStream rs(4);
  const Matrix p = random_points(30, 3, rs);
  MetricAux aux;
  aux.pooled = p;
  for (auto m : {DistanceMetric::euclidean, DistanceMetric::mahalanobis}) {
    const Matrix c = pairwise_cost(p, p, m, aux);
    for (int i = 0; i < 30; i += 3)
      for (int j = 1; j < 30; j += 4)
        for (int k = 2; k < 30; k += 5) EXPECT_LE(c(i, k), c(i, j) + c(j, k) + 1e-12);
  }
}

TEST(PairwiseCost, ParseMetric) {
  EXPECT_EQ(parse_metric("euclid"), DistanceMetric::euclidean);
  EXPECT_EQ(parse_metric("mahal"), DistanceMetric::mahalanobis);
  EXPECT_EQ(parse_metric("propensity"), DistanceMetric::propensity);
  EXPECT_THROW(parse_metric("manhattan"), std::invalid_argument);
}

TEST(Assignment, DiagonalFavoring) {
  Matrix c(2, 2);
  c << 0, 9, 9, 0;
  const Assignment a = optimal_assignment(c);
  EXPECT_EQ(a.pairs, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}}));
  EXPECT_EQ(a.total_cost, 0.0);
}

TEST(Assignment, SquareIntegerCostsMatchBruteForce) {
  RandomStream rs(5);
  for (int rep = 0; rep < 20; ++rep) {
    Matrix c(5, 5);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = static_cast<double>(rs.uniform_index(20));
    EXPECT_EQ(optimal_assignment(c).total_cost, oracle::brute_force_assignment(to_dense(c)));
  }
}

TEST(Assignment, RectangularMatchesBruteForce) {
  RandomStream rs(6);
  for (auto [r, k] : {std::pair{3, 5}, std::pair{5, 3}, std::pair{1, 4}, std::pair{6, 2}}) {
    Matrix c(r, k);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = static_cast<double>(rs.uniform_index(50));
    const Assignment a = optimal_assignment(c);
    EXPECT_EQ(a.pairs.size(), static_cast<std::size_t>(std::min(r, k)));
    EXPECT_EQ(a.total_cost, oracle::brute_force_assignment(to_dense(c)));
    double s = 0.0;
    std::vector<bool> used_r(r), used_c(k);
    for (auto [i, j] : a.pairs) {
      EXPECT_FALSE(used_r[i]);
      EXPECT_FALSE(used_c[j]);
      used_r[i] = used_c[j] = true;
      s += c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    EXPECT_EQ(s, a.total_cost);
  }
}

TEST(Assignment, RotationLeavesCostUnchanged) {
  RandomStream rs(7);
  const Matrix a = random_points(6, 2, rs), b = random_points(6, 2, rs);
  const double th = 0.7;
  Matrix rot(2, 2);
  rot << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  const double before = optimal_assignment(pairwise_cost(a, b, DistanceMetric::euclidean)).total_cost;
  const double after = optimal_assignment(pairwise_cost(a * rot, b * rot, DistanceMetric::euclidean)).total_cost;
  EXPECT_NEAR(before, after, 1e-9);
}

TEST(Impute, ExactCopyDonates) {
  const Dataset ds = toy_dataset({1, 0, 0});
  Matrix rep(3, 1);
  rep << 2.0, 5.0, 2.0;
  const MatchResult mr = impute_counterfactuals(ds, rep, DistanceMetric::euclidean);
  EXPECT_EQ(mr.cf_source[0], 2u);
  EXPECT_EQ(mr.cf_outcome[0], ds.y_f[2]);
  EXPECT_EQ(mr.cf_distance[0], 0.0);
}

TEST(Impute, OneTreatedThreeControls) {
  const Dataset ds = toy_dataset({0, 1, 0, 0});
  Matrix rep(4, 1);
  rep << 0.0, 1.0, 3.0, -4.0;
  const MatchResult mr = impute_counterfactuals(ds, rep, DistanceMetric::euclidean);
  ASSERT_EQ(mr.pairs.size(), 1u);
  EXPECT_EQ(mr.pairs[0], (std::pair<std::size_t, std::size_t>{1, 0}));
  for (std::size_t c : {0u, 2u, 3u}) EXPECT_EQ(mr.cf_source[c], 1u);
  EXPECT_DOUBLE_EQ(mr.pair_cost, 1.0);
}

TEST(Impute, DonorsMatchExhaustiveScan) {
  // Unpaired units take the nearest opposite-group unit (scan oracle); paired
  // units take their partner from a brute-force optimal assignment.
  RandomStream rs(8);
  for (int rep = 0; rep < 10; ++rep) {
    const Dataset ds = toy_dataset({1, 0, 0, 1, 0, 0});
    const Matrix r = random_points(6, 2, rs);
    const MatchResult mr = impute_counterfactuals(ds, r, DistanceMetric::euclidean);
    const std::vector<std::size_t> tr = {0, 3}, co = {1, 2, 4, 5};
    auto dist = [&](std::size_t i, std::size_t j) { return (r.row(i) - r.row(j)).norm(); };

    double best = 1e300;
    std::pair<std::size_t, std::size_t> best_pair;
    for (std::size_t x : co)
      for (std::size_t y : co) {
        if (x == y) continue;
        const double s = dist(0, x) + dist(3, y);
        if (s < best) best = s, best_pair = {x, y};
      }
    EXPECT_EQ(mr.cf_source[0], best_pair.first);
    EXPECT_EQ(mr.cf_source[3], best_pair.second);
    EXPECT_NEAR(mr.pair_cost, best / 2.0, 1e-12);

    for (std::size_t c : co) {
      if (c == best_pair.first || c == best_pair.second) {
        EXPECT_EQ(mr.cf_source[c], c == best_pair.first ? 0u : 3u);
        continue;
      }
      const std::size_t nn = dist(c, 0) <= dist(c, 3) ? 0 : 3;
      EXPECT_EQ(mr.cf_source[c], nn);
      EXPECT_EQ(mr.cf_outcome[c], ds.y_f[nn]);
      EXPECT_FALSE(mr.pair_partner[c]);
    }
    for (std::size_t i = 0; i < ds.n(); ++i) EXPECT_NE(ds.t[mr.cf_source[i]], ds.t[i]);
  }
}

TEST(Impute, PropensityNeedsScoresAndGroupsNeeded) {
  const Dataset ds = toy_dataset({1, 0, 0});
  const Matrix rep = Matrix::Zero(3, 1);
  EXPECT_THROW(impute_counterfactuals(ds, rep, DistanceMetric::propensity), std::invalid_argument);
  const std::vector<double> scores = {0.9, 0.2, 0.85};
  const MatchResult mr = impute_counterfactuals(ds, rep, DistanceMetric::propensity, scores);
  EXPECT_EQ(mr.cf_source[0], 2u);
  EXPECT_THROW(impute_counterfactuals(toy_dataset({1, 1}), Matrix::Zero(2, 1), DistanceMetric::euclidean),
               std::invalid_argument);
}

TEST(MatchReport, RoundTrip) {
  const Dataset ds = toy_dataset({0, 1, 0, 0});
  Matrix rep(4, 1);
  rep << 0.0, 1.0, 3.0, -4.0;
  const MatchResult mr = impute_counterfactuals(ds, rep, DistanceMetric::euclidean);
  const auto path = std::filesystem::temp_directory_path() / "fsrm_match_report.csv";
  write_match_report(ds, mr, path);
  const auto rows = read_match_report(path);
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(rows[i].unit_id, i);
    EXPECT_EQ(rows[i].cf_outcome, mr.cf_outcome[i]);
    EXPECT_EQ(rows[i].cf_source, mr.cf_source[i]);
    EXPECT_EQ(rows[i].paired, mr.pair_partner[i].has_value());
  }
  std::filesystem::remove(path);
}
