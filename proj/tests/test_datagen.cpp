#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "fsrm/datagen.h"
#include "fsrm/dataset.h"

using namespace fsrm;

namespace {

SyntheticSpec small_spec(std::uint64_t seed) {
  RandomStream rs(seed);
  SyntheticSpec s;
  s.n_confounders = 3;
  s.n_adjustment = 2;
  s.n_instruments = 2;
  s.n_irrelevant = 2;
  s.pool_treated = 200;
  s.pool_control = 200;
  s.draw_treated = 50;
  s.draw_control = 150;
  s.draw_weights(rs);
  return s;
}

std::vector<double> bias_of(const Dataset& ds, int group) {
  std::vector<double> out;
  for (std::size_t i = 0; i < ds.n(); ++i)
    if (ds.t[i] == group) out.push_back(std::abs((*ds.e0)[i] - 0.5));
  return out;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return d;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST(Generate, DefaultShape) {
  RandomStream rs(1);
  const SyntheticSpec spec = SyntheticSpec::with_random_weights(rs);
  const Dataset ds = generate_synthetic(spec, rs);
  EXPECT_EQ(ds.d(), 60u);
  EXPECT_EQ(ds.n(), 1000u);
  EXPECT_EQ(ds.n_treated(), 250u);
  EXPECT_EQ(ds.n_control(), 750u);
  ds.validate();
  ASSERT_TRUE(ds.block_labels);
  EXPECT_EQ(std::count(ds.block_labels->begin(), ds.block_labels->end(), BlockLabel::confounder), 15);
  EXPECT_EQ(std::count(ds.block_labels->begin(), ds.block_labels->end(), BlockLabel::irrelevant), 20);
}

TEST(Generate, ZeroTauMeansZeroEffect) {
  SyntheticSpec spec = small_spec(2);
  std::fill(spec.b_tau.begin(), spec.b_tau.end(), 0.0);
  RandomStream rs(3);
  const Dataset ds = generate_synthetic(spec, rs);
  const auto ite = ds.true_ite();
  for (double v : *ite) EXPECT_EQ(v, 0.0);
}

TEST(Generate, PropensityConsistentWithPoolTreatedFraction) {
  // Quota filling skews the pool away from the raw treated rate, but only
  // mildly when the quotas are balanced.
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    RandomStream rs(seed);
    SyntheticSpec spec = SyntheticSpec::with_random_weights(rs);
    const Dataset pool = generate_pool(spec, rs);
    for (double e : *pool.e0) {
      EXPECT_GT(e, 0.0);
      EXPECT_LT(e, 1.0);
    }
    // Mean e0 of the pool vs. treated fraction of the pool.
    EXPECT_NEAR(mean_of(*pool.e0), double(pool.n_treated()) / pool.n(), 0.1);
  }
}

TEST(Generate, NoiseHasRequestedScale) {
  SyntheticSpec spec = small_spec(4);
  spec.pool_treated = spec.pool_control = 5000;
  spec.noise_std = 0.7;
  RandomStream rs(5);
  const Dataset pool = generate_pool(spec, rs);
  std::vector<double> resid(pool.n());
  for (std::size_t i = 0; i < pool.n(); ++i)
    resid[i] = pool.y_f[i] - (pool.t[i] ? (*pool.mu1)[i] : (*pool.mu0)[i]);
  EXPECT_NEAR(mean(resid), 0.0, 0.03);
  EXPECT_NEAR(stddev(resid), 0.7, 0.07);
}

TEST(Generate, AssignmentIgnoresOutcomeWeights) {
  SyntheticSpec a = small_spec(6), b = a;
  for (auto& w : b.b_tau) w = 1.0 - w;
  for (auto& w : b.b_g) w *= 2.0;
  RandomStream ra(7), rb(7);
  const Dataset da = generate_pool(a, ra), db = generate_pool(b, rb);
  EXPECT_EQ(da.t, db.t);
  EXPECT_EQ(da.x, db.x);
}

TEST(Generate, DeterministicAndValidates) {
  const SyntheticSpec spec = small_spec(8);
  RandomStream r1(9), r2(9);
  const Dataset a = generate_synthetic(spec, r1), b = generate_synthetic(spec, r2);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.y_f, b.y_f);
  SyntheticSpec bad = spec;
  bad.b_a.pop_back();
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Generate, ConstantPropensityIndexIsAnError) {
  SyntheticSpec spec = small_spec(10);
  std::fill(spec.b_a.begin(), spec.b_a.end(), 0.0);
  RandomStream rs(1);
  EXPECT_THROW(generate_pool(spec, rs), std::runtime_error);
}

TEST(Resample, UnbiasedMatchesPoolDistribution) {
  RandomStream rs(11);
  const SyntheticSpec spec = SyntheticSpec::with_random_weights(rs);
  const Dataset pool = generate_pool(spec, rs);
  const Dataset draw = biased_resample(pool, 0.0, 250, 750, rs);
  EXPECT_LT(ks_statistic(bias_of(draw, 0), bias_of(pool, 0)), 0.1);
}

TEST(Resample, FullBiasTakesTopUnits) {
  RandomStream rs(12);
  const Dataset pool = generate_pool(small_spec(12), rs);
  const Dataset draw = biased_resample(pool, 1.0, 50, 150, rs);
  for (int group : {0, 1}) {
    std::vector<double> all = bias_of(pool, group), got = bias_of(draw, group);
    std::sort(all.rbegin(), all.rend());
    std::sort(got.rbegin(), got.rend());
    all.resize(got.size());
    EXPECT_EQ(all, got);
  }
}

TEST(Resample, HalfBiasLiesBetween) {
  double m0 = 0, m5 = 0, m1 = 0;
  RandomStream base(13);
  const Dataset pool = generate_pool(small_spec(13), base);
  for (std::uint64_t s = 0; s < 100; ++s) {
    RandomStream a(s), b(s), c(s);
    m0 += mean_of(bias_of(biased_resample(pool, 0.0, 50, 150, a), 0));
    m5 += mean_of(bias_of(biased_resample(pool, 0.5, 50, 150, b), 0));
    m1 += mean_of(bias_of(biased_resample(pool, 1.0, 50, 150, c), 0));
  }
  EXPECT_LT(m0, m5);
  EXPECT_LT(m5, m1);
}

TEST(Resample, Errors) {
  RandomStream rs(14);
  Dataset pool = generate_pool(small_spec(14), rs);
  EXPECT_THROW(biased_resample(pool, 0.0, 500, 10, rs), std::invalid_argument);
  pool.e0.reset();
  EXPECT_THROW(biased_resample(pool, 0.0, 5, 5, rs), std::invalid_argument);
}

TEST(Augment, KeepsOriginalColumns) {
  Dataset ds;
  RandomStream rs(15);
  ds.x = mvn_sample(747, Matrix::Identity(25, 25), rs);
  for (std::size_t i = 0; i < 747; ++i) {
    ds.t.push_back(i % 5 == 0);
    ds.y_f.push_back(0.1 * i);
  }
  const Dataset out = augment_irrelevant(ds, 35, rs);
  EXPECT_EQ(out.d(), 60u);
  EXPECT_EQ(out.x.leftCols(25), ds.x);
  EXPECT_EQ(out.t, ds.t);
  EXPECT_EQ(out.y_f, ds.y_f);
  EXPECT_EQ((*out.block_labels)[0], BlockLabel::unknown);
  EXPECT_EQ((*out.block_labels)[59], BlockLabel::irrelevant);

  const Dataset one = augment_irrelevant(ds, 1, rs);
  const Vector col = one.x.col(25);
  std::vector<double> v(col.data(), col.data() + col.size());
  EXPECT_NEAR(stddev(v) * stddev(v), 1.0, 0.15);

  RandomStream a(3), b(3);
  EXPECT_EQ(augment_irrelevant(ds, 4, a).x, augment_irrelevant(ds, 4, b).x);
  EXPECT_THROW(augment_irrelevant(ds, 0, a), std::invalid_argument);
}

TEST(Csv, MinimalFile) {
  const Dataset ds = parse_dataset_csv("x0,t,yf\n0.5,1,2\n-1,0,3\n");
  EXPECT_EQ(ds.n(), 2u);
  EXPECT_EQ(ds.d(), 1u);
  EXPECT_EQ(ds.t, (std::vector<int>{1, 0}));
  EXPECT_FALSE(ds.true_ite());
}

TEST(Csv, PotentialOutcomesGiveTruth) {
  const Dataset ds = parse_dataset_csv("x0,x1,t,yf,mu0,mu1\n1,2,1,3,1,4\n0,0,0,1,1,1.5\n");
  ASSERT_TRUE(ds.true_ite());
  EXPECT_EQ(*ds.true_ite(), (std::vector<double>{3.0, 0.5}));
}

TEST(Csv, RoundTripIsExact) {
  RandomStream rs(16);
  const Dataset ds = generate_synthetic(small_spec(16), rs);
  const Dataset back = parse_dataset_csv(format_dataset_csv(ds));
  EXPECT_EQ(back.x, ds.x);
  EXPECT_EQ(back.t, ds.t);
  EXPECT_EQ(back.y_f, ds.y_f);
  EXPECT_EQ(back.y_cf, ds.y_cf);
  EXPECT_EQ(back.mu0, ds.mu0);
  EXPECT_EQ(back.mu1, ds.mu1);
  EXPECT_EQ(back.e0, ds.e0);
  EXPECT_EQ(back.block_labels, ds.block_labels);
  EXPECT_EQ(format_dataset_csv(back), format_dataset_csv(ds));

  const auto path = std::filesystem::temp_directory_path() / "fsrm_roundtrip.csv";
  write_dataset(ds, path);
  EXPECT_EQ(read_dataset(path).x, ds.x);
  std::filesystem::remove(path);
}

TEST(Csv, ErrorsNameTheProblem) {
  auto message = [](std::string_view text) {
    try {
      parse_dataset_csv(text);
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("x0,yf\n1,2\n").find("t"), std::string::npos);
  EXPECT_NE(message("x0,t,yf\n1,2,3\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("x0,t,yf\n1,1\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("x0,t,yf\n1,1,abc\n").find("column"), std::string::npos);
}
