#include "fsrm/datagen.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fsrm {

namespace {

// Chunks of candidate units generated before giving up on filling the pool.
constexpr std::size_t kMaxPoolChunks = 10000;

Matrix hcat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a;
  out.rightCols(b.cols()) = b;
  return out;
}

Vector project(const Matrix& block, const std::vector<double>& weights) {
  return block * Eigen::Map<const Vector>(weights.data(), static_cast<Eigen::Index>(weights.size()));
}

}  // namespace

void SyntheticSpec::validate() const {
  const std::size_t ca = n_confounders + n_adjustment;
  const std::size_t cz = n_confounders + n_instruments;
  if (b_tau.size() != ca)
    throw std::invalid_argument("SyntheticSpec: b_tau has length " + std::to_string(b_tau.size()) +
                                ", expected " + std::to_string(ca));
  if (b_g.size() != ca)
    throw std::invalid_argument("SyntheticSpec: b_g has length " + std::to_string(b_g.size()) +
                                ", expected " + std::to_string(ca));
  if (b_a.size() != cz)
    throw std::invalid_argument("SyntheticSpec: b_a has length " + std::to_string(b_a.size()) +
                                ", expected " + std::to_string(cz));
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
    throw std::invalid_argument("SyntheticSpec: noise_std must be finite and >= 0");
  if (n_covariates() == 0) throw std::invalid_argument("SyntheticSpec: no covariates");
  if (draw_treated > pool_treated || draw_control > pool_control)
    throw std::invalid_argument("SyntheticSpec: draw sizes exceed pool sizes");
}

SyntheticSpec SyntheticSpec::with_random_weights(RandomStream& stream) {
  SyntheticSpec spec;
  spec.draw_weights(stream);
  return spec;
}

void SyntheticSpec::draw_weights(RandomStream& stream) {
  const std::size_t ca = n_confounders + n_adjustment;
  const std::size_t cz = n_confounders + n_instruments;
  auto draw = [&](std::size_t len) {
    std::vector<double> w(len);
    for (auto& v : w) v = stream.uniform();
    return w;
  };
  b_tau = draw(ca);
  b_g = draw(ca);
  b_a = draw(cz);
}

Dataset generate_pool(const SyntheticSpec& spec, RandomStream& stream) {
  spec.validate();
  const std::size_t pool_n = spec.pool_treated + spec.pool_control;
  const std::size_t d = spec.n_covariates();

  auto block_cov = [&](std::size_t dim) {
    return dim == 0 ? Matrix(0, 0) : random_correlation_covariance(dim, stream);
  };
  const Matrix cov_c = block_cov(spec.n_confounders);
  const Matrix cov_a = block_cov(spec.n_adjustment);
  const Matrix cov_z = block_cov(spec.n_instruments);
  const Matrix cov_i = block_cov(spec.n_irrelevant);

  auto sample_block = [&](std::size_t n, const Matrix& cov) {
    return cov.rows() == 0 ? Matrix(static_cast<Eigen::Index>(n), 0) : mvn_sample(n, cov, stream);
  };

  Dataset pool;
  pool.x.resize(static_cast<Eigen::Index>(pool_n), static_cast<Eigen::Index>(d));
  pool.t.reserve(pool_n);
  pool.y_f.reserve(pool_n);
  std::vector<double> y_cf, mu0, mu1, e0;

  const std::size_t chunk = std::max<std::size_t>(pool_n, 1);
  double a_mean = 0.0, a_sd = 0.0;
  std::size_t got_treated = 0, got_control = 0;

  for (std::size_t round = 0; got_treated < spec.pool_treated || got_control < spec.pool_control;
       ++round) {
    if (round == kMaxPoolChunks)
      throw std::runtime_error("generate_pool: could not fill group quotas after " +
                               std::to_string(kMaxPoolChunks * chunk) + " candidate units");
    const Matrix c = sample_block(chunk, cov_c);
    const Matrix a = sample_block(chunk, cov_a);
    const Matrix z = sample_block(chunk, cov_z);
    const Matrix irr = sample_block(chunk, cov_i);
    std::vector<double> u(chunk), eps(chunk);
    for (auto& v : u) v = stream.uniform();
    for (auto& v : eps) v = stream.normal();

    const Matrix ca = hcat(c, a);
    const Matrix cz = hcat(c, z);
    const Vector tau = project(ca, spec.b_tau).array().sin().square();
    const Vector g = project(ca, spec.b_g).array().cos().square();
    const Vector index = project(cz, spec.b_a).array().sin();

    if (round == 0) {
      std::span<const double> idx(index.data(), static_cast<std::size_t>(index.size()));
      a_mean = mean(idx);
      a_sd = stddev(idx);
      if (!(a_sd > 0.0))
        throw std::runtime_error("generate_pool: propensity index a = sin((C,Z) b_a) is constant (a = " +
                                 format_double(a_mean) + "), standardization is singular");
    }

    for (std::size_t i = 0; i < chunk; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const double p = std_normal_cdf((index(row) - a_mean) / a_sd);
      const int treated = u[i] < p ? 1 : 0;
      if (treated ? got_treated >= spec.pool_treated : got_control >= spec.pool_control) continue;
      (treated ? got_treated : got_control)++;

      const auto out = static_cast<Eigen::Index>(pool.t.size());
      Eigen::Index col = 0;
      for (const Matrix* block : {&c, &a, &z, &irr}) {
        pool.x.row(out).segment(col, block->cols()) = block->row(row);
        col += block->cols();
      }
      const double noise = spec.noise_std * eps[i];
      pool.t.push_back(treated);
      pool.y_f.push_back(tau(row) * treated + g(row) + noise);
      y_cf.push_back(tau(row) * (1 - treated) + g(row) + noise);
      mu0.push_back(g(row));
      mu1.push_back(g(row) + tau(row));
      e0.push_back(p);
    }
  }

  pool.y_cf = std::move(y_cf);
  pool.mu0 = std::move(mu0);
  pool.mu1 = std::move(mu1);
  pool.e0 = std::move(e0);
  std::vector<BlockLabel> labels;
  labels.insert(labels.end(), spec.n_confounders, BlockLabel::confounder);
  labels.insert(labels.end(), spec.n_adjustment, BlockLabel::adjustment);
  labels.insert(labels.end(), spec.n_instruments, BlockLabel::instrument);
  labels.insert(labels.end(), spec.n_irrelevant, BlockLabel::irrelevant);
  pool.block_labels = std::move(labels);
  return pool;
}

Dataset generate_synthetic(const SyntheticSpec& spec, RandomStream& stream) {
  const Dataset pool = generate_pool(spec, stream);
  return biased_resample(pool, 0.0, spec.draw_treated, spec.draw_control, stream);
}

Dataset biased_resample(const Dataset& pool, double q, std::size_t draw_treated,
                        std::size_t draw_control, RandomStream& stream) {
  if (!pool.e0) throw std::invalid_argument("biased_resample: pool has no e0 column");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("biased_resample: q must lie in [0, 1]");

  std::vector<std::size_t> selected;
  for (int group : {1, 0}) {
    const std::size_t want = group == 1 ? draw_treated : draw_control;
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < pool.n(); ++i)
      if (pool.t[i] == group) members.push_back(i);
    if (want > members.size())
      throw std::invalid_argument("biased_resample: requested " + std::to_string(want) +
                                  " units from a group of " + std::to_string(members.size()));

    // Greedy order: decreasing |e0 - 0.5|, ties by pool index.
    std::vector<std::size_t> by_bias = members;
    std::stable_sort(by_bias.begin(), by_bias.end(), [&](std::size_t l, std::size_t r) {
      return std::abs((*pool.e0)[l] - 0.5) > std::abs((*pool.e0)[r] - 0.5);
    });
    std::vector<char> taken(pool.n(), 0);
    std::size_t greedy_pos = 0;
    std::vector<std::size_t> remaining = members;  // unordered set of not-yet-drawn units

    for (std::size_t k = 0; k < want; ++k) {
      std::size_t pick;
      if (stream.bernoulli(q)) {
        while (taken[by_bias[greedy_pos]]) ++greedy_pos;
        pick = by_bias[greedy_pos];
        remaining.erase(std::find(remaining.begin(), remaining.end(), pick));
      } else {
        const std::size_t slot = stream.uniform_index(remaining.size());
        pick = remaining[slot];
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(slot));
      }
      taken[pick] = 1;
      selected.push_back(pick);
    }
  }
  std::sort(selected.begin(), selected.end());
  return pool.subset(selected);
}

Dataset augment_irrelevant(const Dataset& ds, std::size_t k, RandomStream& stream) {
  if (k == 0) throw std::invalid_argument("augment_irrelevant: k must be >= 1");
  const Matrix cov = random_correlation_covariance(k, stream);
  const Matrix extra = mvn_sample(ds.n(), cov, stream);
  Dataset out = ds;
  out.x.resize(ds.x.rows(), ds.x.cols() + static_cast<Eigen::Index>(k));
  out.x.leftCols(ds.x.cols()) = ds.x;
  out.x.rightCols(extra.cols()) = extra;
  std::vector<BlockLabel> labels =
      ds.block_labels ? *ds.block_labels : std::vector<BlockLabel>(ds.d(), BlockLabel::unknown);
  labels.insert(labels.end(), k, BlockLabel::irrelevant);
  out.block_labels = std::move(labels);
  return out;
}

}  // namespace fsrm
