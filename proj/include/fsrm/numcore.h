#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace fsrm {

// Dense real matrix, row-major. Rows are units, columns are features.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Counter-based random stream. Draw i of a stream is a pure function of
// (seed, i), so a copied stream replays the same sequence and split()
// children never overlap their parent.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on (0, 1), never returns 0.
  double uniform_open();
  // Uniform integer in [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n);
  // Standard normal via Box-Muller.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  // Child stream keyed by `key`; does not advance this stream.
  RandomStream split(std::uint64_t key) const;
  RandomStream split(std::string_view key) const;

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

std::uint64_t mix64(std::uint64_t x);

// Phi(x). Throws std::invalid_argument for non-finite x.
double std_normal_cdf(double x);

// Random correlation matrix: A with iid uniform(0,1) entries, S = A A^T +
// dim * 1e-3 * I, rescaled to unit diagonal.
Matrix random_correlation_covariance(std::size_t dim, RandomStream& stream);

// Lower Cholesky factor. Throws std::invalid_argument if cov is not
// symmetric positive-definite.
Matrix cholesky_lower(const Matrix& cov);

// n draws from N(0, cov), one per row.
Matrix mvn_sample(std::size_t n, const Matrix& cov, RandomStream& stream);

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

double mean(std::span<const double> v);
// Population standard deviation (divides by n).
double stddev(std::span<const double> v);

}  // namespace fsrm
