#include "fsrm/numcore.h"

#include <cmath>
#include <numbers>

namespace fsrm {

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t RandomStream::next_u64() {
  std::uint64_t c = counter_++;
  return mix64(mix64(seed_) ^ (c * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
}

double RandomStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform_open() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::size_t RandomStream::uniform_index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  // Lemire's multiply-shift with rejection.
  const std::uint64_t range = n;
  std::uint64_t x = next_u64();
  __uint128_t m = static_cast<__uint128_t>(x) * range;
  std::uint64_t low = static_cast<std::uint64_t>(m);
  if (low < range) {
    const std::uint64_t threshold = (0 - range) % range;
    while (low < threshold) {
      x = next_u64();
      m = static_cast<__uint128_t>(x) * range;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::size_t>(m >> 64);
}

double RandomStream::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  const double u1 = uniform_open();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_normal_ = true;
  return r * std::cos(theta);
}

RandomStream RandomStream::split(std::uint64_t key) const {
  return RandomStream(mix64(mix64(seed_ ^ 0xA0761D6478BD642FULL) + mix64(key)));
}

RandomStream RandomStream::split(std::string_view key) const {
  // FNV-1a
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char ch : key) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001B3ULL;
  }
  return split(h);
}

double std_normal_cdf(double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("std_normal_cdf: non-finite input");
  // Negative arguments go through the symmetry identity so that
  // Phi(-x) == 1 - Phi(x) holds bit for bit.
  if (x < 0.0) return 1.0 - std_normal_cdf(-x);
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

Matrix random_correlation_covariance(std::size_t dim, RandomStream& stream) {
  if (dim == 0) throw std::invalid_argument("random_correlation_covariance: dim must be >= 1");
  const auto n = static_cast<Eigen::Index>(dim);
  Matrix a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = stream.uniform();
  Matrix s = a * a.transpose();
  s.diagonal().array() += static_cast<double>(dim) * 1e-3;
  const Vector inv_sd = s.diagonal().array().rsqrt();
  Matrix corr = inv_sd.asDiagonal() * s * inv_sd.asDiagonal();
  // Exact symmetry and unit diagonal.
  corr = 0.5 * (corr + corr.transpose()).eval();
  corr.diagonal().setOnes();
  return corr;
}

Matrix cholesky_lower(const Matrix& cov) {
  const Eigen::Index n = cov.rows();
  if (cov.cols() != n) throw std::invalid_argument("cholesky: matrix is not square");
  if (!cov.allFinite()) throw std::invalid_argument("cholesky: non-finite entries");
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw std::invalid_argument("cholesky: matrix is not symmetric");
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double diag = cov(j, j);
    for (Eigen::Index k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0))
      throw std::invalid_argument("cholesky: matrix is not positive-definite (pivot " +
                                  std::to_string(j) + ")");
    l(j, j) = std::sqrt(diag);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double v = cov(i, j);
      for (Eigen::Index k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / l(j, j);
    }
  }
  return l;
}

Matrix mvn_sample(std::size_t n, const Matrix& cov, RandomStream& stream) {
  const Matrix l = cholesky_lower(cov);
  Matrix z(static_cast<Eigen::Index>(n), cov.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = stream.normal();
  return z * l.transpose();
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace fsrm
