#include "fsrm/balance.h"

#include <cmath>
#include <stdexcept>

namespace fsrm {

namespace {

using Array = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kMarginalTol = 1e-6;

// out_i = -eps * log sum_j exp(z_ij), z = (pot_j - C_ij)/eps + log w
Vector soft_min_rows(const Array& z, double eps) {
  const Vector m = z.rowwise().maxCoeff();
  const Vector s = (z.colwise() - m.array()).exp().rowwise().sum();
  return -eps * (m.array() + s.array().log()).matrix();
}

// Row-update weights pi_ij = b exp((g_j - C_ij + f_i)/eps); rows sum to 1.
Array row_weights(const Array& c, const Vector& f, const Vector& g, double log_b, double eps) {
  Array z = (-c).rowwise() + g.transpose().array();
  z = (z.colwise() + f.array()) / eps + log_b;
  return z.exp();
}

// Column-update weights sigma_ij = a exp((f_i - C_ij + g_j)/eps); columns sum to 1.
Array col_weights(const Array& c, const Vector& f, const Vector& g, double log_a, double eps) {
  return row_weights(c, f, g, log_a, eps);
}

double dual_objective(const Array& c, const Vector& f, const Vector& g, double log_a, double log_b,
                      double eps) {
  const double a = std::exp(log_a), b = std::exp(log_b);
  const Array z = ((-c).rowwise() + g.transpose().array()).colwise() + f.array();
  const double mass = (z / eps).exp().sum() * a * b;
  return a * f.sum() + b * g.sum() - eps * (mass - 1.0);
}

}  // namespace

double TransportPlan::max_marginal_error() const {
  if (plan.size() == 0) return 0.0;
  const double a = 1.0 / static_cast<double>(plan.rows());
  const double b = 1.0 / static_cast<double>(plan.cols());
  const double rows = (plan.rowwise().sum().array() - a).abs().maxCoeff();
  const double cols = (plan.colwise().sum().array() - b).abs().maxCoeff();
  return std::max(rows, cols);
}

Matrix euclidean_cost(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("euclidean_cost: point sets have different dimensions");
  Matrix c(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) c(i, j) = (a.row(i) - b.row(j)).norm();
  return c;
}

TransportPlan sinkhorn_wasserstein(const Matrix& rep_treated, const Matrix& rep_control, double eps,
                                   std::size_t iters) {
  if (rep_treated.rows() == 0 || rep_control.rows() == 0)
    throw std::invalid_argument("sinkhorn_wasserstein: empty point set");
  if (rep_treated.cols() != rep_control.cols())
    throw std::invalid_argument("sinkhorn_wasserstein: point sets have different dimensions");
  if (!(eps > 0.0) || !std::isfinite(eps))
    throw std::invalid_argument("sinkhorn_wasserstein: eps must be positive");
  if (iters == 0) throw std::invalid_argument("sinkhorn_wasserstein: iters must be >= 1");

  const Eigen::Index nt = rep_treated.rows(), nc = rep_control.rows();
  const double log_a = -std::log(static_cast<double>(nt));
  const double log_b = -std::log(static_cast<double>(nc));

  TransportPlan tp;
  tp.eps = eps;
  tp.cost_matrix = euclidean_cost(rep_treated, rep_control);
  const Array c = tp.cost_matrix.array();

  Vector f = Vector::Zero(nt), g = Vector::Zero(nc);
  tp.f_trace.resize(static_cast<Eigen::Index>(iters), nt);
  tp.g_trace.resize(static_cast<Eigen::Index>(iters), nc);
  tp.dual_history.reserve(iters);
  for (std::size_t k = 0; k < iters; ++k) {
    f = soft_min_rows(((-c).rowwise() + g.transpose().array()) / eps + log_b, eps);
    const Array zt = ((-c).colwise() + f.array()).transpose() / eps + log_a;
    g = soft_min_rows(zt, eps);
    tp.f_trace.row(static_cast<Eigen::Index>(k)) = f.transpose();
    tp.g_trace.row(static_cast<Eigen::Index>(k)) = g.transpose();
    tp.dual_history.push_back(dual_objective(c, f, g, log_a, log_b, eps));
  }
  tp.iterations_used = iters;
  tp.f = f;
  tp.g = g;
  tp.plan = (row_weights(c, f, g, log_a + log_b, eps)).matrix();
  tp.cost = (tp.plan.array() * c).sum();
  tp.converged = tp.max_marginal_error() < kMarginalTol;
  return tp;
}

WassersteinGradient wasserstein_grad(const TransportPlan& tp, const Matrix& rep_treated,
                                     const Matrix& rep_control, WassGradMode mode) {
  const Eigen::Index nt = rep_treated.rows(), nc = rep_control.rows();
  if (tp.plan.rows() != nt || tp.plan.cols() != nc)
    throw std::invalid_argument("wasserstein_grad: plan does not match the point sets");
  const Array c = tp.cost_matrix.array();
  const double eps = tp.eps;

  Array dc;
  if (mode == WassGradMode::envelope) {
    dc = tp.plan.array();
  } else {
    const double log_a = -std::log(static_cast<double>(nt));
    const double log_b = -std::log(static_cast<double>(nc));
    const Array pc = tp.plan.array() * c;
    dc = tp.plan.array() * (1.0 - c / eps);
    Vector f_bar = pc.rowwise().sum().matrix() / eps;
    Vector g_bar = pc.colwise().sum().transpose().matrix() / eps;

    const auto iters = static_cast<Eigen::Index>(tp.iterations_used);
    for (Eigen::Index k = iters - 1; k >= 0; --k) {
      const Vector f_k = tp.f_trace.row(k).transpose();
      const Vector g_k = tp.g_trace.row(k).transpose();
      const Vector g_prev = k > 0 ? Vector(tp.g_trace.row(k - 1).transpose()) : Vector::Zero(nc);

      // g_k = -eps LSE_i((f_k,i - C_ij)/eps + log a)
      const Array sigma = col_weights(c, f_k, g_k, log_a, eps);
      dc += sigma.rowwise() * g_bar.transpose().array();
      f_bar -= (sigma.matrix() * g_bar);

      // f_k = -eps LSE_j((g_prev,j - C_ij)/eps + log b)
      const Array pi = row_weights(c, f_k, g_prev, log_b, eps);
      dc += pi.colwise() * f_bar.array();
      g_bar = -(pi.matrix().transpose() * f_bar);
      f_bar.setZero();
    }
  }

  WassersteinGradient out{Matrix::Zero(nt, rep_treated.cols()), Matrix::Zero(nc, rep_control.cols())};
  for (Eigen::Index i = 0; i < nt; ++i) {
    for (Eigen::Index j = 0; j < nc; ++j) {
      const double dist = tp.cost_matrix(i, j);
      if (dist <= 0.0) continue;  // subgradient 0 at coincident points
      const auto diff = (rep_treated.row(i) - rep_control.row(j)) * (dc(i, j) / dist);
      out.d_treated.row(i) += diff;
      out.d_control.row(j) -= diff;
    }
  }
  return out;
}

}  // namespace fsrm
