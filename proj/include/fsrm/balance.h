#pragma once

#include <cstddef>
#include <vector>

#include "fsrm/numcore.h"

namespace fsrm {

enum class WassGradMode { unrolled, envelope };

// Entropic transport plan between uniform empirical measures on the treated
// (rows) and control (columns) representations.
struct TransportPlan {
  Matrix plan;        // n_t x n_c masses
  Matrix cost_matrix; // pairwise Euclidean distances
  double cost = 0.0;  // <plan, cost_matrix>
  bool converged = false;
  std::size_t iterations_used = 0;
  double eps = 0.0;
  // Dual potentials after the final iteration.
  Vector f, g;
  // Dual objective after each iteration.
  std::vector<double> dual_history;
  // Potentials after every iteration; row k holds iteration k+1. Needed for
  // differentiating through the iterations.
  Matrix f_trace, g_trace;

  double max_marginal_error() const;
};

// Pairwise Euclidean distances between rows.
Matrix euclidean_cost(const Matrix& a, const Matrix& b);

// Log-domain Sinkhorn, `iters` iterations of (row update, column update).
// `converged` means both marginals are within 1e-6 of uniform.
TransportPlan sinkhorn_wasserstein(const Matrix& rep_treated, const Matrix& rep_control, double eps,
                                   std::size_t iters);

struct WassersteinGradient {
  Matrix d_treated;
  Matrix d_control;
};

// Gradient of plan.cost with respect to both point sets. Unrolled mode
// back-propagates through every Sinkhorn iteration; envelope mode holds the
// plan fixed.
WassersteinGradient wasserstein_grad(const TransportPlan& plan, const Matrix& rep_treated,
                                     const Matrix& rep_control,
                                     WassGradMode mode = WassGradMode::unrolled);

}  // namespace fsrm
