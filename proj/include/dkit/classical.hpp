// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "dkit/penalty.hpp"
#include "dkit/problem.hpp"
#include "dkit/types.hpp"

namespace dkit {

enum class LineSearch { exact_grid, backtracking };

struct ClassicalConfig {
  PenaltyConfig penalty;
  int inner_iters = 2000;   // projected subgradient budget per outer step
  int max_outer = 2000;
  double kkt_tol = 1e-4;
  LineSearch line_search = LineSearch::exact_grid;
  int grid_points = 32;     // geometric grid over the step interval
  double active_tol = 1e-6;

  void validate() const;
};

/// First-order optimality residuals at a feasible point. Multipliers come
/// from a nonnegative least-squares fit on the active rows, so dual
/// feasibility holds by construction; `licq_ok` is false when the active
/// gradients are rank deficient (a Fritz-John situation).
struct KktReport {
  double stationarity = 0.0;  // || grad f + G_a' lambda + A' mu ||_2
  double comp_slack = 0.0;    // max_j |lambda_j g_j|
  double dual_feas = 0.0;     // max(0, -min lambda)
  double primal_eq = 0.0;
  double primal_ineq = 0.0;
  bool licq_ok = true;
  Vec lambda;  // all l rows, zeros off the active set
  Vec mu;
  Vec residual;  // projected Lagrangian gradient; its norm is `stationarity`

  double overall() const;
};

KktReport kkt_residual(const ProblemInstance& inst, const Vec& y,
                       double active_tol = 1e-6);

enum class SolveStatus { converged, max_outer, stalled };

struct ClassicalStep {
  double f = 0.0;
  double kkt = 0.0;
};

struct ClassicalResult {
  Vec y;
  SolveStatus status = SolveStatus::max_outer;
  std::vector<ClassicalStep> trace;  // one entry per visited iterate
  int outer_steps = 0;
};

/// Feasible descent loop: solve the penalized direction subproblem with the
/// projected subgradient method, line-search along the direction, repeat.
/// Every iterate stays feasible and f is nonincreasing along the trace.
ClassicalResult ufd_penalty_solve(const ProblemInstance& inst, const Vec& y0,
                                  const ClassicalConfig& cfg);

/// Nonnegative least squares min ||E x - f||, x >= 0 (Lawson-Hanson).
Vec nnls(const Mat& E, const Vec& f, int max_iter = 0);

}  // namespace dkit
