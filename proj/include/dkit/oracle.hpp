// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dkit/classical.hpp"
#include "dkit/problem.hpp"
#include "dkit/types.hpp"

namespace dkit {

struct OracleConfig {
  int max_iters = 200000;
  double eps_abs = 1e-9;   // ADMM stopping target
  double eps_rel = 1e-9;
  double rho = 0.1;        // initial splitting penalty; adapted by
                           // residual balancing
  double sigma = 1e-6;     // proximal regularization
  double relax = 1.6;      // over-relaxation
  int check_every = 25;
  bool adaptive_rho = true;
  bool polish = true;

  void validate() const;
};

enum class OracleStatus { solved, inaccurate };

struct OracleSolution {
  Vec y;
  OracleStatus status = OracleStatus::inaccurate;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double objective = 0.0;
  int iters = 0;
  bool polished = false;
};

/// Operator-splitting solve of min 1/2 y'Qy + p'y s.t. Ay = b, Gy <= h
/// (portfolio objectives are mapped to (2 Sigma, 0)). The returned point is
/// declared `solved` when the KKT residuals sit below 1e-7 (primal) and
/// 1e-6 (dual); otherwise `inaccurate` with the residuals attached.
OracleSolution qp_solve(const ProblemInstance& inst, const OracleConfig& cfg);

struct NonconvexReference {
  Vec y;
  SolveStatus status = SolveStatus::converged;
  double kkt = 0.0;
  double objective = 0.0;
};

/// Long-budget classical solve used as the reference point for the
/// sin-quadratic family. The result is a stationary point reached from y0,
/// not a certified global optimum; its KKT residual is reported alongside.
NonconvexReference nonconvex_reference(const ProblemInstance& inst,
                                       const Vec& y0);

}  // namespace dkit
