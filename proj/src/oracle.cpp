// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#include "dkit/oracle.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dkit/errors.hpp"

namespace dkit {

void OracleConfig::validate() const {
  if (max_iters < 1) throw ConfigError("oracle max_iters must be >= 1");
  if (!(eps_abs > 0) || !(eps_rel >= 0))
    throw ConfigError("oracle tolerances must be positive");
  if (!(rho > 0) || !(sigma > 0))
    throw ConfigError("oracle rho and sigma must be positive");
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSolvedPrimalTol = 1e-7;
constexpr double kSolvedDualTol = 1e-6;

struct SplitProblem {
  Mat P;
  Vec q;
  Mat C;       // stacked [A; G]
  Vec lower;   // b over equality rows, -inf over inequality rows
  Vec upper;   // b over equality rows, h over inequality rows
  Index m = 0;  // equality row count
};

SplitProblem split_problem(const ProblemInstance& inst) {
  const ObjectiveKind kind = inst.objective.kind;
  if (kind == ObjectiveKind::sin_quadratic)
    throw std::invalid_argument("qp_solve handles convex kinds only");
  SplitProblem sp;
  if (kind == ObjectiveKind::portfolio_risk) {
    sp.P = 2.0 * inst.objective.Q;
    sp.q = Vec::Zero(inst.dim());
  } else {
    sp.P = inst.objective.Q;
    sp.q = inst.objective.p;
  }
  const LinearConstraints& c = inst.constraints;
  sp.m = c.n_eq();
  const Index rows = c.n_eq() + c.n_ineq();
  sp.C.resize(rows, inst.dim());
  sp.C.topRows(c.n_eq()) = c.A;
  sp.C.bottomRows(c.n_ineq()) = c.G;
  sp.lower.resize(rows);
  sp.upper.resize(rows);
  sp.lower.head(c.n_eq()) = c.b_eq;
  sp.upper.head(c.n_eq()) = c.b_eq;
  sp.lower.tail(c.n_ineq()).setConstant(-kInf);
  sp.upper.tail(c.n_ineq()) = c.h;
  return sp;
}

Vec rho_vector(const SplitProblem& sp, double rho_bar) {
  Vec rho = Vec::Constant(sp.C.rows(), rho_bar);
  rho.head(sp.m).setConstant(1e3 * rho_bar);  // stiffer on equality rows
  return rho;
}

struct Residuals {
  double prim = 0.0, dual = 0.0;
  double prim_scaled = 0.0, dual_scaled = 0.0;
};

Residuals residuals(const SplitProblem& sp, const Vec& x, const Vec& z,
                    const Vec& w, double eps_abs, double eps_rel) {
  Residuals r;
  const Vec Cx = sp.C * x;
  const Vec Px = sp.P * x;
  const Vec Ctw = sp.C.transpose() * w;
  r.prim = (Cx - z).cwiseAbs().maxCoeff();
  r.dual = (Px + sp.q + Ctw).cwiseAbs().maxCoeff();
  const double prim_scale = std::max(
      {Cx.cwiseAbs().maxCoeff(), z.cwiseAbs().maxCoeff(), 1.0});
  const double dual_scale =
      std::max({Px.cwiseAbs().maxCoeff(), sp.q.cwiseAbs().maxCoeff(),
                Ctw.cwiseAbs().maxCoeff(), 1.0});
  r.prim_scaled = r.prim / (eps_abs + eps_rel * prim_scale);
  r.dual_scaled = r.dual / (eps_abs + eps_rel * dual_scale);
  return r;
}

/// Equality-constrained KKT re-solve on the active set, then iterative
/// refinement against the unregularized system.
bool polish(const SplitProblem& sp, const Vec& w, OracleSolution* sol) {
  const Index n = sp.P.rows();
  const double w_scale = std::max(1.0, w.cwiseAbs().maxCoeff());
  std::vector<Index> active;
  for (Index i = 0; i < sp.C.rows(); ++i) {
    if (i < sp.m || w[i] > 1e-7 * w_scale) active.push_back(i);
  }
  const Index a = static_cast<Index>(active.size());
  const Index dim = n + a;

  Mat kkt = Mat::Zero(dim, dim);
  kkt.topLeftCorner(n, n) = sp.P;
  kkt.topLeftCorner(n, n).diagonal().array() += 1e-9;
  for (Index k = 0; k < a; ++k) {
    kkt.block(n + k, 0, 1, n) = sp.C.row(active[static_cast<std::size_t>(k)]);
    kkt.block(0, n + k, n, 1) =
        sp.C.row(active[static_cast<std::size_t>(k)]).transpose();
    kkt(n + k, n + k) = -1e-9;
  }
  Vec rhs(dim);
  rhs.head(n) = -sp.q;
  for (Index k = 0; k < a; ++k)
    rhs[n + k] = sp.upper[active[static_cast<std::size_t>(k)]];

  Eigen::PartialPivLU<Mat> lu(kkt);
  Vec sol_vec = lu.solve(rhs);
  // refinement vs the unregularized KKT matrix
  Mat kkt0 = kkt;
  kkt0.topLeftCorner(n, n).diagonal().array() -= 1e-9;
  for (Index k = 0; k < a; ++k) kkt0(n + k, n + k) = 0.0;
  for (int round = 0; round < 3; ++round)
    sol_vec += lu.solve(rhs - kkt0 * sol_vec);

  const Vec y = sol_vec.head(n);
  Vec w_polished = Vec::Zero(sp.C.rows());
  for (Index k = 0; k < a; ++k)
    w_polished[active[static_cast<std::size_t>(k)]] = sol_vec[n + k];

  // multipliers on inequality rows must stay nonnegative
  for (Index i = sp.m; i < sp.C.rows(); ++i)
    if (w_polished[i] < -1e-9) return false;

  const Vec Cx = sp.C * y;
  double prim = 0.0;
  for (Index i = 0; i < sp.C.rows(); ++i) {
    prim = std::max(prim, Cx[i] - sp.upper[i]);
    if (sp.lower[i] > -kInf) prim = std::max(prim, sp.lower[i] - Cx[i]);
  }
  const double dual =
      (sp.P * y + sp.q + sp.C.transpose() * w_polished).cwiseAbs().maxCoeff();
  if (prim <= std::max(sol->primal_residual, 1e-10) &&
      dual <= std::max(sol->dual_residual, 1e-10)) {
    sol->y = y;
    sol->primal_residual = std::max(prim, 0.0);
    sol->dual_residual = dual;
    sol->polished = true;
    return true;
  }
  return false;
}

}  // namespace

OracleSolution qp_solve(const ProblemInstance& inst, const OracleConfig& cfg) {
  cfg.validate();
  const SplitProblem sp = split_problem(inst);
  const Index n = sp.P.rows();
  const Index rows = sp.C.rows();

  double rho_bar = cfg.rho;
  Vec rho = rho_vector(sp, rho_bar);
  Mat kkt = sp.P + cfg.sigma * Mat::Identity(n, n) +
            sp.C.transpose() * rho.asDiagonal() * sp.C;
  Eigen::LDLT<Mat> ldlt(kkt);

  Vec x = Vec::Zero(n), z = Vec::Zero(rows), w = Vec::Zero(rows);
  for (Index i = 0; i < rows; ++i)
    z[i] = std::min(std::max(0.0, sp.lower[i]), sp.upper[i]);

  OracleSolution sol;
  int iter = 0;
  for (; iter < cfg.max_iters; ++iter) {
    const Vec rhs =
        cfg.sigma * x - sp.q + sp.C.transpose() * (rho.cwiseProduct(z) - w);
    const Vec x_tilde = ldlt.solve(rhs);
    const Vec zeta = sp.C * x_tilde;
    x = cfg.relax * x_tilde + (1.0 - cfg.relax) * x;
    const Vec z_shift = cfg.relax * zeta + (1.0 - cfg.relax) * z;
    const Vec z_cand = z_shift + w.cwiseQuotient(rho);
    Vec z_next(rows);
    for (Index i = 0; i < rows; ++i)
      z_next[i] = std::min(std::max(z_cand[i], sp.lower[i]), sp.upper[i]);
    w += rho.cwiseProduct(z_shift - z_next);
    z = z_next;

    if ((iter + 1) % cfg.check_every == 0) {
      const Residuals r = residuals(sp, x, z, w, cfg.eps_abs, cfg.eps_rel);
      if (r.prim_scaled <= 1.0 && r.dual_scaled <= 1.0) {
        ++iter;
        break;
      }
      if (cfg.adaptive_rho && r.dual_scaled > 0) {
        const double ratio = std::sqrt(r.prim_scaled / r.dual_scaled);
        if (ratio > 5.0 || ratio < 0.2) {
          rho_bar = std::clamp(rho_bar * ratio, 1e-6, 1e6);
          rho = rho_vector(sp, rho_bar);
          kkt = sp.P + cfg.sigma * Mat::Identity(n, n) +
                sp.C.transpose() * rho.asDiagonal() * sp.C;
          ldlt.compute(kkt);
        }
      }
    }
  }

  sol.y = x;
  sol.iters = iter;
  const Residuals r = residuals(sp, x, z, w, cfg.eps_abs, cfg.eps_rel);
  sol.primal_residual = r.prim;
  sol.dual_residual = r.dual;
  if (cfg.polish) polish(sp, w, &sol);
  sol.objective = eval_objective(inst, sol.y);
  sol.status = (sol.primal_residual <= kSolvedPrimalTol &&
                sol.dual_residual <= kSolvedDualTol)
                   ? OracleStatus::solved
                   : OracleStatus::inaccurate;
  return sol;
}

NonconvexReference nonconvex_reference(const ProblemInstance& inst,
                                       const Vec& y0) {
  if (inst.objective.kind != ObjectiveKind::sin_quadratic)
    throw std::invalid_argument(
        "nonconvex_reference expects the sin-quadratic family");
  ClassicalConfig cfg;
  cfg.inner_iters = 10000;
  cfg.max_outer = 1000;
  cfg.kkt_tol = 1e-6;
  const ClassicalResult res = ufd_penalty_solve(inst, y0, cfg);
  NonconvexReference ref;
  ref.y = res.y;
  ref.status = res.status;
  ref.kkt = res.trace.empty() ? 0.0 : res.trace.back().kkt;
  ref.objective = eval_objective(inst, res.y);
  if (res.status == SolveStatus::stalled)
    // A stalled run still yields the best visited point; callers see the
    // status and the KKT residual and can decide what to do with it.
    return ref;
  return ref;
}

}  // namespace dkit
