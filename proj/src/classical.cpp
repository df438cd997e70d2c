// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#include "dkit/classical.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dkit/errors.hpp"

namespace dkit {

void ClassicalConfig::validate() const {
  penalty.validate();
  if (inner_iters < 1) throw ConfigError("inner_iters must be >= 1");
  if (max_outer < 1) throw ConfigError("max_outer must be >= 1");
  if (!(kkt_tol > 0)) throw ConfigError("kkt_tol must be positive");
  if (grid_points < 2) throw ConfigError("grid_points must be >= 2");
  if (!(active_tol > 0)) throw ConfigError("active_tol must be positive");
}

double KktReport::overall() const {
  return std::max({stationarity, comp_slack, dual_feas});
}

Vec nnls(const Mat& E, const Vec& f, int max_iter) {
  const Index ncols = E.cols();
  if (max_iter <= 0) max_iter = static_cast<int>(3 * ncols) + 30;
  Vec x = Vec::Zero(ncols);
  if (ncols == 0) return x;

  std::vector<bool> passive(static_cast<std::size_t>(ncols), false);
  Vec w = E.transpose() * (f - E * x);
  const double tol =
      1e-12 * std::max(1.0, E.cwiseAbs().maxCoeff() * f.cwiseAbs().maxCoeff());

  for (int iter = 0; iter < max_iter; ++iter) {
    // pick the most violated dual coordinate among the zero set
    Index best = -1;
    double best_w = tol;
    for (Index j = 0; j < ncols; ++j) {
      if (!passive[static_cast<std::size_t>(j)] && w[j] > best_w) {
        best_w = w[j];
        best = j;
      }
    }
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = true;

    for (int inner = 0; inner < max_iter; ++inner) {
      std::vector<Index> idx;
      for (Index j = 0; j < ncols; ++j)
        if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
      Mat Ep(E.rows(), static_cast<Index>(idx.size()));
      for (std::size_t k = 0; k < idx.size(); ++k) Ep.col(static_cast<Index>(k)) = E.col(idx[k]);
      const Vec z = Ep.colPivHouseholderQr().solve(f);

      bool all_positive = true;
      for (Index k = 0; k < z.size(); ++k)
        if (z[k] <= 0) all_positive = false;
      if (all_positive) {
        x.setZero();
        for (std::size_t k = 0; k < idx.size(); ++k)
          x[idx[k]] = z[static_cast<Index>(k)];
        break;
      }
      // shrink toward the feasible boundary and drop the blocking column
      double alpha = 1.0;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const double zk = z[static_cast<Index>(k)];
        if (zk <= 0) {
          const double xk = x[idx[k]];
          if (xk - zk > 0) alpha = std::min(alpha, xk / (xk - zk));
        }
      }
      for (std::size_t k = 0; k < idx.size(); ++k)
        x[idx[k]] += alpha * (z[static_cast<Index>(k)] - x[idx[k]]);
      for (Index j = 0; j < ncols; ++j)
        if (passive[static_cast<std::size_t>(j)] && x[j] <= 1e-14) {
          passive[static_cast<std::size_t>(j)] = false;
          x[j] = 0.0;
        }
    }
    w = E.transpose() * (f - E * x);
  }
  return x;
}

KktReport kkt_residual(const ProblemInstance& inst, const Vec& y,
                       double active_tol) {
  const double eq = eq_violation_inf(inst, y);
  const double ineq = max_ineq_violation(inst, y);
  if (eq > 1e-6 || ineq > 1e-6) {
    std::ostringstream os;
    os << "kkt_residual needs a feasible point (eq " << eq << ", ineq " << ineq
       << ")";
    throw NumericalError(os.str());
  }

  const LinearConstraints& c = inst.constraints;
  const Index n = inst.dim();
  const Index m = c.n_eq();
  const Index l = c.n_ineq();
  const Vec grad = eval_gradient(inst, y);
  const Vec g = l > 0 ? Vec(c.G * y - c.h) : Vec();

  std::vector<Index> active;
  for (Index j = 0; j < l; ++j)
    if (g[j] >= -active_tol) active.push_back(j);
  const Index a = static_cast<Index>(active.size());

  // orthonormal basis of range(A') for projecting out the free multipliers
  Mat basis(n, 0);
  if (m > 0) {
    Eigen::ColPivHouseholderQR<Mat> qr(c.A.transpose());
    basis = qr.householderQ() * Mat::Identity(n, m);
  }
  const auto project_out = [&](const Vec& v) -> Vec {
    if (m == 0) return v;
    return v - basis * (basis.transpose() * v);
  };

  Mat Ea(n, a);
  for (Index k = 0; k < a; ++k)
    Ea.col(k) = project_out(c.G.row(active[static_cast<std::size_t>(k)])
                                .transpose());
  const Vec target = -project_out(grad);
  const Vec lambda_active = a > 0 ? nnls(Ea, target) : Vec();

  KktReport report;
  report.lambda = Vec::Zero(l);
  for (Index k = 0; k < a; ++k)
    report.lambda[active[static_cast<std::size_t>(k)]] = lambda_active[k];

  Vec residual_dir = grad;
  if (a > 0) residual_dir += c.G.transpose() * report.lambda;
  report.residual = project_out(residual_dir);
  report.stationarity = report.residual.norm();
  if (m > 0) {
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(c.A.transpose());
    report.mu = cod.solve(-residual_dir);
  } else {
    report.mu = Vec();
  }
  report.comp_slack = 0.0;
  for (Index j = 0; j < l; ++j)
    report.comp_slack =
        std::max(report.comp_slack, std::abs(report.lambda[j] * g[j]));
  report.dual_feas =
      l > 0 ? std::max(0.0, -report.lambda.minCoeff()) : 0.0;
  report.primal_eq = eq;
  report.primal_ineq = std::max(0.0, ineq);

  if (a + m > 0) {
    Mat B(n, a + m);
    for (Index k = 0; k < a; ++k)
      B.col(k) = c.G.row(active[static_cast<std::size_t>(k)]).transpose();
    if (m > 0) B.rightCols(m) = c.A.transpose();
    Eigen::ColPivHouseholderQR<Mat> qr(B);
    report.licq_ok = qr.rank() == a + m;
  }
  return report;
}

namespace {

/// Restores exact membership in the UFD feasible region
/// F = { d in D : <a_j, d> <= b_j }. Rows with b_j at zero (constraints the
/// iterate sits on) are handled by cyclic tangency projection inside the
/// equality null space; the remaining violations are removed by the scaling
/// d <- alpha d with alpha = min_j b_j / <a_j, d>, the operation the exact
/// penalty argument is built on. A direction in F admits steps up to 1/M.
Vec restore_direction_feasibility(const SubproblemData& sub, Vec d) {
  if (sub.n_rows() == 0) return d;
  const Vec b = sub.b();
  const Mat& G = *sub.grad_g;
  // Rows whose threshold is tiny relative to the rest behave like hard
  // tangency constraints; scaling against them would collapse the whole
  // direction, so they get projected instead.
  const double boundary_tol = 1e-6 * std::max(1.0, b.maxCoeff());

  std::vector<Index> boundary_rows;
  for (Index j = 0; j < sub.n_rows(); ++j)
    if (b[j] <= boundary_tol) boundary_rows.push_back(j);

  for (int round = 0; round < 12 && !boundary_rows.empty(); ++round) {
    double worst = 0.0;
    for (Index j : boundary_rows) {
      const double viol = (G.row(j) * d)(0) - b[j];
      worst = std::max(worst, viol);
      if (viol <= 0) continue;
      const Vec tangent = sub.cache->project_linear(G.row(j).transpose());
      const double denom = (G.row(j) * tangent)(0);
      if (denom <= 1e-14) continue;  // row gradient lies in range(A')
      d -= (viol / denom) * tangent;
    }
    if (worst <= 1e-13) break;
  }

  double scale = 1.0;
  for (Index j = 0; j < sub.n_rows(); ++j) {
    if (b[j] <= boundary_tol) continue;
    const double slope = (G.row(j) * d)(0);
    if (slope > b[j]) scale = std::min(scale, b[j] / slope);
  }
  d *= scale;
  const double norm = d.norm();
  if (norm > 1.0) d /= norm;
  return d;
}

/// Direction solve used by the outer loop: repeated pgm_solve calls with
/// geometrically halved, normalized steps, each stage warm-started from the
/// best iterate so far. The decaying schedule resolves the piecewise-linear
/// objective far below the noise floor of a single fixed-step run.
PgmResult solve_direction(const SubproblemData& sub, const Vec& d0,
                          int budget) {
  const int stages = 32;
  const int per_stage = std::max(25, budget / stages);
  double gamma = 0.25;

  PgmOptions probe;
  probe.iters = 1;
  probe.gamma_seq = std::vector<double>{0.0};
  PgmResult best = pgm_solve(sub, d0, probe);
  {
    PgmResult alt = pgm_solve(sub, -sub.grad_f, probe);
    if (alt.phi_best < best.phi_best) best = std::move(alt);
  }
  for (int stage = 0; stage < stages; ++stage, gamma *= 0.5) {
    PgmOptions opts;
    opts.iters = per_stage;
    opts.gamma_seq =
        std::vector<double>(static_cast<std::size_t>(per_stage), gamma);
    opts.normalize_steps = true;
    PgmResult res = pgm_solve(sub, best.d, opts);
    if (res.phi_best < best.phi_best) best = std::move(res);
  }
  // Prefer the pulled-back direction whenever it still descends: exact
  // membership in F buys the full 1/M step interval, worth a little phi.
  Vec cleaned = restore_direction_feasibility(sub, best.d);
  const double phi_cleaned = phi(sub, cleaned);
  const double phi_zero = sub.weights.dot(sub.b());
  if (phi_cleaned < phi_zero - 1e-11 * std::max(1.0, std::abs(phi_zero))) {
    best.d = std::move(cleaned);
    best.phi_best = phi_cleaned;
  }
  return best;
}

// Step fraction kept back from the feasibility boundary. Landing exactly on
// a constraint makes the next iterate's hinge threshold zero, which an
// inexactly solved subproblem cannot respect.
constexpr double kStepBack = 0.9;

// Endgame scaling of the margin constant. With fixed M the hinge slope cap
// M|g_j| shrinks with the margins, so constraints that are active at the
// optimum close only quadratically with f and never pierce the KKT active
// window. Raising M keeps the per-step closure geometric; feasibility and
// the alpha <= 1/M rule hold at every scale.
double adaptive_margin_constant(const Vec& g_vals, double m_base) {
  double margin_min = std::numeric_limits<double>::infinity();
  for (Index j = 0; j < g_vals.size(); ++j) {
    const double margin = -g_vals[j];
    if (margin > 1e-9 && margin <= 0.1)
      margin_min = std::min(margin_min, margin);
  }
  if (!std::isfinite(margin_min)) return m_base;
  return std::clamp(0.02 / margin_min, m_base, 1e8);
}

double max_feasible_step(const SubproblemData& sub, const Vec& d, double cap) {
  double alpha = cap;
  for (Index j = 0; j < sub.n_rows(); ++j) {
    const double slope = (sub.grad_g->row(j) * d)(0);
    if (slope > 1e-14)
      alpha = std::min(alpha, -sub.g_vals[j] / slope);
  }
  return std::max(alpha, 0.0);
}

struct LineSearchResult {
  double alpha = 0.0;
  double f = 0.0;
  bool improved = false;
};

LineSearchResult grid_search(const ProblemInstance& inst, const Vec& y,
                             const Vec& d, double f_cur, double alpha_hi,
                             int points, double span) {
  LineSearchResult best;
  best.f = f_cur;
  const double ratio = std::pow(span, 1.0 / static_cast<double>(points - 1));
  double alpha = alpha_hi;
  for (int i = 0; i < points; ++i, alpha *= ratio) {
    const double f_trial = eval_objective(inst, y + alpha * d);
    if (f_trial < best.f) {
      best.f = f_trial;
      best.alpha = alpha;
      best.improved = true;
    }
  }
  return best;
}

LineSearchResult backtrack_search(const ProblemInstance& inst, const Vec& y,
                                  const Vec& d, double f_cur, double slope,
                                  double alpha_hi) {
  LineSearchResult res;
  res.f = f_cur;
  double alpha = alpha_hi;
  for (int i = 0; i < 60; ++i, alpha *= 0.5) {
    const double f_trial = eval_objective(inst, y + alpha * d);
    if (f_trial <= f_cur + 1e-4 * alpha * slope) {
      res.alpha = alpha;
      res.f = f_trial;
      res.improved = f_trial <= f_cur;
      return res;
    }
  }
  return res;
}

}  // namespace

ClassicalResult ufd_penalty_solve(const ProblemInstance& inst, const Vec& y0,
                                  const ClassicalConfig& cfg) {
  cfg.validate();
  if (!is_feasible(inst, y0, 1e-9)) {
    std::ostringstream os;
    os << "ufd_penalty_solve needs a feasible start (eq "
       << eq_violation_inf(inst, y0) << ", ineq "
       << max_ineq_violation(inst, y0) << ")";
    throw NumericalError(os.str());
  }

  const ProjectorCache cache = build_projector(inst.constraints.A);
  ClassicalResult result;
  result.y = y0;
  double f_cur = eval_objective(inst, result.y);
  Vec warm;  // previous direction, reused as the next PGM start

  for (int outer = 0; outer < cfg.max_outer; ++outer) {
    const KktReport rep = kkt_residual(inst, result.y, cfg.active_tol);
    result.trace.push_back({f_cur, rep.overall()});
    if (rep.overall() <= cfg.kkt_tol) {
      result.status = SolveStatus::converged;
      return result;
    }

    PenaltyConfig pcfg = cfg.penalty;
    {
      const Vec g = inst.constraints.G * result.y - inst.constraints.h;
      pcfg.M = adaptive_margin_constant(g, cfg.penalty.M);
    }
    const SubproblemData sub = build_subproblem(inst, result.y, cache, pcfg);
    // phi at d = 0 equals the constant hinge offset; a direction no better
    // than that carries no descent information.
    const double phi_zero = -sub.M * sub.weights.dot(sub.g_vals);

    // Attempt ladder for the direction: the penalized subproblem at the
    // base budget, then the projected Lagrangian residual from the KKT
    // check (the subgradient method cannot resolve descent components that
    // are orders below the raw gradient, which is exactly the near-optimal
    // regime), then escalated subproblem budgets.
    const double stall_tol = 1e-11 * std::max(1.0, std::abs(phi_zero));
    LineSearchResult ls;
    for (int attempt = 0; attempt < 4 && !ls.improved; ++attempt) {
      Vec d;
      if (attempt == 1 && rep.stationarity > 0) {
        d = restore_direction_feasibility(
            sub, sub.cache->project(-rep.residual / rep.stationarity));
      } else {
        const int budget = cfg.inner_iters << (2 * (attempt > 1 ? attempt - 1 : attempt));
        const Vec d0 = (attempt == 0 && warm.size() == inst.dim())
                           ? warm
                           : Vec(-sub.grad_f);
        const PgmResult pgm = solve_direction(sub, d0, budget);
        d = pgm.d;
        warm = d;
        if (pgm.phi_best >= phi_zero - stall_tol) continue;
      }
      if (d.norm() < 1e-12) continue;

      const double limit = 1.0 / pcfg.M;
      const double cap =
          std::min(limit, kStepBack * max_feasible_step(sub, d, limit / kStepBack));
      if (cap <= 0) continue;

      if (cfg.line_search == LineSearch::exact_grid) {
        ls = grid_search(inst, result.y, d, f_cur, cap, cfg.grid_points, 1e-4);
        if (!ls.improved)
          ls = grid_search(inst, result.y, d, f_cur, cap * 1e-4,
                           cfg.grid_points, 1e-4);
      } else {
        ls = backtrack_search(inst, result.y, d, f_cur, sub.grad_f.dot(d), cap);
      }
      if (ls.improved) {
        result.y += ls.alpha * d;
        f_cur = ls.f;
        ++result.outer_steps;
      }
    }
    if (!ls.improved) {
      result.status = SolveStatus::stalled;
      return result;
    }
  }

  const KktReport rep = kkt_residual(inst, result.y, cfg.active_tol);
  result.trace.push_back({f_cur, rep.overall()});
  result.status = rep.overall() <= cfg.kkt_tol ? SolveStatus::converged
                                               : SolveStatus::max_outer;
  return result;
}

}  // namespace dkit
