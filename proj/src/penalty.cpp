// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#include "dkit/penalty.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "dkit/errors.hpp"
#include "dkit/rng.hpp"

namespace dkit {

void PenaltyConfig::validate() const {
  if (!(M > 0)) throw ConfigError("penalty M must be positive");
  if (!(epsilon > 0)) throw ConfigError("penalty epsilon must be positive");
  if (!(delta_g > 0)) throw ConfigError("penalty delta_g must be positive");
}

Vec penalty_weights(const Vec& grad_f, const Vec& g_vals,
                    const PenaltyConfig& cfg) {
  const double worst = g_vals.size() > 0 ? g_vals.maxCoeff() : 0.0;
  if (worst > 1e-9) {
    std::ostringstream os;
    os << "penalty weights need a feasible point; max g = " << worst;
    throw NumericalError(os.str());
  }
  Vec c(g_vals.size());
  if (cfg.weight_kind == PenaltyWeightKind::exponential) {
    c = (-g_vals.array()).exp();
    return c;
  }
  const double grad_norm = grad_f.norm();
  for (Index j = 0; j < g_vals.size(); ++j)
    c[j] = grad_norm / (cfg.epsilon - 0.5 * cfg.M * g_vals[j]);
  return c;
}

SubproblemData build_subproblem(const ProblemInstance& inst, const Vec& y,
                                const ProjectorCache& cache,
                                const PenaltyConfig& cfg) {
  cfg.validate();
  const double eq = eq_violation_inf(inst, y);
  const double ineq = max_ineq_violation(inst, y);
  if (eq > 1e-9 || ineq > 1e-9) {
    std::ostringstream os;
    os << "subproblem needs a feasible point: max violation "
       << std::max(eq, ineq);
    throw NumericalError(os.str());
  }
  SubproblemData sub;
  sub.grad_f = eval_gradient(inst, y);
  sub.grad_g = &inst.constraints.G;
  sub.g_vals = inst.constraints.G * y - inst.constraints.h;
  sub.weights = penalty_weights(sub.grad_f, sub.g_vals, cfg);
  sub.M = cfg.M;
  sub.cache = &cache;
  return sub;
}

double phi(const SubproblemData& sub, const Vec& d) {
  double value = sub.grad_f.dot(d);
  if (sub.n_rows() == 0) return value;
  const Vec gd = *sub.grad_g * d;
  for (Index j = 0; j < sub.n_rows(); ++j)
    value += sub.weights[j] * std::max(gd[j], -sub.M * sub.g_vals[j]);
  return value;
}

Vec subgradient(const SubproblemData& sub, const Vec& d, BoolArray* mask_out) {
  Vec u = sub.grad_f;
  if (sub.n_rows() == 0) {
    if (mask_out) mask_out->resize(0);
    return u;
  }
  const Vec gd = *sub.grad_g * d;
  Vec active_weights = Vec::Zero(sub.n_rows());
  if (mask_out) mask_out->resize(sub.n_rows());
  for (Index j = 0; j < sub.n_rows(); ++j) {
    const bool active = gd[j] >= -sub.M * sub.g_vals[j];
    if (active) active_weights[j] = sub.weights[j];
    if (mask_out) (*mask_out)[j] = active;
  }
  u.noalias() += sub.grad_g->transpose() * active_weights;
  return u;
}

PgmResult pgm_solve(const SubproblemData& sub, const Vec& d0,
                    const PgmOptions& opts) {
  if (opts.iters < 1) throw std::invalid_argument("pgm_solve needs iters >= 1");
  if (opts.gamma_seq && static_cast<int>(opts.gamma_seq->size()) < opts.iters)
    throw std::invalid_argument("gamma sequence shorter than iteration count");

  const double fixed_gamma = 1.0 / std::sqrt(static_cast<double>(opts.iters));
  PgmResult res;
  res.phi_trace.reserve(static_cast<std::size_t>(opts.iters) + 1);

  Vec d = sub.cache->project(d0);
  res.d = d;
  res.phi_best = phi(sub, d);
  res.phi_trace.push_back(res.phi_best);

  for (int k = 0; k < opts.iters; ++k) {
    double gamma = opts.gamma_seq ? (*opts.gamma_seq)[k] : fixed_gamma;
    const Vec u = subgradient(sub, d);
    if (opts.normalize_steps) gamma /= std::max(u.norm(), 1e-12);
    d = sub.cache->project(d - gamma * u);
    const double value = phi(sub, d);
    res.phi_trace.push_back(value);
    if (value < res.phi_best) {
      res.phi_best = value;
      res.d = d;
    }
  }
  return res;
}

PgmResult subproblem_oracle(const SubproblemData& sub, int iters, int restarts,
                            std::uint64_t seed) {
  Rng rng(seed);
  PgmOptions opts;
  opts.iters = iters;
  PgmResult best;
  bool first = true;
  for (int r = 0; r < std::max(1, restarts); ++r) {
    Vec d0 = r == 0 ? Vec(-sub.grad_f) : Vec(rng.normal_vec(sub.grad_f.size()));
    if (r > 0 && d0.norm() > 0) d0 /= d0.norm();
    PgmResult res = pgm_solve(sub, d0, opts);
    if (first || res.phi_best < best.phi_best) {
      best = std::move(res);
      first = false;
    }
  }
  return best;
}

ExactPenaltyReport check_exact_penalty(const SubproblemData& sub, const Vec& d,
                                       double tol) {
  ExactPenaltyReport report;
  if (sub.n_rows() == 0) {
    report.margin = -std::numeric_limits<double>::infinity();
    report.pass = true;
    return report;
  }
  const Vec slack = *sub.grad_g * d + sub.M * sub.g_vals;  // <a_j,d> - b_j
  report.margin = slack.maxCoeff(&report.worst_row);
  report.pass = report.margin <= tol;
  return report;
}

}  // namespace dkit
