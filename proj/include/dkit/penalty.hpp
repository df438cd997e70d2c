// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "dkit/problem.hpp"
#include "dkit/projection.hpp"
#include "dkit/types.hpp"

namespace dkit {

/// How the hinge weights c_j are formed. `ratio` is the default
///   c_j = ||grad f||_2 / (epsilon - M g_j / 2),
/// which up-weights near-active rows; `exponential` is the surrogate
/// c_j = exp(-g_j).
enum class PenaltyWeightKind { ratio, exponential };

struct PenaltyConfig {
  double M = 1.0;         // uniform-feasibility constant
  double epsilon = 5e-4;  // stabilizer in the ratio weights
  double delta_g = 1e-5;  // active-set margin
  PenaltyWeightKind weight_kind = PenaltyWeightKind::ratio;

  void validate() const;
};

/// Direction subproblem at a feasible point y:
///   min_{d in D} phi(d) = <grad_f, d> + sum_j c_j max(<a_j, d>, b_j)
/// with a_j the rows of grad_g, b_j = -M g_j, and
/// D = { ||d|| <= 1, A d = 0 } realized by `cache`.
///
/// grad_g and cache are borrowed; the subproblem is only valid while the
/// instance and projector it was built from stay alive.
struct SubproblemData {
  Vec grad_f;
  const Mat* grad_g = nullptr;  // l x n constraint gradient rows
  Vec g_vals;                   // l, all <= 1e-9 at build time
  Vec weights;                  // c_j > 0 (zero iff grad_f = 0)
  double M = 1.0;
  const ProjectorCache* cache = nullptr;

  Index n_rows() const { return g_vals.size(); }
  Vec b() const { return -M * g_vals; }
};

/// Hinge weights per the configured rule. Throws if any g_j > 1e-9.
Vec penalty_weights(const Vec& grad_f, const Vec& g_vals,
                    const PenaltyConfig& cfg);

/// Assembles the subproblem at y (feasible to 1e-9, else error carrying
/// the worst violation).
SubproblemData build_subproblem(const ProblemInstance& inst, const Vec& y,
                                const ProjectorCache& cache,
                                const PenaltyConfig& cfg);

double phi(const SubproblemData& sub, const Vec& d);

/// Subgradient u = grad_f + sum_j c_j 1{<a_j,d> >= b_j} a_j. Ties at the
/// hinge include the row's gradient (the >= convention picks one element
/// of the subdifferential). If `mask_out` is non-null the indicator values
/// are stored there.
Vec subgradient(const SubproblemData& sub, const Vec& d,
                BoolArray* mask_out = nullptr);

struct PgmOptions {
  int iters = 1000;
  // Step rule: fixed gamma_k = 1 / sqrt(iters) unless a sequence is given.
  std::optional<std::vector<double>> gamma_seq;
  // Divide each step by ||u_k||, turning gamma_seq into a trust-region-like
  // travel distance per iteration. Used by the classical solver's staged
  // direction solves; the hinge weights make raw subgradient norms swing by
  // orders of magnitude, which a fixed step cannot ride out.
  bool normalize_steps = false;
};

struct PgmResult {
  Vec d;                         // best-phi iterate
  double phi_best = 0.0;
  std::vector<double> phi_trace;  // phi at iterates 0..iters
};

/// Projected subgradient iteration d_{k+1} = P(d_k - gamma_k u_k) from
/// project(d0). Returns the iterate with the smallest phi seen.
PgmResult pgm_solve(const SubproblemData& sub, const Vec& d0,
                    const PgmOptions& opts);

/// Long-run PGM from several starts; the designated subproblem reference.
/// Start 0 is project(-grad_f), the rest are random unit-ball points.
PgmResult subproblem_oracle(const SubproblemData& sub, int iters,
                            int restarts, std::uint64_t seed);

struct ExactPenaltyReport {
  double margin = 0.0;  // max_j (<a_j, d> - b_j); <= tol means d lies in
                        // the UFD-L2 feasible region
  Index worst_row = -1;
  bool pass = false;
};

ExactPenaltyReport check_exact_penalty(const SubproblemData& sub, const Vec& d,
                                       double tol);

}  // namespace dkit
