// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dkit/rng.hpp"
#include "dkit/types.hpp"

namespace dkit {

enum class ObjectiveKind { quadratic, sin_quadratic, portfolio_risk };
enum class Family { qp, nonconvex, portfolio };

std::string to_string(Family family);
Family family_from_string(const std::string& name);
ObjectiveKind objective_kind_for(Family family);

/// Objective data. `kind` selects the functional form:
///   quadratic        f(y) = 1/2 y'Qy + p'y
///   sin_quadratic    f(y) = 1/2 y'Qy + p'sin(y)
///   portfolio_risk   f(w) = w'Qw              (Q holds the covariance)
struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::quadratic;
  Mat Q;
  Vec p;  // unused for portfolio_risk (may be empty)

  Index dim() const { return Q.rows(); }
  /// Symmetry to 1e-12 relative; min eigenvalue >= -1e-10*||Q|| for the
  /// convex kinds. Called by the dataset factories, not per instance.
  void validate() const;
};

/// Linear constraint block: A y = b_eq, G y <= h.
struct LinearConstraints {
  Mat A;     // n_eq x n
  Vec b_eq;  // n_eq
  Mat G;     // n_ineq x n
  Vec h;     // n_ineq

  Index dim() const { return A.cols(); }
  Index n_eq() const { return A.rows(); }
  Index n_ineq() const { return G.rows(); }
  /// Shape consistency, n_eq < n, and rank(A) == n_eq (via rank-revealing QR).
  void validate() const;
};

LinearConstraints make_constraints(Mat A, Vec b_eq, Mat G, Vec h);

struct ProblemInstance {
  ObjectiveSpec objective;
  LinearConstraints constraints;
  std::int64_t id = 0;

  Index dim() const { return constraints.dim(); }
};

struct DatasetSpec {
  Family family = Family::qp;
  Index n = 0;
  Index n_eq = 0;
  Index n_ineq = 0;
  Index count = 0;
  std::uint64_t seed = 0;
  // Portfolio return threshold r_min: drawn uniformly from the range for
  // training sets, linearly spaced across it for test sets.
  double r_min_lo = 0.05;
  double r_min_hi = 0.4;
  bool r_min_linspace = false;

  void validate() const;
};

/// Compact dataset storage. Q, p, A, G, h are shared across instances for
/// qp/nonconvex; only x (= b_eq) varies. Portfolio shares the covariance and
/// the budget row while mu and r_min vary per instance.
struct Dataset {
  DatasetSpec spec;
  Mat Q;  // objective matrix (covariance for portfolio)
  Vec p;  // linear/sine coefficients (empty for portfolio)
  Mat A;  // n_eq x n
  Mat G;  // n_ineq x n (qp/nonconvex; portfolio instances assemble their own)
  Vec h;  // n_ineq (qp/nonconvex)
  Mat X;  // count x n_eq per-instance equality right-hand sides
  Mat Mu;         // count x n portfolio expected returns
  Vec r_min;      // count portfolio return thresholds

  std::size_t size() const { return static_cast<std::size_t>(spec.count); }
  ProblemInstance instance(std::size_t i) const;
  std::vector<ProblemInstance> instances() const;
};

double eval_objective(const ProblemInstance& inst, const Vec& y);
Vec eval_gradient(const ProblemInstance& inst, const Vec& y);
/// Action of the objective's second derivative at y (Jacobian of the
/// gradient), used by the reverse pass.
Vec eval_hessian_vec(const ProblemInstance& inst, const Vec& y, const Vec& v);

/// (A y - b_eq, G y - h)
std::pair<Vec, Vec> constraint_values(const ProblemInstance& inst,
                                      const Vec& y);

double eq_violation_inf(const ProblemInstance& inst, const Vec& y);
double max_ineq_violation(const ProblemInstance& inst, const Vec& y);
bool is_feasible(const ProblemInstance& inst, const Vec& y,
                 double tol = 1e-9);

Dataset generate_dataset(const DatasetSpec& spec);

/// Analytic feasible starting point: the min-norm solution of A y = x for
/// qp/nonconvex (feasible by the dataset's h construction), equal weights
/// for portfolio. Throws NumericalError if the point is infeasible beyond
/// 1e-9, which signals a malformed instance.
Vec feasible_init(const ProblemInstance& inst);

}  // namespace dkit
