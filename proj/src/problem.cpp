// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#include "dkit/problem.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <cmath>
#include <sstream>

#include "dkit/errors.hpp"

namespace dkit {

std::string to_string(Family family) {
  switch (family) {
    case Family::qp: return "qp";
    case Family::nonconvex: return "nonconvex";
    case Family::portfolio: return "portfolio";
  }
  return "?";
}

Family family_from_string(const std::string& name) {
  if (name == "qp") return Family::qp;
  if (name == "nonconvex") return Family::nonconvex;
  if (name == "portfolio") return Family::portfolio;
  throw ConfigError("unknown problem family: " + name);
}

ObjectiveKind objective_kind_for(Family family) {
  switch (family) {
    case Family::qp: return ObjectiveKind::quadratic;
    case Family::nonconvex: return ObjectiveKind::sin_quadratic;
    case Family::portfolio: return ObjectiveKind::portfolio_risk;
  }
  return ObjectiveKind::quadratic;
}

void ObjectiveSpec::validate() const {
  if (Q.rows() != Q.cols()) throw ConfigError("objective Q must be square");
  const double scale = std::max(1.0, Q.cwiseAbs().maxCoeff());
  const double asym = (Q - Q.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * scale) {
    std::ostringstream os;
    os << "objective Q not symmetric: max asymmetry " << asym;
    throw ConfigError(os.str());
  }
  if (kind != ObjectiveKind::portfolio_risk) {
    if (p.size() != Q.rows())
      throw ConfigError("objective p has wrong dimension");
  }
  if (kind == ObjectiveKind::quadratic ||
      kind == ObjectiveKind::portfolio_risk) {
    Eigen::SelfAdjointEigenSolver<Mat> es(Q, Eigen::EigenvaluesOnly);
    const double min_eig = es.eigenvalues().minCoeff();
    const double norm = es.eigenvalues().cwiseAbs().maxCoeff();
    if (min_eig < -1e-10 * std::max(1.0, norm)) {
      std::ostringstream os;
      os << "objective Q not positive semidefinite: min eigenvalue "
         << min_eig;
      throw ConfigError(os.str());
    }
  }
}

void LinearConstraints::validate() const {
  const Index n = A.cols();
  if (b_eq.size() != A.rows()) throw ConfigError("b_eq dimension mismatch");
  if (G.rows() > 0 && G.cols() != n) throw ConfigError("G dimension mismatch");
  if (h.size() != G.rows()) throw ConfigError("h dimension mismatch");
  if (A.rows() >= n)
    throw ConfigError("need n_eq < n, got n_eq=" + std::to_string(A.rows()) +
                      " n=" + std::to_string(n));
  if (A.rows() > 0) {
    Eigen::ColPivHouseholderQR<Mat> qr(A.transpose());
    if (qr.rank() < A.rows()) {
      std::ostringstream os;
      os << "equality constraint rows not linearly independent: rank "
         << qr.rank() << " < " << A.rows();
      throw ConfigError(os.str());
    }
  }
}

LinearConstraints make_constraints(Mat A, Vec b_eq, Mat G, Vec h) {
  LinearConstraints c{std::move(A), std::move(b_eq), std::move(G),
                      std::move(h)};
  c.validate();
  return c;
}

namespace {

void check_dim(const ProblemInstance& inst, const Vec& y) {
  if (y.size() != inst.dim()) {
    std::ostringstream os;
    os << "point dimension " << y.size() << " != problem dimension "
       << inst.dim();
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

double eval_objective(const ProblemInstance& inst, const Vec& y) {
  check_dim(inst, y);
  const ObjectiveSpec& obj = inst.objective;
  switch (obj.kind) {
    case ObjectiveKind::quadratic:
      return 0.5 * y.dot(obj.Q * y) + obj.p.dot(y);
    case ObjectiveKind::sin_quadratic:
      return 0.5 * y.dot(obj.Q * y) + obj.p.dot(y.array().sin().matrix());
    case ObjectiveKind::portfolio_risk:
      return y.dot(obj.Q * y);
  }
  return 0.0;
}

Vec eval_gradient(const ProblemInstance& inst, const Vec& y) {
  check_dim(inst, y);
  const ObjectiveSpec& obj = inst.objective;
  switch (obj.kind) {
    case ObjectiveKind::quadratic:
      return obj.Q * y + obj.p;
    case ObjectiveKind::sin_quadratic:
      return obj.Q * y +
             (obj.p.array() * y.array().cos()).matrix();
    case ObjectiveKind::portfolio_risk:
      return 2.0 * (obj.Q * y);
  }
  return Vec();
}

Vec eval_hessian_vec(const ProblemInstance& inst, const Vec& y, const Vec& v) {
  check_dim(inst, y);
  check_dim(inst, v);
  const ObjectiveSpec& obj = inst.objective;
  switch (obj.kind) {
    case ObjectiveKind::quadratic:
      return obj.Q * v;
    case ObjectiveKind::sin_quadratic:
      return obj.Q * v -
             (obj.p.array() * y.array().sin() * v.array()).matrix();
    case ObjectiveKind::portfolio_risk:
      return 2.0 * (obj.Q * v);
  }
  return Vec();
}

std::pair<Vec, Vec> constraint_values(const ProblemInstance& inst,
                                      const Vec& y) {
  check_dim(inst, y);
  const LinearConstraints& c = inst.constraints;
  return {c.A * y - c.b_eq, c.G * y - c.h};
}

double eq_violation_inf(const ProblemInstance& inst, const Vec& y) {
  const LinearConstraints& c = inst.constraints;
  if (c.A.rows() == 0) return 0.0;
  return (c.A * y - c.b_eq).cwiseAbs().maxCoeff();
}

double max_ineq_violation(const ProblemInstance& inst, const Vec& y) {
  const LinearConstraints& c = inst.constraints;
  if (c.G.rows() == 0) return 0.0;
  return (c.G * y - c.h).maxCoeff();
}

bool is_feasible(const ProblemInstance& inst, const Vec& y, double tol) {
  return eq_violation_inf(inst, y) <= tol &&
         max_ineq_violation(inst, y) <= tol;
}

void DatasetSpec::validate() const {
  if (count <= 0) throw ConfigError("dataset count must be positive");
  if (n <= 0) throw ConfigError("dataset n must be positive");
  if (family == Family::portfolio) {
    if (n_eq != 1 || n_ineq != n + 1)
      throw ConfigError("portfolio family requires n_eq=1, n_ineq=n+1");
    if (!(r_min_lo <= r_min_hi))
      throw ConfigError("empty r_min range");
  } else {
    if (n_eq <= 0 || n_eq >= n)
      throw ConfigError("need 0 < n_eq < n");
    if (n_ineq < 0) throw ConfigError("n_ineq must be >= 0");
  }
}

ProblemInstance Dataset::instance(std::size_t i) const {
  if (i >= size()) throw std::invalid_argument("instance index out of range");
  ProblemInstance inst;
  inst.id = static_cast<std::int64_t>(i);
  inst.objective.kind = objective_kind_for(spec.family);
  inst.objective.Q = Q;
  inst.objective.p = p;
  if (spec.family == Family::portfolio) {
    const Index n = spec.n;
    inst.constraints.A = A;
    inst.constraints.b_eq = Vec::Ones(1);
    Mat Gi(n + 1, n);
    Gi.topRows(n) = -Mat::Identity(n, n);
    Gi.row(n) = -Mu.row(static_cast<Index>(i));
    inst.constraints.G = std::move(Gi);
    Vec hi = Vec::Zero(n + 1);
    hi[n] = -r_min[static_cast<Index>(i)];
    inst.constraints.h = std::move(hi);
  } else {
    inst.constraints.A = A;
    inst.constraints.b_eq = X.row(static_cast<Index>(i)).transpose();
    inst.constraints.G = G;
    inst.constraints.h = h;
  }
  return inst;
}

std::vector<ProblemInstance> Dataset::instances() const {
  std::vector<ProblemInstance> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(instance(i));
  return out;
}

namespace {

Dataset generate_qp_like(const DatasetSpec& spec) {
  Rng rng(spec.seed);
  Dataset ds;
  ds.spec = spec;
  const Index n = spec.n;
  const Mat R = rng.normal_mat(n, n);
  ds.Q = R.transpose() * R;
  ds.A = rng.normal_mat(spec.n_eq, n);
  ds.G = rng.normal_mat(spec.n_ineq, n);
  ds.p = rng.normal_vec(n);

  // h_i = sum_j |(G A^+)_ij| makes y = A^+ x feasible for any |x|_inf <= 1.
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(ds.A);
  const Mat GAp = ds.G * cod.pseudoInverse();
  ds.h = GAp.cwiseAbs().rowwise().sum();

  ds.X.resize(spec.count, spec.n_eq);
  for (Index i = 0; i < spec.count; ++i)
    for (Index j = 0; j < spec.n_eq; ++j) ds.X(i, j) = rng.uniform(-1.0, 1.0);
  return ds;
}

Dataset generate_portfolio(const DatasetSpec& spec) {
  Rng rng(spec.seed);
  Dataset ds;
  ds.spec = spec;
  const Index n = spec.n;
  const Mat R = rng.normal_mat(n, n);
  ds.Q = R.transpose() * R;
  ds.A = Mat::Ones(1, n);
  ds.Mu.resize(spec.count, n);
  ds.r_min.resize(spec.count);

  const double lo = spec.r_min_lo, hi = spec.r_min_hi;
  for (Index i = 0; i < spec.count; ++i) {
    double r = 0.0;
    if (spec.r_min_linspace) {
      r = spec.count > 1
              ? lo + (hi - lo) * static_cast<double>(i) /
                         static_cast<double>(spec.count - 1)
              : lo;
    }
    Vec mu;
    bool ok = false;
    for (int attempt = 0; attempt < 100; ++attempt) {
      mu = rng.uniform_vec(n, 0.0, 1.0);
      if (!spec.r_min_linspace) r = rng.uniform(lo, hi);
      // equal weights must satisfy the return constraint
      if (r - mu.mean() <= 1e-9) {
        ok = true;
        break;
      }
    }
    if (!ok)
      throw NumericalError(
          "portfolio generation: no feasible draw after 100 resamples "
          "(instance " +
          std::to_string(i) + ")");
    ds.Mu.row(i) = mu.transpose();
    ds.r_min[i] = r;
  }
  return ds;
}

}  // namespace

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds = spec.family == Family::portfolio ? generate_portfolio(spec)
                                                : generate_qp_like(spec);
  // Establish the type invariants once for the shared blocks.
  ds.instance(0).objective.validate();
  ds.instance(0).constraints.validate();
  return ds;
}

Vec feasible_init(const ProblemInstance& inst) {
  Vec y0;
  if (inst.objective.kind == ObjectiveKind::portfolio_risk) {
    const Index n = inst.dim();
    y0 = Vec::Constant(n, 1.0 / static_cast<double>(n));
  } else {
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(inst.constraints.A);
    y0 = cod.solve(inst.constraints.b_eq);
  }
  const double eq = eq_violation_inf(inst, y0);
  const double ineq = max_ineq_violation(inst, y0);
  if (eq > 1e-9 || ineq > 1e-9) {
    std::ostringstream os;
    os << "initial point infeasible (eq " << eq << ", ineq " << ineq
       << "); malformed instance " << inst.id;
    throw NumericalError(os.str());
  }
  return y0;
}

}  // namespace dkit
