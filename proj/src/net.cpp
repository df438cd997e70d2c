// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#include "dkit/net.hpp"

#include <Eigen/QR>
#include <cmath>
#include <sstream>

#include "dkit/errors.hpp"

namespace dkit {

void NetConfig::validate() const {
  if (S < 1 || K < 1 || q < 1)
    throw ConfigError("net config needs S, K, q >= 1");
  if (!(alpha_cap > 0)) throw ConfigError("alpha_cap must be positive");
  penalty.validate();
}

NetParams init_net_params(const NetConfig& config, Index n, std::uint64_t seed,
                          double gamma_init) {
  config.validate();
  NetParams params;
  params.config = config;
  Rng rng(seed);
  const double w_bound = 1.0 / std::sqrt(static_cast<double>(n));
  const double v_bound = 1.0 / std::sqrt(static_cast<double>(config.q));
  params.stages.resize(config.S);
  for (StageParams& stage : params.stages) {
    stage.beta = 0.0;
    stage.layers.resize(config.K);
    for (LayerParams& lp : stage.layers) {
      lp.W = Mat(config.q, n);
      for (Index i = 0; i < lp.W.rows(); ++i)
        for (Index j = 0; j < lp.W.cols(); ++j)
          lp.W(i, j) = rng.uniform(-w_bound, w_bound);
      lp.V = Mat(n, config.q);
      for (Index i = 0; i < lp.V.rows(); ++i)
        for (Index j = 0; j < lp.V.cols(); ++j)
          lp.V(i, j) = rng.uniform(-v_bound, v_bound);
      lp.b1 = Vec::Zero(config.q);
      lp.b2 = Vec::Zero(n);
      lp.gamma = gamma_init;
    }
  }
  return params;
}

namespace {

Vec layer_step(const LayerParams& lp, const SubproblemData& sub, const Vec& d,
               bool use_transform, TapeLayer* rec) {
  BoolArray mask;
  const Vec u = subgradient(sub, d, &mask);
  Vec t;
  Vec z, r;
  if (use_transform) {
    z = lp.W * u + lp.b1;
    r = z.cwiseMax(0.0);
    t = lp.V * r + lp.b2;
  } else {
    t = u;
  }
  const Vec w_pre = d - lp.gamma * t;
  ProjectorCache::Detail proj = sub.cache->project_detail(w_pre);
  if (rec) {
    rec->d_in = d;
    rec->u = u;
    rec->z = std::move(z);
    rec->r = std::move(r);
    rec->t = std::move(t);
    rec->w_pre = w_pre;
    rec->d_hat = std::move(proj.d_hat);
    rec->d_out = proj.d;
    rec->dhat_norm = proj.norm;
    rec->ball = proj.ball;
    rec->zero = proj.zero;
    rec->hinge_mask = std::move(mask);
  }
  return proj.d;
}

}  // namespace

Vec layer_forward(const LayerParams& lp, const SubproblemData& sub,
                  const Vec& d, bool use_transform) {
  return layer_step(lp, sub, d, use_transform, nullptr);
}

Vec module_forward(const StageParams& stage, const SubproblemData& sub,
                   bool use_transform) {
  Vec d = -sub.grad_f;
  for (const LayerParams& lp : stage.layers)
    d = layer_step(lp, sub, d, use_transform, nullptr);
  return d;
}

double max_step(const SubproblemData& sub, const Vec& d, double alpha_cap) {
  double alpha = alpha_cap;
  if (sub.n_rows() > 0) {
    const Vec gd = *sub.grad_g * d;
    for (Index j = 0; j < gd.size(); ++j)
      if (gd[j] > 1e-14) alpha = std::min(alpha, -sub.g_vals[j] / gd[j]);
  }
  return std::clamp(alpha, 0.0, alpha_cap);
}

NetForwardResult net_forward(const NetParams& params,
                             const ProblemInstance& inst,
                             const ProjectorCache& cache, const Vec& y0,
                             Tape* tape) {
  const NetConfig& cfg = params.config;
  cfg.validate();
  if (static_cast<int>(params.stages.size()) != cfg.S)
    throw ConfigError("net params stage count does not match config");
  if (!is_feasible(inst, y0, 1e-9)) {
    std::ostringstream os;
    os << "net_forward needs a feasible start (eq " << eq_violation_inf(inst, y0)
       << ", ineq " << max_ineq_violation(inst, y0) << ")";
    throw NumericalError(os.str());
  }

  NetForwardResult out;
  out.per_stage.reserve(cfg.S);
  if (tape) {
    tape->stages.clear();
    tape->stages.reserve(cfg.S);
  }

  Vec y = y0;
  for (int s = 0; s < cfg.S; ++s) {
    const StageParams& stage = params.stages[cfg.shared_stages ? 0 : s];
    const SubproblemData sub = build_subproblem(inst, y, cache, cfg.penalty);

    TapeStage* srec = nullptr;
    if (tape) {
      tape->stages.emplace_back();
      srec = &tape->stages.back();
      srec->y = y;
      srec->grad_f = sub.grad_f;
      srec->grad_f_norm = sub.grad_f.norm();
      srec->g = sub.g_vals;
      srec->c = sub.weights;
      srec->layers.resize(stage.layers.size());
    }

    Vec d = -sub.grad_f;
    for (std::size_t k = 0; k < stage.layers.size(); ++k)
      d = layer_step(stage.layers[k], sub, d, cfg.use_transform,
                     srec ? &srec->layers[k] : nullptr);

    const Vec gd = sub.n_rows() > 0 ? Vec(*sub.grad_g * d) : Vec();
    double alpha_max = cfg.alpha_cap;
    Index argmin_row = -1;
    for (Index j = 0; j < gd.size(); ++j) {
      if (gd[j] > 1e-14) {
        const double ratio = -sub.g_vals[j] / gd[j];
        if (ratio < alpha_max) {
          alpha_max = ratio;
          argmin_row = j;
        }
      }
    }
    alpha_max = std::clamp(alpha_max, 0.0, cfg.alpha_cap);

    double sigma_beta = 0.0;
    double alpha = 0.0;
    switch (cfg.step_mode) {
      case StepMode::sigmoid_alpha_max:
        sigma_beta = 1.0 / (1.0 + std::exp(-stage.beta));
        alpha = sigma_beta * alpha_max;
        break;
      case StepMode::alpha_max:
        alpha = alpha_max;
        break;
      case StepMode::fixed_inv_m:
        alpha = 1.0 / cfg.penalty.M;
        break;
    }

    y += alpha * d;

    if (srec) {
      srec->d = d;
      srec->gd = gd;
      srec->increasing.resize(gd.size());
      for (Index j = 0; j < gd.size(); ++j)
        srec->increasing[j] = gd[j] > 1e-14;
      srec->argmin_row = argmin_row;
      srec->alpha_max = alpha_max;
      srec->sigma_beta = sigma_beta;
      srec->alpha = alpha;
    }
    out.per_stage.push_back({d, alpha, eval_objective(inst, y)});
  }
  out.y = y;
  if (tape) tape->y_final = y;
  return out;
}

StageParams pgm_replica_stage(const std::vector<double>& gammas, Index q,
                              Index n, double bias_level, Rng& rng) {
  if (q < n)
    throw ConfigError("pgm replica needs q >= n for a left inverse of W");
  StageParams stage;
  stage.layers.reserve(gammas.size());
  for (double gamma_k : gammas) {
    Mat W = rng.normal_mat(q, n) / std::sqrt(static_cast<double>(n));
    Eigen::ColPivHouseholderQR<Mat> qr(W);
    if (qr.rank() < n) throw NumericalError("replica W lost column rank");
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(W);
    const Mat W_pinv = cod.pseudoInverse();

    LayerParams lp;
    lp.W = std::move(W);
    lp.b1 = Vec::Constant(q, bias_level);
    lp.V = gamma_k * W_pinv;
    lp.b2 = -gamma_k * (W_pinv * lp.b1);
    lp.gamma = 1.0;
    stage.layers.push_back(std::move(lp));
  }
  return stage;
}

namespace {

void push_bits(std::vector<std::uint8_t>& out, const BoolArray& bits) {
  std::uint8_t acc = 0;
  int used = 0;
  for (Index i = 0; i < bits.size(); ++i) {
    acc = static_cast<std::uint8_t>((acc << 1) | (bits[i] ? 1 : 0));
    if (++used == 8) {
      out.push_back(acc);
      acc = 0;
      used = 0;
    }
  }
  if (used > 0) out.push_back(static_cast<std::uint8_t>(acc << (8 - used)));
}

}  // namespace

std::vector<std::uint8_t> Tape::branch_signature() const {
  std::vector<std::uint8_t> sig;
  for (const TapeStage& stage : stages) {
    for (const TapeLayer& layer : stage.layers) {
      push_bits(sig, layer.hinge_mask);
      sig.push_back(static_cast<std::uint8_t>((layer.ball ? 1 : 0) |
                                              (layer.zero ? 2 : 0)));
      if (layer.z.size() > 0) {
        BoolArray relu_signs(layer.z.size());
        for (Index i = 0; i < layer.z.size(); ++i)
          relu_signs[i] = layer.z[i] > 0;
        push_bits(sig, relu_signs);
      }
    }
    push_bits(sig, stage.increasing);
    const auto row = static_cast<std::int64_t>(stage.argmin_row);
    for (int shift = 0; shift < 32; shift += 8)
      sig.push_back(static_cast<std::uint8_t>((row >> shift) & 0xff));
  }
  return sig;
}

}  // namespace dkit
