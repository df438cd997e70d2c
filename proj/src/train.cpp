// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#include "dkit/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <thread>

#include "dkit/errors.hpp"
#include "dkit/rng.hpp"

namespace dkit {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr_net > 0) || !(lr_beta > 0))
    throw ConfigError("learning rates must be positive");
  if (!(lr_decay > 0)) throw ConfigError("lr_decay must be positive");
  for (std::size_t i = 1; i < lr_milestones.size(); ++i)
    if (lr_milestones[i] <= lr_milestones[i - 1])
      throw ConfigError("lr_milestones must be increasing");
  if (loss_lambda_g < 0 || loss_lambda_h < 0)
    throw ConfigError("loss weights must be nonnegative");
  if (grad_clip && !(*grad_clip > 0))
    throw ConfigError("grad_clip must be positive when set");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

double loss(const ProblemInstance& inst, const Vec& y, const TrainConfig& cfg) {
  const auto [eq, ineq] = constraint_values(inst, y);
  double value = eval_objective(inst, y);
  if (ineq.size() > 0) value += cfg.loss_lambda_g * ineq.cwiseMax(0.0).sum();
  if (eq.size() > 0) value += cfg.loss_lambda_h * eq.cwiseAbs().sum();
  return value;
}

NetGrads NetGrads::zeros_like(const NetParams& params) {
  NetGrads grads;
  grads.stages.resize(params.stages.size());
  for (std::size_t s = 0; s < params.stages.size(); ++s) {
    const StageParams& src = params.stages[s];
    StageParams& dst = grads.stages[s];
    dst.beta = 0.0;
    dst.layers.resize(src.layers.size());
    for (std::size_t k = 0; k < src.layers.size(); ++k) {
      dst.layers[k].W = Mat::Zero(src.layers[k].W.rows(), src.layers[k].W.cols());
      dst.layers[k].V = Mat::Zero(src.layers[k].V.rows(), src.layers[k].V.cols());
      dst.layers[k].b1 = Vec::Zero(src.layers[k].b1.size());
      dst.layers[k].b2 = Vec::Zero(src.layers[k].b2.size());
      dst.layers[k].gamma = 0.0;
    }
  }
  return grads;
}

void NetGrads::add_scaled(const NetGrads& other, double scale) {
  for (std::size_t s = 0; s < stages.size(); ++s) {
    stages[s].beta += scale * other.stages[s].beta;
    for (std::size_t k = 0; k < stages[s].layers.size(); ++k) {
      LayerParams& dst = stages[s].layers[k];
      const LayerParams& src = other.stages[s].layers[k];
      dst.W += scale * src.W;
      dst.V += scale * src.V;
      dst.b1 += scale * src.b1;
      dst.b2 += scale * src.b2;
      dst.gamma += scale * src.gamma;
    }
  }
}

namespace {

// Subgradient of |h| with a dead zone: the equality residuals of feasible
// outputs are floating-point noise whose sign carries no information.
double sign_thresholded(double v, double tol = 1e-12) {
  if (v > tol) return 1.0;
  if (v < -tol) return -1.0;
  return 0.0;
}

}  // namespace

NetGrads backward(const Tape& tape, const NetParams& params,
                  const ProblemInstance& inst, const ProjectorCache& cache,
                  const TrainConfig& cfg, double seed_grad) {
  const NetConfig& net_cfg = params.config;
  const LinearConstraints& con = inst.constraints;
  const Index l = con.n_ineq();
  if (tape.stages.size() != static_cast<std::size_t>(net_cfg.S))
    throw NumericalError("tape does not match the network configuration");

  NetGrads grads = NetGrads::zeros_like(params);

  // Loss seed at the final iterate.
  Vec ybar = eval_gradient(inst, tape.y_final);
  if (l > 0) {
    const Vec g_final = con.G * tape.y_final - con.h;
    Vec relu_sign(l);
    for (Index j = 0; j < l; ++j) relu_sign[j] = g_final[j] > 0 ? 1.0 : 0.0;
    ybar += cfg.loss_lambda_g * (con.G.transpose() * relu_sign);
  }
  if (con.n_eq() > 0) {
    const Vec h_final = con.A * tape.y_final - con.b_eq;
    Vec h_sign(h_final.size());
    for (Index i = 0; i < h_final.size(); ++i)
      h_sign[i] = sign_thresholded(h_final[i]);
    ybar += cfg.loss_lambda_h * (con.A.transpose() * h_sign);
  }
  ybar *= seed_grad;

  for (int s = net_cfg.S - 1; s >= 0; --s) {
    const TapeStage& rec = tape.stages[static_cast<std::size_t>(s)];
    const std::size_t eff = net_cfg.shared_stages ? 0 : static_cast<std::size_t>(s);
    const StageParams& stage = params.stages[eff];
    StageParams& sgrads = grads.stages[eff];

    // y_{s+1} = y_s + alpha d
    const double abar = rec.d.dot(ybar);
    Vec dbar = rec.alpha * ybar;
    double amax_bar = 0.0;
    switch (net_cfg.step_mode) {
      case StepMode::sigmoid_alpha_max: {
        const double sct = rec.sigma_beta;
        grads.stages[static_cast<std::size_t>(s)].beta +=
            sct * (1.0 - sct) * rec.alpha_max * abar;
        amax_bar = sct * abar;
        break;
      }
      case StepMode::alpha_max:
        amax_bar = abar;
        break;
      case StepMode::fixed_inv_m:
        break;
    }

    Vec gbar = Vec::Zero(l);
    if (net_cfg.alpha_grad_through && amax_bar != 0.0 && rec.argmin_row >= 0 &&
        rec.alpha_max > 0.0 && rec.alpha_max < net_cfg.alpha_cap) {
      const Index j = rec.argmin_row;
      const double slope = rec.gd[j];
      gbar[j] += amax_bar * (-1.0 / slope);
      const double gd_bar = amax_bar * (rec.g[j] / (slope * slope));
      dbar += gd_bar * con.G.row(j).transpose();
    }

    Vec cbar = Vec::Zero(l);
    Vec gfbar = Vec::Zero(inst.dim());

    for (int k = static_cast<int>(rec.layers.size()) - 1; k >= 0; --k) {
      const TapeLayer& L = rec.layers[static_cast<std::size_t>(k)];
      const LayerParams& lp = stage.layers[static_cast<std::size_t>(k)];
      LayerParams& lg = sgrads.layers[static_cast<std::size_t>(k)];

      Vec dhat_bar;
      if (L.zero) {
        dhat_bar = Vec::Zero(inst.dim());
      } else if (L.ball) {
        dhat_bar = (dbar - L.d_out * L.d_out.dot(dbar)) / L.dhat_norm;
      } else {
        dhat_bar = dbar;
      }
      const Vec wbar = cache.project_linear(dhat_bar);

      lg.gamma += -L.t.dot(wbar);
      const Vec tbar = -lp.gamma * wbar;

      Vec ubar;
      if (net_cfg.use_transform) {
        lg.V += tbar * L.r.transpose();
        lg.b2 += tbar;
        Vec rbar = lp.V.transpose() * tbar;
        for (Index i = 0; i < rbar.size(); ++i)
          if (L.z[i] <= 0) rbar[i] = 0.0;
        lg.W += rbar * L.u.transpose();
        lg.b1 += rbar;
        ubar = lp.W.transpose() * rbar;
      } else {
        ubar = tbar;
      }

      gfbar += ubar;
      if (l > 0) {
        const Vec g_ubar = con.G * ubar;
        for (Index j = 0; j < l; ++j)
          if (L.hinge_mask[j]) cbar[j] += g_ubar[j];
      }
      dbar = wbar;  // adjoint of the layer input
    }

    // d_0 = -grad_f
    gfbar -= dbar;

    // penalty weights
    const PenaltyConfig& pc = net_cfg.penalty;
    if (l > 0) {
      if (pc.weight_kind == PenaltyWeightKind::ratio) {
        double norm_bar = 0.0;
        for (Index j = 0; j < l; ++j) {
          const double inv = 1.0 / (pc.epsilon - 0.5 * pc.M * rec.g[j]);
          norm_bar += cbar[j] * inv;
          gbar[j] += cbar[j] * rec.grad_f_norm * 0.5 * pc.M * inv * inv;
        }
        if (rec.grad_f_norm > 0)
          gfbar += (norm_bar / rec.grad_f_norm) * rec.grad_f;
      } else {
        for (Index j = 0; j < l; ++j) gbar[j] += -rec.c[j] * cbar[j];
      }
    }

    // g = G y - h and grad_f = grad f(y)
    Vec ynext_bar = ybar;
    if (l > 0) ynext_bar += con.G.transpose() * gbar;
    ynext_bar += eval_hessian_vec(inst, rec.y, gfbar);
    ybar = std::move(ynext_bar);
  }

  return grads;
}

std::vector<std::uint8_t> branch_signature(const Tape& tape,
                                           const ProblemInstance& inst,
                                           const TrainConfig& cfg) {
  (void)cfg;
  std::vector<std::uint8_t> sig = tape.branch_signature();
  const LinearConstraints& con = inst.constraints;
  if (con.n_ineq() > 0) {
    const Vec g = con.G * tape.y_final - con.h;
    for (Index j = 0; j < g.size(); ++j)
      sig.push_back(g[j] > 0 ? 1 : 0);
  }
  if (con.n_eq() > 0) {
    const Vec h = con.A * tape.y_final - con.b_eq;
    for (Index i = 0; i < h.size(); ++i)
      sig.push_back(static_cast<std::uint8_t>(sign_thresholded(h[i]) + 1));
  }
  return sig;
}

namespace {

Index weights_size(const std::vector<StageParams>& stages) {
  Index total = 0;
  for (const StageParams& stage : stages)
    for (const LayerParams& lp : stage.layers)
      total += lp.W.size() + lp.V.size() + lp.b1.size() + lp.b2.size() + 1;
  return total;
}

template <typename StageRange, typename Fn>
void visit_layer_tensors(StageRange& stages, Fn&& fn) {
  for (auto& stage : stages)
    for (auto& lp : stage.layers) fn(lp);
}

}  // namespace

Vec pack_weights(const NetParams& params) {
  Vec flat(weights_size(params));
  Index pos = 0;
  visit_layer_tensors(params.stages, [&](const LayerParams& lp) {
    for (Index i = 0; i < lp.W.rows(); ++i)
      for (Index j = 0; j < lp.W.cols(); ++j) flat[pos++] = lp.W(i, j);
    for (Index i = 0; i < lp.V.rows(); ++i)
      for (Index j = 0; j < lp.V.cols(); ++j) flat[pos++] = lp.V(i, j);
    flat.segment(pos, lp.b1.size()) = lp.b1;
    pos += lp.b1.size();
    flat.segment(pos, lp.b2.size()) = lp.b2;
    pos += lp.b2.size();
    flat[pos++] = lp.gamma;
  });
  return flat;
}

void unpack_weights(const Vec& flat, NetParams& params) {
  if (flat.size() != weights_size(params))
    throw std::invalid_argument("flat weight vector has the wrong size");
  Index pos = 0;
  visit_layer_tensors(params.stages, [&](LayerParams& lp) {
    for (Index i = 0; i < lp.W.rows(); ++i)
      for (Index j = 0; j < lp.W.cols(); ++j) lp.W(i, j) = flat[pos++];
    for (Index i = 0; i < lp.V.rows(); ++i)
      for (Index j = 0; j < lp.V.cols(); ++j) lp.V(i, j) = flat[pos++];
    lp.b1 = flat.segment(pos, lp.b1.size());
    pos += lp.b1.size();
    lp.b2 = flat.segment(pos, lp.b2.size());
    pos += lp.b2.size();
    lp.gamma = flat[pos++];
  });
}

Vec pack_weight_grads(const NetGrads& grads, const NetParams& params) {
  (void)params;
  Vec flat(weights_size(NetParams{{}, grads.stages}));
  Index pos = 0;
  visit_layer_tensors(grads.stages, [&](const LayerParams& lp) {
    for (Index i = 0; i < lp.W.rows(); ++i)
      for (Index j = 0; j < lp.W.cols(); ++j) flat[pos++] = lp.W(i, j);
    for (Index i = 0; i < lp.V.rows(); ++i)
      for (Index j = 0; j < lp.V.cols(); ++j) flat[pos++] = lp.V(i, j);
    flat.segment(pos, lp.b1.size()) = lp.b1;
    pos += lp.b1.size();
    flat.segment(pos, lp.b2.size()) = lp.b2;
    pos += lp.b2.size();
    flat[pos++] = lp.gamma;
  });
  return flat;
}

Vec pack_betas(const NetParams& params) {
  Vec betas(static_cast<Index>(params.stages.size()));
  for (std::size_t s = 0; s < params.stages.size(); ++s)
    betas[static_cast<Index>(s)] = params.stages[s].beta;
  return betas;
}

void unpack_betas(const Vec& betas, NetParams& params) {
  if (betas.size() != static_cast<Index>(params.stages.size()))
    throw std::invalid_argument("beta vector has the wrong size");
  for (std::size_t s = 0; s < params.stages.size(); ++s)
    params.stages[s].beta = betas[static_cast<Index>(s)];
}

Vec pack_beta_grads(const NetGrads& grads) {
  Vec betas(static_cast<Index>(grads.stages.size()));
  for (std::size_t s = 0; s < grads.stages.size(); ++s)
    betas[static_cast<Index>(s)] = grads.stages[s].beta;
  return betas;
}

namespace {

struct AdamState {
  Vec m, v;
  long t = 0;

  explicit AdamState(Index size) : m(Vec::Zero(size)), v(Vec::Zero(size)) {}

  void step(Vec& theta, const Vec& grad, double lr) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const Vec m_hat = m / bc1;
    const Vec v_hat = v / bc2;
    theta -= lr * m_hat.cwiseQuotient(v_hat.cwiseSqrt().array().matrix() +
                                      Vec::Constant(theta.size(), eps));
  }
};

void clip_norm(Vec& grad, const std::optional<double>& threshold) {
  if (!threshold) return;
  const double norm = grad.norm();
  if (norm > *threshold) grad *= *threshold / norm;
}

struct InstanceEval {
  double loss = 0.0;
  double eq_vio = 0.0;
  double ineq_vio = 0.0;
  double penalty_term = 0.0;
  double rel_err = 0.0;
};

}  // namespace

TrainResult train(NetParams params, const std::vector<ProblemInstance>& data,
                  const TrainConfig& cfg, const ProjectorCache& cache,
                  const std::vector<double>* oracle_objectives) {
  cfg.validate();
  params.config.validate();
  if (data.empty()) throw std::invalid_argument("train needs instances");
  if (oracle_objectives && oracle_objectives->size() != data.size())
    throw std::invalid_argument("oracle objective list length mismatch");

  TrainResult result;
  std::vector<Vec> starts;
  starts.reserve(data.size());
  for (const ProblemInstance& inst : data) starts.push_back(feasible_init(inst));

  Vec theta_w = pack_weights(params);
  Vec theta_b = pack_betas(params);
  AdamState adam_w(theta_w.size());
  AdamState adam_b(theta_b.size());

  Rng shuffle_rng(cfg.seed);
  NetParams last_good = params;

  const int threads = std::max(1, cfg.threads);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t_epoch = std::chrono::steady_clock::now();
    int decays = 0;
    for (int milestone : cfg.lr_milestones)
      if (milestone <= epoch) ++decays;
    const double lr_w = cfg.lr_net * std::pow(cfg.lr_decay, decays);
    const double lr_b = cfg.lr_beta * std::pow(cfg.lr_decay, decays);

    const std::vector<std::size_t> order = shuffle_rng.permutation(data.size());

    double epoch_loss = 0.0, epoch_eq = 0.0, epoch_ineq = 0.0;
    double epoch_rel = 0.0, epoch_pen = 0.0;
    bool diverged = false;

    for (std::size_t begin = 0; begin < order.size() && !diverged;
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t batch = end - begin;

      std::vector<NetGrads> chunk_grads;
      std::vector<std::vector<InstanceEval>> chunk_evals(
          static_cast<std::size_t>(threads));
      chunk_grads.reserve(static_cast<std::size_t>(threads));
      for (int t = 0; t < threads; ++t)
        chunk_grads.push_back(NetGrads::zeros_like(params));

      const double inv_batch = 1.0 / static_cast<double>(batch);
      auto worker = [&](int tid) {
        for (std::size_t i = begin + static_cast<std::size_t>(tid); i < end;
             i += static_cast<std::size_t>(threads)) {
          const ProblemInstance& inst = data[order[i]];
          Tape tape;
          net_forward(params, inst, cache, starts[order[i]], &tape);
          const double value = loss(inst, tape.y_final, cfg);
          NetGrads g = backward(tape, params, inst, cache, cfg);
          chunk_grads[static_cast<std::size_t>(tid)].add_scaled(g, inv_batch);

          InstanceEval ev;
          ev.loss = value;
          const auto [eq, ineq] = constraint_values(inst, tape.y_final);
          ev.eq_vio = eq.size() > 0 ? eq.cwiseAbs().mean() : 0.0;
          ev.ineq_vio = ineq.size() > 0 ? ineq.cwiseMax(0.0).mean() : 0.0;
          ev.penalty_term = value - eval_objective(inst, tape.y_final);
          if (oracle_objectives) {
            const double target = (*oracle_objectives)[order[i]];
            ev.rel_err = std::abs(eval_objective(inst, tape.y_final) - target) /
                         std::max(std::abs(target), 1e-12);
          }
          chunk_evals[static_cast<std::size_t>(tid)].push_back(ev);
        }
      };
      if (threads == 1) {
        worker(0);
      } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
        for (std::thread& th : pool) th.join();
      }

      NetGrads batch_grads = std::move(chunk_grads.front());
      for (int t = 1; t < threads; ++t)
        batch_grads.add_scaled(chunk_grads[static_cast<std::size_t>(t)], 1.0);

      double batch_loss = 0.0;
      for (const auto& evals : chunk_evals)
        for (const InstanceEval& ev : evals) {
          batch_loss += ev.loss;
          epoch_loss += ev.loss;
          epoch_eq += ev.eq_vio;
          epoch_ineq += ev.ineq_vio;
          epoch_rel += ev.rel_err;
          epoch_pen = std::max(epoch_pen, ev.penalty_term);
        }
      if (!std::isfinite(batch_loss)) {
        diverged = true;
        break;
      }

      Vec gw = pack_weight_grads(batch_grads, params);
      Vec gb = pack_beta_grads(batch_grads);
      clip_norm(gw, cfg.grad_clip);
      clip_norm(gb, cfg.grad_clip);

      adam_w.step(theta_w, gw, lr_w);
      if (cfg.beta_opt == BetaOptimizer::adam)
        adam_b.step(theta_b, gb, lr_b);
      else
        theta_b -= lr_b * gb;

      unpack_weights(theta_w, params);
      unpack_betas(theta_b, params);
    }

    if (diverged) {
      result.diverged = true;
      result.params = last_good;
      result.epochs_completed = epoch - 1;
      return result;
    }

    const double n_inst = static_cast<double>(data.size());
    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = epoch_loss / n_inst;
    stats.eq_vio = epoch_eq / n_inst;
    stats.ineq_vio = epoch_ineq / n_inst;
    stats.rel_err = oracle_objectives ? epoch_rel / n_inst : 0.0;
    stats.penalty_term = epoch_pen;
    stats.lr_net = lr_w;
    stats.lr_beta = lr_b;
    stats.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t_epoch)
                        .count();
    result.history.push_back(stats);
    last_good = params;
  }

  result.params = std::move(params);
  result.epochs_completed = cfg.epochs;
  return result;
}

}  // namespace dkit
