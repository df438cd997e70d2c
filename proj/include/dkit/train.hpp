// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dkit/net.hpp"
#include "dkit/problem.hpp"
#include "dkit/projection.hpp"
#include "dkit/tape.hpp"
#include "dkit/types.hpp"

namespace dkit {

enum class BetaOptimizer { sgd, adam };

struct TrainConfig {
  int epochs = 150;
  int batch_size = 128;
  double lr_net = 0.01;
  double lr_beta = 0.01;
  std::vector<int> lr_milestones = {50, 100, 150};  // 1-based epoch indices
  double lr_decay = 0.1;
  double loss_lambda_g = 5.0;
  double loss_lambda_h = 5.0;
  std::optional<double> grad_clip;  // per-group gradient norm threshold
  BetaOptimizer beta_opt = BetaOptimizer::sgd;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

/// Penalty training loss l_p(y) = f(y) + lambda_g ||relu(g)||_1
/// + lambda_h ||h||_1.
double loss(const ProblemInstance& inst, const Vec& y, const TrainConfig& cfg);

/// Gradients of one loss evaluation with respect to every parameter; the
/// layout mirrors NetParams::stages.
struct NetGrads {
  std::vector<StageParams> stages;

  static NetGrads zeros_like(const NetParams& params);
  void add_scaled(const NetGrads& other, double scale);
};

/// Reverse pass over one recorded forward + loss evaluation. Hinge
/// indicators, the step-size argmin, ReLU signs and projection branches are
/// constants of the forward pass; everything smooth (penalty weights, the
/// objective gradient, the selected step ratio) is differentiated. In
/// shared-stage mode all layer gradients accumulate into stage 0.
NetGrads backward(const Tape& tape, const NetParams& params,
                  const ProblemInstance& inst, const ProjectorCache& cache,
                  const TrainConfig& cfg, double seed_grad = 1.0);

/// Branch record of one forward + loss evaluation: the tape's discrete
/// decisions plus the loss kinks (signs of g and h at the output). Finite
/// difference checks are only valid between points with equal signatures.
std::vector<std::uint8_t> branch_signature(const Tape& tape,
                                           const ProblemInstance& inst,
                                           const TrainConfig& cfg);

// Flat parameter packing (declaration order: per stage, per layer W, V,
// b1, b2, gamma; betas form their own group). The checkpoint format and the
// optimizers share this layout.
Vec pack_weights(const NetParams& params);
void unpack_weights(const Vec& flat, NetParams& params);
Vec pack_weight_grads(const NetGrads& grads, const NetParams& params);
Vec pack_betas(const NetParams& params);
void unpack_betas(const Vec& betas, NetParams& params);
Vec pack_beta_grads(const NetGrads& grads);

struct EpochStats {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double eq_vio = 0.0;
  double ineq_vio = 0.0;
  double rel_err = 0.0;  // objective error vs oracle targets, when given
  double penalty_term = 0.0;  // max l1 penalty share of the loss (canary)
  double lr_net = 0.0;
  double lr_beta = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  NetParams params;
  std::vector<EpochStats> history;
  bool diverged = false;
  int epochs_completed = 0;
};

/// Mini-batch training with two parameter groups: Adam on the layer
/// weights, SGD or Adam on the betas. Deterministic for a fixed seed and
/// thread count. `oracle_objectives`, when given, must align with `data`
/// and feeds the per-epoch relative-error column.
TrainResult train(NetParams params, const std::vector<ProblemInstance>& data,
                  const TrainConfig& cfg, const ProjectorCache& cache,
                  const std::vector<double>* oracle_objectives = nullptr);

}  // namespace dkit
