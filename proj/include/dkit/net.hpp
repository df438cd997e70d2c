// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "dkit/penalty.hpp"
#include "dkit/problem.hpp"
#include "dkit/projection.hpp"
#include "dkit/rng.hpp"
#include "dkit/tape.hpp"
#include "dkit/types.hpp"

namespace dkit {

/// One unrolled layer: d_next = P(d - gamma * T(u)) with
/// T(u) = V relu(W u + b1) + b2.
struct LayerParams {
  Mat W;   // q x n
  Mat V;   // n x q
  Vec b1;  // q
  Vec b2;  // n
  double gamma = 0.1;
};

struct StageParams {
  std::vector<LayerParams> layers;
  double beta = 0.0;  // pre-sigmoid step scale
};

enum class StepMode {
  sigmoid_alpha_max,  // sigma(beta) * alpha_max (default)
  alpha_max,          // the full feasible step
  fixed_inv_m,        // constant 1/M
};

struct NetConfig {
  int S = 1;
  int K = 1;
  int q = 1;
  PenaltyConfig penalty;
  double alpha_cap = 1e3;      // step bound when no constraint is increasing
  bool shared_stages = false;  // read layer weights from stage 0 everywhere
  bool use_transform = true;   // false drops T^k (the learned-PGM baseline)
  StepMode step_mode = StepMode::sigmoid_alpha_max;
  // Propagate gradients through the selected branch of alpha_max (default)
  // or treat the step size as a constant of the forward pass.
  bool alpha_grad_through = true;

  void validate() const;
};

struct NetParams {
  NetConfig config;
  std::vector<StageParams> stages;  // size S; shared mode still carries S
                                    // entries but reads layers from [0]
};

/// Uniform +-1/sqrt(fan-in) weights, zero biases, gamma_init per layer,
/// beta = 0 (step scale one half).
NetParams init_net_params(const NetConfig& config, Index n, std::uint64_t seed,
                          double gamma_init = 0.1);

Vec layer_forward(const LayerParams& lp, const SubproblemData& sub,
                  const Vec& d, bool use_transform = true);

/// Runs the K layers from d_0 = -grad_f (taken raw; the first projection
/// repairs membership in D).
Vec module_forward(const StageParams& stage, const SubproblemData& sub,
                   bool use_transform = true);

/// Largest feasible step along d: min over rows with positive directional
/// slope of -g_j / <d, grad g_j>, capped by alpha_cap (the capped branch is
/// taken when no row is increasing). Slopes below 1e-14 do not count.
double max_step(const SubproblemData& sub, const Vec& d, double alpha_cap);

struct StageTraceEntry {
  Vec d;
  double alpha = 0.0;
  double f = 0.0;  // objective after the stage's update
};

struct NetForwardResult {
  Vec y;
  std::vector<StageTraceEntry> per_stage;
};

/// Full Descent-Net pass from a feasible y0. Every iterate keeps the
/// equalities by projection and the inequalities by the step rule, for any
/// finite parameter values. When `tape` is non-null the pass is recorded
/// for the reverse pass.
NetForwardResult net_forward(const NetParams& params,
                             const ProblemInstance& inst,
                             const ProjectorCache& cache, const Vec& y0,
                             Tape* tape = nullptr);

/// Layer parameters that make a K-layer module reproduce the plain
/// projected subgradient iterates with steps `gammas`: W full column rank,
/// b1 = bias_level * 1 (large enough to keep the ReLU affine), V and b2
/// folding the pseudo-inverse so T(u) = gamma_k u. Requires q >= n and
/// bias_level > max ||W u|| over the run.
StageParams pgm_replica_stage(const std::vector<double>& gammas, Index q,
                              Index n, double bias_level, Rng& rng);

}  // namespace dkit
