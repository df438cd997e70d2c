// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "dkit/types.hpp"

namespace dkit {

/// Forward-pass record of one Descent-Net evaluation, consumed by the
/// reverse pass. Nodes are grouped by stage and layer in execution order;
/// the adjoint replay walks them strictly backwards exactly once. Discrete
/// decisions (hinge indicators, the step-size argmin, projection branches,
/// ReLU signs) are stored so the backward pass differentiates the selected
/// smooth branch and so tests can detect branch crossings.
struct TapeLayer {
  Vec d_in;        // layer input direction
  Vec u;           // subgradient with the recorded hinge mask
  Vec z;           // W u + b1 (pre-activation; empty when T is disabled)
  Vec r;           // relu(z)
  Vec t;           // V r + b2, or u itself when T is disabled
  Vec w_pre;       // d_in - gamma * t
  Vec d_hat;       // projection linear part
  Vec d_out;
  double dhat_norm = 0.0;
  bool ball = false;  // normalization branch fired
  bool zero = false;  // degenerate direction collapsed to 0
  BoolArray hinge_mask;
};

struct TapeStage {
  Vec y;
  Vec grad_f;
  double grad_f_norm = 0.0;
  Vec g;  // G y - h
  Vec c;  // penalty weights
  std::vector<TapeLayer> layers;
  Vec d;   // module output d_K
  Vec gd;  // G d
  BoolArray increasing;   // rows with <d, grad g_j> above the floor
  Index argmin_row = -1;  // binding row of the max step, -1 = capped branch
  double alpha_max = 0.0;
  double sigma_beta = 0.0;  // sigmoid(beta) when the learned scale is used
  double alpha = 0.0;
};

struct Tape {
  std::vector<TapeStage> stages;
  Vec y_final;

  /// Byte encoding of every discrete decision in the pass. Two evaluations
  /// with equal signatures lie in the same smooth region, where analytic
  /// gradients must match finite differences.
  std::vector<std::uint8_t> branch_signature() const;
};

}  // namespace dkit
