// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dkit/types.hpp"

namespace dkit {

/// Projects onto D = { d : ||d||_2 <= 1, A d = 0 }.
///
/// The equality geometry is factorized once: an orthonormal basis U of
/// range(A^T) is extracted by rank-revealing QR, so each projection costs
/// two (n x m) products instead of forming A^T (A A^T)^{-1} A. The two
/// routes are algebraically identical; the basis form stays stable when A
/// is ill-conditioned.
class ProjectorCache {
 public:
  /// Linear part only: d_hat = d - U (U^T d).
  Vec project_linear(const Vec& d) const;

  /// Full projection: d_hat if ||d_hat|| <= 1, else d_hat / ||d_hat||.
  /// ||d_hat|| < 1e-14 is treated as the zero direction.
  Vec project(const Vec& d) const;

  /// Projection with the branch decisions exposed (consumed by the
  /// reverse pass, which needs the selected branch and the norm).
  struct Detail {
    Vec d;            // projected vector
    Vec d_hat;        // linear part before the ball branch
    double norm = 0;  // ||d_hat||
    bool ball = false;      // normalization branch fired
    bool zero = false;      // degenerate direction collapsed to 0
  };
  Detail project_detail(const Vec& d) const;

  Index n() const { return basis_.rows(); }
  Index m() const { return basis_.cols(); }
  const Mat& basis() const { return basis_; }

 private:
  friend ProjectorCache build_projector(const Mat& A);
  Mat basis_;  // n x m, orthonormal columns spanning range(A^T)
};

/// Factorizes the equality rows. Requires rank(A) = m and m < n;
/// rank-deficient or square inputs are rejected.
ProjectorCache build_projector(const Mat& A);

}  // namespace dkit
