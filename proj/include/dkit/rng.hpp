// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "dkit/types.hpp"

namespace dkit {

/// Seedable generator with reproducible output across platforms.
///
/// The engine is std::mt19937_64, whose bit stream is pinned by the C++
/// standard. The uniform/normal transforms are implemented here instead of
/// via std::*_distribution, whose sequences are implementation-defined;
/// with them in-repo, a (seed, call sequence) pair yields bitwise-identical
/// draws on every conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1): 53 mantissa bits of one engine draw.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller; the paired draw is cached.
  double normal();

  Vec normal_vec(Index n);
  Mat normal_mat(Index rows, Index cols);  // row-major fill order
  Vec uniform_vec(Index n, double lo, double hi);

  /// Fisher-Yates shuffle of [0, n) index vector.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dkit
