// Copyright 2026 The descentkit authors
// SPDX-License-Identifier: Apache-2.0
#include "dkit/projection.hpp"

#include <Eigen/QR>
#include <sstream>

#include "dkit/errors.hpp"

namespace dkit {

ProjectorCache build_projector(const Mat& A) {
  const Index m = A.rows();
  const Index n = A.cols();
  if (m >= n) {
    std::ostringstream os;
    os << "projector needs m < n (got m=" << m << ", n=" << n
       << "); the direction set would be {0}";
    throw ConfigError(os.str());
  }
  ProjectorCache cache;
  if (m == 0) {
    cache.basis_ = Mat(n, 0);
    return cache;
  }
  Eigen::ColPivHouseholderQR<Mat> qr(A.transpose());
  if (qr.rank() < m) {
    std::ostringstream os;
    os << "equality rows rank deficient: rank " << qr.rank() << " < " << m;
    throw ConfigError(os.str());
  }
  cache.basis_ = qr.householderQ() * Mat::Identity(n, m);
  return cache;
}

Vec ProjectorCache::project_linear(const Vec& d) const {
  if (d.size() != n()) throw std::invalid_argument("projection dim mismatch");
  if (m() == 0) return d;
  return d - basis_ * (basis_.transpose() * d);
}

Vec ProjectorCache::project(const Vec& d) const {
  Vec d_hat = project_linear(d);
  const double norm = d_hat.norm();
  if (norm < 1e-14) return Vec::Zero(d.size());
  if (norm <= 1.0) return d_hat;
  return d_hat / norm;
}

ProjectorCache::Detail ProjectorCache::project_detail(const Vec& d) const {
  Detail out;
  out.d_hat = project_linear(d);
  out.norm = out.d_hat.norm();
  if (out.norm < 1e-14) {
    out.zero = true;
    out.d = Vec::Zero(d.size());
  } else if (out.norm <= 1.0) {
    out.d = out.d_hat;
  } else {
    out.ball = true;
    out.d = out.d_hat / out.norm;
  }
  return out;
}

}  // namespace dkit
