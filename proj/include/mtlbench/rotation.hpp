// Copyright 2026 The mtlbench Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Per-task feature rotations (RotoGrad-style). Rotation t is the Cayley
// transform R = (I - A)(I + A)^{-1} of a skew-symmetric generator A, which is
// orthogonal with determinant +1 for every A.
//
// Head t consumes r_t = R_t z. Given h_t = dL_t/dr_t, the encoder sees
// R_t^T h_t, and the generators are trained so that the normalized
// R_t^T h_t line up with v = mean_t of those normalized vectors.

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mtlbench/errors.hpp"
#include "mtlbench/numerics.hpp"

namespace mtlbench {

namespace detail {

inline Mat inverse(const Mat& a) {
  const std::size_t n = a.rows();
  Mat inv(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    Vec e(n, 0.0);
    e[c] = 1.0;
    const Vec x = solve_linear(a, e);
    for (std::size_t r = 0; r < n; ++r) inv(r, c) = x[r];
  }
  return inv;
}

inline double frobenius(const Mat& m) { return norm(m.data()); }

}  // namespace detail

// (I - A)(I + A)^{-1}.
inline Mat cayley(const Mat& a) {
  const std::size_t n = a.rows();
  Mat ip = Mat::identity(n), im = Mat::identity(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      ip(i, j) += a(i, j);
      im(i, j) -= a(i, j);
    }
  return matmul(im, detail::inverse(ip));
}

class RotationSet {
 public:
  RotationSet() = default;
  RotationSet(std::size_t tasks, std::size_t feature_dim)
      : feature_dim_(feature_dim), generators_(tasks, Mat(feature_dim, feature_dim)),
        rotations_(tasks, Mat::identity(feature_dim)) {}

  std::size_t tasks() const noexcept { return generators_.size(); }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  const Mat& generator(std::size_t t) const { return generators_[t]; }
  const Mat& rotation(std::size_t t) const { return rotations_[t]; }
  std::span<const Mat> rotations() const noexcept { return rotations_; }

  // Replaces generator t by the skew part of `a` and refreshes R_t.
  void set_generator(std::size_t t, const Mat& a) {
    Mat s(feature_dim_, feature_dim_);
    for (std::size_t i = 0; i < feature_dim_; ++i)
      for (std::size_t j = 0; j < feature_dim_; ++j) s(i, j) = 0.5 * (a(i, j) - a(j, i));
    generators_[t] = std::move(s);
    rotations_[t] = cayley(generators_[t]);
  }

  // A_t <- A_t - lr * grad, grad assumed skew-symmetric.
  void descend(std::size_t t, const Mat& grad, double lr) {
    Mat a = generators_[t];
    axpy(-lr, grad.data(), a.data());
    set_generator(t, a);
  }

 private:
  std::size_t feature_dim_ = 0;
  std::vector<Mat> generators_;
  std::vector<Mat> rotations_;
};

inline Vec rotate_features(const RotationSet& rot, std::span<const double> z, std::size_t task) {
  if (z.size() != rot.feature_dim()) throw InvalidArgument("rotate_features: feature length mismatch");
  return matvec(rot.rotation(task), z);
}

struct RotationTarget {
  Vec v;
  bool degenerate = false;  // |v| ~ 0
};

// Mean of the normalized rows.
inline RotationTarget rotation_target(const Mat& feature_grads) {
  const std::size_t n = feature_grads.rows();
  if (n == 0) throw InvalidArgument("rotation_target: no tasks");
  RotationTarget out{Vec(feature_grads.cols(), 0.0), false};
  for (std::size_t t = 0; t < n; ++t) {
    const double nr = norm(feature_grads.row(t));
    if (!(nr > 1e-12)) throw ZeroGradientError(t, "rotation_target: zero feature gradient");
    axpy(1.0 / (double(n) * nr), feature_grads.row(t), out.v);
  }
  out.degenerate = norm(out.v) < 1e-12;
  return out;
}

// Gradients as seen by the encoder: row t becomes R_t^T h_t.
inline Mat encoder_side_gradients(const RotationSet& rot, const Mat& head_grads) {
  Mat out(head_grads.rows(), head_grads.cols());
  for (std::size_t t = 0; t < head_grads.rows(); ++t) {
    const Vec y = matvec(rot.rotation(t).transposed(), head_grads.row(t));
    std::copy(y.begin(), y.end(), out.row(t).begin());
  }
  return out;
}

struct RotationLoss {
  double value = 0.0;
  std::vector<Mat> generator_grads;  // skew-symmetric, one per task
};

// L_rot = sum_t |R_t^T h_t / |h_t| - v|^2 with v held fixed. Only the
// generators receive gradients; `head_grads` and `v` are constants.
//
// With y = R^T h_hat: dL/dR = 2 h_hat (y - v)^T. For R = (I - A)(I + A)^{-1},
// dR = -(I + R) dA (I + A)^{-1}, so dL/dA = -(I + R)^T (dL/dR) (I + A)^{-T},
// projected onto skew matrices.
inline RotationLoss rotation_loss(const RotationSet& rot, const Mat& head_grads, std::span<const double> v) {
  const std::size_t n = rot.tasks();
  const std::size_t f = rot.feature_dim();
  if (head_grads.rows() != n || head_grads.cols() != f || v.size() != f) {
    throw InvalidArgument("rotation_loss: shape mismatch");
  }
  RotationLoss out;
  for (std::size_t t = 0; t < n; ++t) {
    const double hn = norm(head_grads.row(t));
    if (!(hn > 1e-12)) {
      out.generator_grads.emplace_back(f, f);
      continue;
    }
    const Vec h = scaled(head_grads.row(t), 1.0 / hn);
    const Mat& r = rot.rotation(t);
    const Vec y = matvec(r.transposed(), h);
    const Vec e = sub(y, v);
    out.value += dot(e, e);

    Mat dldr(f, f);
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t j = 0; j < f; ++j) dldr(i, j) = 2.0 * h[i] * e[j];
    Mat ip = Mat::identity(f), ipr = Mat::identity(f);
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t j = 0; j < f; ++j) {
        ip(i, j) += rot.generator(t)(i, j);
        ipr(i, j) += r(i, j);
      }
    const Mat b = detail::inverse(ip);
    Mat da = matmul(matmul(ipr.transposed(), dldr), b.transposed());
    Mat skew(f, f);
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t j = 0; j < f; ++j) skew(i, j) = -(da(i, j) - da(j, i));
    out.generator_grads.push_back(std::move(skew));
  }
  return out;
}

// Largest deviation of R_t^T R_t from the identity over all tasks.
inline double orthogonality_error(const RotationSet& rot) {
  double worst = 0.0;
  for (std::size_t t = 0; t < rot.tasks(); ++t) {
    const Mat& r = rot.rotation(t);
    Mat rtr = matmul(r.transposed(), r);
    for (std::size_t i = 0; i < rtr.rows(); ++i) rtr(i, i) -= 1.0;
    for (double x : rtr.data()) worst = std::max(worst, std::abs(x));
  }
  return worst;
}

// Determinant by LU with partial pivoting.
inline double determinant(Mat a) {
  const std::size_t n = a.rows();
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(p, k))) p = i;
    if (a(p, k) == 0.0) return 0.0;
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(p, j));
      det = -det;
    }
    det *= a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double fct = a(i, k) / a(k, k);
      for (std::size_t j = k; j < n; ++j) a(i, j) -= fct * a(k, j);
    }
  }
  return det;
}

}  // namespace mtlbench
