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

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mtlbench/errors.hpp"
#include "mtlbench/numerics.hpp"

namespace mtlbench {

// Per-task gradients of the shared parameters, one row per task.
class GradientBundle {
 public:
  GradientBundle() = default;
  explicit GradientBundle(Mat g, std::vector<std::string> names = {})
      : g_(std::move(g)), names_(std::move(names)) {
    if (g_.rows() == 0) throw InvalidArgument("GradientBundle: needs at least one task");
    require_finite(g_.data(), "GradientBundle");
    if (names_.empty()) {
      for (std::size_t i = 0; i < g_.rows(); ++i) names_.push_back("task" + std::to_string(i));
    }
    if (names_.size() != g_.rows()) throw InvalidArgument("GradientBundle: one name per task required");
    norms_.resize(g_.rows());
    for (std::size_t i = 0; i < g_.rows(); ++i) norms_[i] = mtlbench::norm(g_.row(i));
  }

  static GradientBundle from_rows(const std::vector<Vec>& rows) {
    return GradientBundle(Mat::from_rows(rows));
  }

  std::size_t tasks() const noexcept { return g_.rows(); }
  std::size_t dim() const noexcept { return g_.cols(); }
  const Mat& matrix() const noexcept { return g_; }
  std::span<const double> row(std::size_t i) const { return g_.row(i); }
  double norm(std::size_t i) const { return norms_[i]; }
  const Vec& norms() const noexcept { return norms_; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const noexcept { return names_; }

  // g_i / |g_i|; throws if the row is numerically zero.
  Vec unit(std::size_t i) const {
    if (!(norms_[i] > kZeroNorm)) throw ZeroGradientError(i, "zero-norm gradient for '" + names_[i] + "'");
    return scaled(g_.row(i), 1.0 / norms_[i]);
  }

  void require_nonzero(const char* method) const {
    for (std::size_t i = 0; i < tasks(); ++i) {
      if (!(norms_[i] > kZeroNorm)) {
        throw ZeroGradientError(i, std::string(method) + ": zero-norm gradient for '" + names_[i] + "'");
      }
    }
  }

  static constexpr double kZeroNorm = 1e-12;

 private:
  Mat g_;
  Vec norms_;
  std::vector<std::string> names_;
};

}  // namespace mtlbench
