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

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>

#include "mtlbench/errors.hpp"
#include "mtlbench/numerics.hpp"

namespace mtlbench {

enum class WeightConvention { kSumToOne, kSumToN, kFree };

inline std::string_view to_string(WeightConvention c) {
  switch (c) {
    case WeightConvention::kSumToOne: return "sum_to_one";
    case WeightConvention::kSumToN: return "sum_to_n";
    case WeightConvention::kFree: return "free";
  }
  return "free";
}

// Per-task weights plus the normalization they were produced under. Values
// must be finite; sign is not enforced here because IMTL-G and CDTT produce
// signed coefficients (see all_nonnegative()).
class WeightVector {
 public:
  WeightVector() = default;
  WeightVector(Vec values, WeightConvention convention)
      : values_(std::move(values)), convention_(convention) {
    require_finite(values_, "WeightVector");
  }

  static WeightVector ones(std::size_t n) { return {Vec(n, 1.0), WeightConvention::kSumToN}; }
  static WeightVector uniform(std::size_t n) {
    return {Vec(n, 1.0 / double(n)), WeightConvention::kSumToOne};
  }

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const Vec& values() const noexcept { return values_; }
  WeightConvention convention() const noexcept { return convention_; }

  bool all_nonnegative() const {
    for (double v : values_)
      if (v < 0.0) return false;
    return true;
  }

  // Rescaled to sum one. A vector whose sum is not positive maps to uniform.
  WeightVector normalized() const {
    const double s = sum(values_);
    if (!(s > 0.0) || !std::isfinite(s)) return uniform(values_.size());
    return {scaled(values_, 1.0 / s), WeightConvention::kSumToOne};
  }

  friend bool operator==(const WeightVector&, const WeightVector&) = default;

 private:
  Vec values_;
  WeightConvention convention_ = WeightConvention::kFree;
};

}  // namespace mtlbench
