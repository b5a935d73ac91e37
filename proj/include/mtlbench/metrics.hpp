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

// Evaluation arithmetic: relative multi-task gain, mean rank, the gradient
// interference statistic, and fixed-weight extraction from weight traces.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mtlbench/errors.hpp"
#include "mtlbench/gradient_bundle.hpp"
#include "mtlbench/numerics.hpp"
#include "mtlbench/weight_vector.hpp"

namespace mtlbench {

struct Metric {
  std::string name;
  double value = 0.0;
  bool lower_is_better = false;

  friend bool operator==(const Metric&, const Metric&) = default;
};

struct TaskMetricSet {
  std::string task;
  std::vector<Metric> metrics;

  friend bool operator==(const TaskMetricSet&, const TaskMetricSet&) = default;
};

// Per-task metrics of one model.
using TaskMetrics = std::vector<TaskMetricSet>;

namespace detail {

inline void require_aligned(const TaskMetrics& a, const TaskMetrics& b, const char* what) {
  if (a.size() != b.size()) throw InvalidArgument(std::string(what) + ": task count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].metrics.empty()) throw InvalidArgument(std::string(what) + ": task without metrics");
    if (a[i].metrics.size() != b[i].metrics.size()) {
      throw InvalidArgument(std::string(what) + ": metric count mismatch for task " + std::to_string(i));
    }
    for (std::size_t j = 0; j < a[i].metrics.size(); ++j) {
      if (a[i].metrics[j].lower_is_better != b[i].metrics[j].lower_is_better) {
        throw InvalidArgument(std::string(what) + ": lower_is_better flags differ");
      }
    }
  }
}

}  // namespace detail

// Mean over tasks of the mean over metrics of
// (-1)^l (M_smto - M_base) / M_base, in percent.
inline double delta_mtm(const TaskMetrics& smto, const TaskMetrics& baseline) {
  detail::require_aligned(smto, baseline, "delta_mtm");
  if (smto.empty()) throw InvalidArgument("delta_mtm: no tasks");
  double total = 0.0;
  for (std::size_t i = 0; i < smto.size(); ++i) {
    double task_sum = 0.0;
    const auto& ms = smto[i].metrics;
    const auto& mb = baseline[i].metrics;
    for (std::size_t j = 0; j < ms.size(); ++j) {
      if (mb[j].value == 0.0) {
        throw InvalidArgument("delta_mtm: zero baseline for " + baseline[i].task + "/" + mb[j].name);
      }
      const double sign = mb[j].lower_is_better ? -1.0 : 1.0;
      task_sum += sign * (ms[j].value - mb[j].value) / mb[j].value;
    }
    total += task_sum / double(ms.size());
  }
  return 100.0 * total / double(smto.size());
}

// Average ranks (1 = best) of `values`; ties share the mean of their ranks.
inline Vec average_ranks(std::span<const double> values, bool lower_is_better) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  auto better = [&](std::size_t a, std::size_t b) {
    return lower_is_better ? values[a] < values[b] : values[a] > values[b];
  };
  std::stable_sort(order.begin(), order.end(), better);
  Vec ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * double(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

// Mean over tasks of the mean over metrics of each model's rank.
inline Vec mean_rank(const std::vector<TaskMetrics>& all) {
  if (all.empty()) throw InvalidArgument("mean_rank: no models");
  for (const auto& m : all) detail::require_aligned(m, all.front(), "mean_rank");
  const std::size_t s = all.size();
  const std::size_t tasks = all.front().size();
  Vec mr(s, 0.0);
  for (std::size_t i = 0; i < tasks; ++i) {
    const std::size_t nm = all.front()[i].metrics.size();
    Vec task_acc(s, 0.0);
    for (std::size_t j = 0; j < nm; ++j) {
      Vec vals(s);
      for (std::size_t k = 0; k < s; ++k) vals[k] = all[k][i].metrics[j].value;
      const Vec r = average_ranks(vals, all.front()[i].metrics[j].lower_is_better);
      for (std::size_t k = 0; k < s; ++k) task_acc[k] += r[k];
    }
    for (std::size_t k = 0; k < s; ++k) mr[k] += task_acc[k] / double(nm);
  }
  for (double& v : mr) v /= double(tasks);
  return mr;
}

// ---------------------------------------------------------------------------
// Interference
// ---------------------------------------------------------------------------

// Mean cosine between each task gradient and the mean gradient, averaged over
// a stream of bundles.
class InterferenceAccumulator {
 public:
  // Returns this bundle's statistic.
  double add(const GradientBundle& b) {
    const std::size_t n = b.tasks();
    Vec mean(b.dim(), 0.0);
    for (std::size_t i = 0; i < n; ++i) axpy(1.0 / double(n), b.row(i), mean);
    const double mn = norm(mean);
    double stat = 0.0;
    if (!(mn >= 1e-12)) {
      ++degenerate_;
    } else {
      double acc = 0.0;
      std::size_t used = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!(b.norm(i) > GradientBundle::kZeroNorm)) {
          ++skipped_tasks_;
          continue;
        }
        acc += dot(b.row(i), mean) / (b.norm(i) * mn);
        ++used;
      }
      stat = used > 0 ? acc / double(used) : 0.0;
    }
    sum_ += stat;
    ++count_;
    return stat;
  }

  double mean() const noexcept { return count_ == 0 ? 0.0 : sum_ / double(count_); }
  std::size_t count() const noexcept { return count_; }
  std::size_t degenerate() const noexcept { return degenerate_; }
  std::size_t skipped_tasks() const noexcept { return skipped_tasks_; }
  void reset() { *this = InterferenceAccumulator{}; }

 private:
  double sum_ = 0.0;
  std::size_t count_ = 0;
  std::size_t degenerate_ = 0;
  std::size_t skipped_tasks_ = 0;
};

inline double interference(const std::vector<GradientBundle>& bundles) {
  InterferenceAccumulator acc;
  for (const auto& b : bundles) acc.add(b);
  return acc.mean();
}

// ---------------------------------------------------------------------------
// Fixed-weight extraction
// ---------------------------------------------------------------------------

struct WeightTrace {
  std::string smto;
  std::uint64_t seed = 0;
  std::vector<std::size_t> epoch;  // epoch index of each step
  std::vector<Vec> weights;        // one vector per step

  void push(std::size_t ep, Vec w) {
    if (!weights.empty() && w.size() != weights.front().size()) {
      throw InvalidArgument("WeightTrace: inconsistent task count");
    }
    if (!epoch.empty() && ep < epoch.back()) throw InvalidArgument("WeightTrace: epochs must be nondecreasing");
    epoch.push_back(ep);
    weights.push_back(std::move(w));
  }
  bool empty() const noexcept { return weights.empty(); }
  std::size_t tasks() const { return weights.empty() ? 0 : weights.front().size(); }

  friend bool operator==(const WeightTrace&, const WeightTrace&) = default;
};

// Mean weight vector of every epoch present in the trace, in epoch order.
inline std::vector<Vec> epoch_means(const WeightTrace& trace) {
  if (trace.empty()) throw InvalidArgument("epoch_means: empty trace");
  std::vector<Vec> out;
  std::size_t i = 0;
  while (i < trace.weights.size()) {
    const std::size_t ep = trace.epoch[i];
    Vec acc(trace.tasks(), 0.0);
    std::size_t cnt = 0;
    for (; i < trace.weights.size() && trace.epoch[i] == ep; ++i, ++cnt) axpy(1.0, trace.weights[i], acc);
    for (double& v : acc) v /= double(cnt);
    out.push_back(std::move(acc));
  }
  return out;
}

// EMA over epoch means, initialized to the first mean, no bias correction:
// e_k = beta e_{k-1} + (1 - beta) m_k. Returns the last value (not normalized).
inline Vec ema_of_epoch_means(const WeightTrace& trace, double beta = 0.9) {
  if (!(beta >= 0.0 && beta < 1.0)) throw InvalidArgument("ema_of_epoch_means: beta must be in [0, 1)");
  const auto means = epoch_means(trace);
  Vec e = means.front();
  for (std::size_t k = 1; k < means.size(); ++k)
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = beta * e[i] + (1.0 - beta) * means[k][i];
  return e;
}

// Last-epoch EMA of the epoch means, renormalized onto the simplex.
inline WeightVector extract_fixed_weights(const WeightTrace& trace, double beta = 0.9) {
  if (!(beta > 0.0 && beta < 1.0)) throw InvalidArgument("extract_fixed_weights: beta must be in (0, 1)");
  Vec e = ema_of_epoch_means(trace, beta);
  for (double& v : e) v = std::max(v, 0.0);
  return WeightVector(std::move(e), WeightConvention::kFree).normalized();
}

// Five-number summary.
struct Quantiles {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

// Linear interpolation between order statistics.
inline double quantile(Vec v, double q) {
  if (v.empty()) throw InvalidArgument("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * double(v.size() - 1);
  const std::size_t lo = std::size_t(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

inline Quantiles five_numbers(const Vec& v) {
  return {quantile(v, 0.0), quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75), quantile(v, 1.0)};
}

inline double mean_of(const Vec& v) { return v.empty() ? 0.0 : sum(v) / double(v.size()); }

// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
inline double stddev_of(const Vec& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

}  // namespace mtlbench
