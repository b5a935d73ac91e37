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

// Independent reference computations shared by the unit and acceptance tests:
// finite differences, brute-force grids and brute-force ranking.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mtlbench/metrics.hpp"
#include "mtlbench/model.hpp"
#include "mtlbench/numerics.hpp"

namespace mtlbench::oracle {

// Central differences of f at x.
inline Vec central_difference(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-6) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double relative_error(std::span<const double> a, std::span<const double> b) {
  const double scale = std::max({norm(a), norm(b), 1e-8});
  return norm(sub(a, b)) / scale;
}

// Loss of task t at parameters theta, evaluated with fixed dropout masks.
inline double task_loss_at(const NetworkSpec& spec, const Params& base, const Vec& theta, const Batch& batch,
                           std::size_t t, std::span<const Mat> rotations, const DropoutMasks* masks) {
  Params p = base;
  std::copy(theta.begin(), theta.end(), p.values().begin());
  Rng unused(0);
  return forward(spec, p, batch, unused, masks != nullptr, rotations, masks).losses[t];
}

// A small random network and batch. Classification and regression heads
// alternate; activations are smooth so finite differences are reliable.
struct TinyProblem {
  NetworkSpec spec;
  Params params;
  Batch batch;
};

inline TinyProblem tiny_problem(Rng& rng, std::size_t tasks, double dropout = 0.0) {
  TinyProblem p;
  p.spec.input_dim = 2 + rng.index(4);
  const std::size_t layers = 1 + rng.index(2);
  for (std::size_t l = 0; l < layers; ++l)
    p.spec.encoder.push_back({2 + rng.index(4), l % 2 ? Activation::kIdentity : Activation::kTanh});
  for (std::size_t t = 0; t < tasks; ++t) {
    HeadSpec h;
    h.name = "t" + std::to_string(t);
    if (rng.index(2)) h.hidden.push_back({2 + rng.index(3), Activation::kTanh});
    h.loss = t % 2 ? LossKind::kMeanSquaredError : LossKind::kCrossEntropy;
    h.output_dim = 2 + rng.index(2);
    p.spec.heads.push_back(h);
  }
  p.spec.dropout_p = dropout;
  p.params = init_params(p.spec, rng);
  const std::size_t n = 3 + rng.index(4);
  p.batch.inputs = Mat(n, p.spec.input_dim);
  for (double& v : p.batch.inputs.data()) v = rng.normal();
  for (std::size_t t = 0; t < tasks; ++t) {
    TaskTarget tt;
    if (p.spec.heads[t].loss == LossKind::kCrossEntropy) {
      for (std::size_t r = 0; r < n; ++r) tt.labels.push_back(int(rng.index(p.spec.heads[t].output_dim)));
    } else {
      tt.values = Mat(n, p.spec.heads[t].output_dim);
      for (double& v : tt.values.data()) v = rng.normal();
    }
    p.batch.targets.push_back(std::move(tt));
  }
  return p;
}

// Worst relative error over tasks between analytic per-task shared gradients
// and central differences of the task losses.
inline double shared_gradient_error(const TinyProblem& p, std::span<const Mat> rotations = {},
                                    bool with_dropout = false, std::uint64_t mask_seed = 0) {
  Rng mask_rng(mask_seed);
  const ForwardResult fw = forward(p.spec, p.params, p.batch, mask_rng, with_dropout, rotations);
  const DropoutMasks* masks = with_dropout ? &fw.masks : nullptr;
  const PerTaskGradients g = backward_per_task(p.spec, p.params, p.batch, fw, rotations);
  const Vec theta(p.params.values().begin(), p.params.values().end());
  const std::size_t shared = p.params.layout().shared_size;
  double worst = 0.0;
  for (std::size_t t = 0; t < p.spec.tasks(); ++t) {
    const Vec fd = central_difference(
        [&](const Vec& x) { return task_loss_at(p.spec, p.params, x, p.batch, t, rotations, masks); }, theta);
    const Vec fd_shared(fd.begin(), fd.begin() + std::ptrdiff_t(shared));
    worst = std::max(worst, relative_error(g.shared.row(t), fd_shared));
    auto [b, e] = p.params.layout().head_blocks[t];
    const Vec fd_head(fd.begin() + std::ptrdiff_t(b), fd.begin() + std::ptrdiff_t(e));
    worst = std::max(worst, relative_error(g.heads[t], fd_head));
  }
  return worst;
}

// Simplex grid with spacing 1/steps in 2 or 3 dimensions.
inline std::vector<Vec> simplex_grid(std::size_t dim, int steps) {
  std::vector<Vec> out;
  if (dim == 2) {
    for (int i = 0; i <= steps; ++i) out.push_back({double(i) / steps, double(steps - i) / steps});
  } else {
    for (int i = 0; i <= steps; ++i)
      for (int j = 0; i + j <= steps; ++j)
        out.push_back({double(i) / steps, double(j) / steps, double(steps - i - j) / steps});
  }
  return out;
}

// Rank of each value (1 = best) by counting strictly better and tied entries.
inline Vec brute_force_ranks(const Vec& v, bool lower_is_better) {
  Vec r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double better = 0, ties = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (j == i) continue;
      if (v[j] == v[i]) ++ties;
      else if (lower_is_better ? v[j] < v[i] : v[j] > v[i]) ++better;
    }
    r[i] = better + 1.0 + ties / 2.0;
  }
  return r;
}

}  // namespace mtlbench::oracle
