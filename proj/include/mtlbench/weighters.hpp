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

// Loss-based weighting schemes. Each maps the current task losses (and a
// little state) to weights for the scalarized loss sum_i w_i L_i, which is
// then differentiated with a single backward pass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mtlbench/errors.hpp"
#include "mtlbench/model.hpp"
#include "mtlbench/numerics.hpp"
#include "mtlbench/weight_vector.hpp"

namespace mtlbench {

namespace detail {

inline void require_positive_losses(std::span<const double> losses, const char* method) {
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!(losses[i] > 0.0) || !std::isfinite(losses[i])) {
      throw LossDomainError(i, std::string(method) + ": loss must be positive and finite");
    }
  }
}

inline Vec softmax(std::span<const double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  Vec z(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (z[i] = std::exp(x[i] - mx));
  for (double& v : z) v /= s;
  return z;
}

}  // namespace detail

inline WeightVector unit_scal(std::span<const double> losses) {
  if (losses.empty()) throw InvalidArgument("unit_scal: needs at least one task");
  return WeightVector::ones(losses.size());
}

// Weights 1/L_i, i.e. the gradient of sum_i log L_i.
inline WeightVector si(std::span<const double> losses) {
  detail::require_positive_losses(losses, "si");
  Vec w(losses.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 / losses[i];
  return {std::move(w), WeightConvention::kFree};
}

enum class RlwDistribution { kNormal, kDirichlet };

// Normal: softmax of N standard normals. Dirichlet(1, ..., 1): normalized
// exponentials.
inline WeightVector rlw(Rng& rng, RlwDistribution dist, std::size_t n) {
  if (n == 0) throw InvalidArgument("rlw: needs at least one task");
  Vec w(n);
  if (dist == RlwDistribution::kNormal) {
    for (double& v : w) v = rng.normal();
    w = detail::softmax(w);
  } else {
    double s = 0.0;
    for (double& v : w) s += (v = rng.exponential());
    for (double& v : w) v /= s;
  }
  return {std::move(w), WeightConvention::kSumToOne};
}

// ---------------------------------------------------------------------------
// Uncertainty weighting
// ---------------------------------------------------------------------------

struct UwState {
  Vec log_var;  // s_i = log sigma_i^2

  explicit UwState(std::size_t n = 0) : log_var(n, 0.0) {}
};

struct UwLoss {
  double total = 0.0;
  WeightVector weights;  // exp(-s_i) / 2
  Vec grad_log_var;      // d total / d s_i
};

// total = sum_i exp(-s_i) L_i / 2 + s_i / 2.
inline UwLoss uw_loss(std::span<const double> losses, const UwState& state) {
  if (losses.size() != state.log_var.size()) throw InvalidArgument("uw_loss: state size mismatch");
  UwLoss out;
  Vec w(losses.size());
  out.grad_log_var.resize(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const double e = std::exp(-state.log_var[i]);
    w[i] = 0.5 * e;
    out.total += 0.5 * e * losses[i] + 0.5 * state.log_var[i];
    out.grad_log_var[i] = -0.5 * e * losses[i] + 0.5;
  }
  out.weights = WeightVector(std::move(w), WeightConvention::kFree);
  return out;
}

// ---------------------------------------------------------------------------
// FAMO
// ---------------------------------------------------------------------------

struct FamoState {
  Vec logits;
  Vec prev_losses;
  double gamma = 0.001;  // logit regularization
  double beta = 0.025;   // logit learning rate

  FamoState() = default;
  explicit FamoState(std::size_t n, double gamma_ = 0.001, double beta_ = 0.025)
      : logits(n, 0.0), gamma(gamma_), beta(beta_) {}
};

// Softmax Jacobian dz_i/dxi_j = z_i (delta_ij - z_j).
inline Mat softmax_jacobian(std::span<const double> z) {
  const std::size_t n = z.size();
  Mat j(n, n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) j(a, b) = z[a] * ((a == b ? 1.0 : 0.0) - z[b]);
  return j;
}

// w_i proportional to z_i / L_i with z = softmax(logits), normalized to sum 1.
inline WeightVector famo_weights(const FamoState& state, std::span<const double> losses) {
  if (losses.size() != state.logits.size()) throw InvalidArgument("famo_weights: state size mismatch");
  detail::require_positive_losses(losses, "famo");
  const Vec z = detail::softmax(state.logits);
  Vec w(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] = z[i] / losses[i]);
  for (double& v : w) v /= s;
  return {std::move(w), WeightConvention::kSumToOne};
}

// xi <- xi - beta (J_z^T [log L_t - log L_{t+1}] + gamma xi).
inline void famo_update(FamoState& state, std::span<const double> losses_t, std::span<const double> losses_t1) {
  const std::size_t n = state.logits.size();
  if (losses_t.size() != n || losses_t1.size() != n) throw InvalidArgument("famo_update: state size mismatch");
  detail::require_positive_losses(losses_t, "famo");
  detail::require_positive_losses(losses_t1, "famo");
  const Vec z = detail::softmax(state.logits);
  const Mat jac = softmax_jacobian(z);
  Vec diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = std::log(losses_t[i]) - std::log(losses_t1[i]);
  const Vec delta = matvec(jac.transposed(), diff);
  for (std::size_t i = 0; i < n; ++i) state.logits[i] -= state.beta * (delta[i] + state.gamma * state.logits[i]);
  require_finite(state.logits, "famo logits");
  state.prev_losses.assign(losses_t1.begin(), losses_t1.end());
}

// ---------------------------------------------------------------------------
// Auto-Lambda
// ---------------------------------------------------------------------------

struct LookaheadModel {
  const NetworkSpec& spec;
  const Params& params;
  double inner_lr;  // step size of the simulated training update
};

struct AutoLambdaResult {
  WeightVector lambda;
  Vec meta_gradient;
  bool skipped = false;
};

inline constexpr double kAutoLambdaFloor = 1e-4;

namespace detail {

inline std::vector<Vec> per_task_full_gradients(const NetworkSpec& spec, const Params& params, const Batch& batch) {
  Rng unused(0);
  const ForwardResult fw = forward(spec, params, batch, unused, false);
  const PerTaskGradients g = backward_per_task(spec, params, batch, fw);
  std::vector<Vec> out;
  for (std::size_t t = 0; t < spec.tasks(); ++t) {
    Vec full(params.size(), 0.0);
    auto row = g.shared.row(t);
    std::copy(row.begin(), row.end(), full.begin());
    auto [b, e] = params.layout().head_blocks[t];
    std::copy(g.heads[t].begin(), g.heads[t].end(), full.begin() + std::ptrdiff_t(b));
    out.push_back(std::move(full));
  }
  return out;
}

}  // namespace detail

// Validation loss after one simulated step theta' = theta - lr sum_i l_i grad L_i^train.
inline double auto_lambda_lookahead_loss(std::span<const double> lambda, const Batch& train_batch,
                                         const Batch& val_batch, const LookaheadModel& model) {
  const auto grads = detail::per_task_full_gradients(model.spec, model.params, train_batch);
  Params next = model.params;
  for (std::size_t t = 0; t < grads.size(); ++t) axpy(-model.inner_lr * lambda[t], grads[t], next.values());
  Rng unused(0);
  const ForwardResult fw = forward(model.spec, next, val_batch, unused, false);
  return sum(fw.losses);
}

// Gradient of the look-ahead validation loss w.r.t. lambda. theta' is linear
// in lambda, so d/dl_i = -lr <grad L_val(theta'), grad L_i^train(theta)>;
// no second-order term is involved. Lambda is clipped below at 1e-4.
inline AutoLambdaResult auto_lambda_update(const WeightVector& lambda, const Batch& train_batch,
                                           const Batch& val_batch, const LookaheadModel& model, double aux_lr) {
  const std::size_t n = model.spec.tasks();
  if (lambda.size() != n) throw InvalidArgument("auto_lambda_update: one weight per task required");
  const auto grads = detail::per_task_full_gradients(model.spec, model.params, train_batch);
  Params next = model.params;
  for (std::size_t t = 0; t < n; ++t) axpy(-model.inner_lr * lambda[t], grads[t], next.values());

  Rng unused(0);
  const ForwardResult fw = forward(model.spec, next, val_batch, unused, false);
  const Vec ones(n, 1.0);
  const Vec val_grad = backward_weighted(model.spec, next, val_batch, fw, ones);

  AutoLambdaResult out;
  out.meta_gradient.resize(n);
  for (std::size_t t = 0; t < n; ++t) out.meta_gradient[t] = -model.inner_lr * dot(val_grad, grads[t]);
  if (!all_finite(out.meta_gradient)) {
    out.lambda = lambda;
    out.skipped = true;
    return out;
  }
  Vec next_lambda(n);
  for (std::size_t t = 0; t < n; ++t) {
    next_lambda[t] = std::max(lambda[t] - aux_lr * out.meta_gradient[t], kAutoLambdaFloor);
  }
  out.lambda = WeightVector(std::move(next_lambda), WeightConvention::kFree);
  return out;
}

// ---------------------------------------------------------------------------
// Fixed weights
// ---------------------------------------------------------------------------

inline WeightVector fixed(const WeightVector& weights, std::span<const double> losses) {
  if (weights.size() != losses.size()) throw InvalidArgument("fixed: one weight per task required");
  return weights;
}

}  // namespace mtlbench
