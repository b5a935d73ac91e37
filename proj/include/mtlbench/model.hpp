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

// Shared-encoder / multi-head MLP with exact reverse-mode gradients.
//
// Parameters live in one flat vector: the encoder layers first (the shared
// block), then each head's layers in task order. A dense layer stores its
// weight matrix (out x in, row-major) followed by its bias.
//
// An optional per-task f x f matrix R_t may be applied to the encoder output
// before head t (used for feature rotations); head t then sees z R_t^T.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtlbench/errors.hpp"
#include "mtlbench/gradient_bundle.hpp"
#include "mtlbench/numerics.hpp"

namespace mtlbench {

enum class Activation { kIdentity, kTanh, kRelu };
enum class LossKind { kCrossEntropy, kMeanSquaredError };

struct LayerSpec {
  std::size_t width = 1;
  Activation activation = Activation::kTanh;
};

struct HeadSpec {
  std::string name;
  std::vector<LayerSpec> hidden;
  std::size_t output_dim = 1;
  LossKind loss = LossKind::kMeanSquaredError;
};

struct NetworkSpec {
  std::size_t input_dim = 1;
  std::vector<LayerSpec> encoder;
  std::vector<HeadSpec> heads;
  double dropout_p = 0.0;

  std::size_t tasks() const noexcept { return heads.size(); }
  std::size_t feature_dim() const { return encoder.empty() ? input_dim : encoder.back().width; }

  void validate() const {
    if (heads.empty()) throw InvalidArgument("NetworkSpec: at least one head required");
    if (encoder.empty()) throw InvalidArgument("NetworkSpec: at least one encoder layer required");
    if (input_dim == 0) throw InvalidArgument("NetworkSpec: input_dim must be >= 1");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw InvalidArgument("NetworkSpec: dropout_p must be in [0, 1)");
    for (const auto& l : encoder)
      if (l.width == 0) throw InvalidArgument("NetworkSpec: layer widths must be >= 1");
    for (const auto& h : heads) {
      if (h.output_dim == 0) throw InvalidArgument("NetworkSpec: head output_dim must be >= 1");
      for (const auto& l : h.hidden)
        if (l.width == 0) throw InvalidArgument("NetworkSpec: layer widths must be >= 1");
      if (h.loss == LossKind::kCrossEntropy && h.output_dim < 2) {
        throw InvalidArgument("NetworkSpec: cross-entropy head needs >= 2 classes");
      }
    }
  }
};

struct DenseLayout {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t offset = 0;  // weights at [offset, offset + in*out), bias follows
  Activation activation = Activation::kIdentity;
  bool dropout = false;

  std::size_t size() const noexcept { return in * out + out; }
  std::size_t bias_offset() const noexcept { return offset + in * out; }
};

struct ParamLayout {
  std::vector<DenseLayout> encoder;
  std::vector<std::vector<DenseLayout>> heads;
  std::size_t shared_size = 0;
  std::vector<std::pair<std::size_t, std::size_t>> head_blocks;  // [begin, end)
  std::size_t total = 0;
};

inline ParamLayout make_layout(const NetworkSpec& spec) {
  spec.validate();
  ParamLayout lay;
  std::size_t off = 0;
  std::size_t in = spec.input_dim;
  for (const auto& l : spec.encoder) {
    lay.encoder.push_back({in, l.width, off, l.activation, true});
    off += lay.encoder.back().size();
    in = l.width;
  }
  lay.shared_size = off;
  const std::size_t f = in;
  for (const auto& h : spec.heads) {
    const std::size_t begin = off;
    std::vector<DenseLayout> layers;
    std::size_t hin = f;
    for (const auto& l : h.hidden) {
      layers.push_back({hin, l.width, off, l.activation, true});
      off += layers.back().size();
      hin = l.width;
    }
    layers.push_back({hin, h.output_dim, off, Activation::kIdentity, false});
    off += layers.back().size();
    lay.heads.push_back(std::move(layers));
    lay.head_blocks.emplace_back(begin, off);
  }
  lay.total = off;
  return lay;
}

// Flat parameter vector partitioned into the shared block and per-task blocks.
class Params {
 public:
  Params() = default;
  explicit Params(const NetworkSpec& spec) : layout_(make_layout(spec)), values_(layout_.total, 0.0) {}

  const ParamLayout& layout() const noexcept { return layout_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  std::span<double> shared() noexcept { return {values_.data(), layout_.shared_size}; }
  std::span<const double> shared() const noexcept { return {values_.data(), layout_.shared_size}; }
  std::span<double> head(std::size_t t) {
    auto [b, e] = layout_.head_blocks[t];
    return {values_.data() + b, e - b};
  }
  std::span<const double> head(std::size_t t) const {
    auto [b, e] = layout_.head_blocks[t];
    return {values_.data() + b, e - b};
  }

  friend bool operator==(const Params& a, const Params& b) { return a.values_ == b.values_; }

 private:
  ParamLayout layout_;
  Vec values_;
};

// Glorot-uniform weights, zero biases.
inline Params init_params(const NetworkSpec& spec, Rng& rng) {
  Params p(spec);
  auto fill = [&](const DenseLayout& l) {
    const double limit = std::sqrt(6.0 / double(l.in + l.out));
    auto v = p.values();
    for (std::size_t i = 0; i < l.in * l.out; ++i) v[l.offset + i] = rng.uniform(-limit, limit);
  };
  for (const auto& l : p.layout().encoder) fill(l);
  for (const auto& h : p.layout().heads)
    for (const auto& l : h) fill(l);
  return p;
}

// ---------------------------------------------------------------------------
// Batches and targets
// ---------------------------------------------------------------------------

// Class labels for cross-entropy heads, a value matrix for MSE heads.
struct TaskTarget {
  std::vector<int> labels;
  Mat values;

  std::size_t rows() const { return labels.empty() ? values.rows() : labels.size(); }
  friend bool operator==(const TaskTarget&, const TaskTarget&) = default;
};

struct Batch {
  Mat inputs;
  std::vector<TaskTarget> targets;
};

// Inverted-dropout scale factors (0 or 1/(1-p)) per dropout site; empty when
// dropout is inactive.
struct DropoutMasks {
  std::vector<Mat> encoder;
  std::vector<std::vector<Mat>> heads;

  bool empty() const noexcept { return encoder.empty(); }
};

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace detail {

struct LayerCache {
  Mat input;      // n x in
  Mat activated;  // n x out, act(pre), before dropout
};

inline Mat dense_forward(std::span<const double> params, const DenseLayout& l, const Mat& x) {
  const std::size_t n = x.rows();
  Mat y(n, l.out);
  const double* w = params.data() + l.offset;
  const double* b = params.data() + l.bias_offset();
  for (std::size_t r = 0; r < n; ++r) {
    auto xr = x.row(r);
    auto yr = y.row(r);
    for (std::size_t o = 0; o < l.out; ++o) {
      yr[o] = b[o] + dot(std::span<const double>(w + o * l.in, l.in), xr);
    }
  }
  return y;
}

inline void activate(Mat& y, Activation a) {
  switch (a) {
    case Activation::kIdentity: return;
    case Activation::kTanh:
      for (double& v : y.data()) v = std::tanh(v);
      return;
    case Activation::kRelu:
      for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
      return;
  }
}

// In place: grad wrt activated -> grad wrt pre-activation.
inline void activation_backward(Mat& grad, const Mat& activated, Activation a) {
  auto g = grad.data();
  auto y = activated.data();
  switch (a) {
    case Activation::kIdentity: return;
    case Activation::kTanh:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - y[i] * y[i];
      return;
    case Activation::kRelu:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = y[i] > 0.0 ? g[i] : 0.0;
      return;
  }
}

inline void apply_mask(Mat& y, const Mat& mask) {
  auto v = y.data();
  auto m = mask.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= m[i];
}

inline Mat make_mask(std::size_t n, std::size_t width, double p, Rng& rng) {
  Mat m(n, width);
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& v : m.data()) v = rng.uniform() < p ? 0.0 : keep_scale;
  return m;
}

// grad_out: n x out wrt layer pre-activation. Accumulates parameter gradients
// into grad_params (indexed like the flat param vector) and returns the
// gradient wrt the layer input when want_input is set.
inline Mat dense_backward(std::span<const double> params, const DenseLayout& l, const Mat& input,
                          const Mat& grad_out, std::span<double> grad_params, bool want_input) {
  const std::size_t n = input.rows();
  const double* w = params.data() + l.offset;
  double* gw = grad_params.data() + l.offset;
  double* gb = grad_params.data() + l.bias_offset();
  for (std::size_t r = 0; r < n; ++r) {
    auto go = grad_out.row(r);
    auto xr = input.row(r);
    for (std::size_t o = 0; o < l.out; ++o) {
      const double g = go[o];
      if (g == 0.0) continue;
      gb[o] += g;
      double* gwo = gw + o * l.in;
      for (std::size_t i = 0; i < l.in; ++i) gwo[i] += g * xr[i];
    }
  }
  Mat grad_in;
  if (want_input) {
    grad_in = Mat(n, l.in);
    for (std::size_t r = 0; r < n; ++r) {
      auto go = grad_out.row(r);
      auto gi = grad_in.row(r);
      for (std::size_t o = 0; o < l.out; ++o) {
        const double g = go[o];
        if (g == 0.0) continue;
        axpy(g, std::span<const double>(w + o * l.in, l.in), gi);
      }
    }
  }
  return grad_in;
}

// z R^T for every row z.
inline Mat rotate_rows(const Mat& z, const Mat& r) {
  return matmul(z, r.transposed());
}

}  // namespace detail

struct ForwardResult {
  std::vector<Mat> outputs;  // per task, n x output_dim (logits for CE)
  Vec losses;
  DropoutMasks masks;        // populated only in train mode with dropout_p > 0

  // Internals kept for backward.
  std::vector<detail::LayerCache> encoder_cache;
  Mat features;                                     // encoder output z
  std::vector<Mat> head_inputs;                     // z, or z R_t^T
  std::vector<std::vector<detail::LayerCache>> head_cache;
};

namespace detail {

inline double task_loss(const HeadSpec& h, const Mat& out, const TaskTarget& t, Mat* grad) {
  const std::size_t n = out.rows();
  const std::size_t k = out.cols();
  double loss = 0.0;
  if (grad) *grad = Mat(n, k);
  if (n == 0) return 0.0;
  if (h.loss == LossKind::kCrossEntropy) {
    if (t.labels.size() != n) throw InvalidArgument("cross-entropy target: label count mismatch");
    for (std::size_t r = 0; r < n; ++r) {
      auto o = out.row(r);
      const int y = t.labels[r];
      if (y < 0 || std::size_t(y) >= k) throw InvalidArgument("cross-entropy target: label out of range");
      const double mx = *std::max_element(o.begin(), o.end());
      double z = 0.0;
      for (double v : o) z += std::exp(v - mx);
      const double lse = mx + std::log(z);
      loss += lse - o[std::size_t(y)];
      if (grad) {
        auto g = grad->row(r);
        for (std::size_t c = 0; c < k; ++c) g[c] = std::exp(o[c] - lse) / double(n);
        g[std::size_t(y)] -= 1.0 / double(n);
      }
    }
    return loss / double(n);
  }
  if (t.values.rows() != n || t.values.cols() != k) throw InvalidArgument("MSE target: shape mismatch");
  const double denom = double(n) * double(k);
  for (std::size_t r = 0; r < n; ++r) {
    auto o = out.row(r);
    auto y = t.values.row(r);
    for (std::size_t c = 0; c < k; ++c) {
      const double e = o[c] - y[c];
      loss += e * e;
      if (grad) (*grad)(r, c) = 2.0 * e / denom;
    }
  }
  return loss / denom;
}

}  // namespace detail

// Runs the network. Dropout masks are drawn from rng in train mode unless
// `reuse_masks` is given, in which case they are applied as-is.
inline ForwardResult forward(const NetworkSpec& spec, const Params& params, const Batch& batch, Rng& rng,
                             bool train_mode, std::span<const Mat> rotations = {},
                             const DropoutMasks* reuse_masks = nullptr) {
  const auto& lay = params.layout();
  if (batch.inputs.cols() != spec.input_dim) throw InvalidArgument("forward: batch column count != input_dim");
  if (batch.targets.size() != spec.tasks()) throw InvalidArgument("forward: one target per task required");
  if (!rotations.empty() && rotations.size() != spec.tasks()) {
    throw InvalidArgument("forward: one rotation per task required");
  }
  const std::size_t n = batch.inputs.rows();
  const bool use_dropout = train_mode && (reuse_masks ? !reuse_masks->empty() : spec.dropout_p > 0.0);
  const auto pv = params.values();

  ForwardResult res;
  if (use_dropout && !reuse_masks) res.masks.heads.resize(spec.tasks());
  if (use_dropout && reuse_masks) res.masks = *reuse_masks;

  Mat x = batch.inputs;
  for (std::size_t li = 0; li < lay.encoder.size(); ++li) {
    const auto& l = lay.encoder[li];
    Mat y = detail::dense_forward(pv, l, x);
    detail::activate(y, l.activation);
    res.encoder_cache.push_back({std::move(x), y});
    if (use_dropout) {
      if (!reuse_masks) res.masks.encoder.push_back(detail::make_mask(n, l.out, spec.dropout_p, rng));
      detail::apply_mask(y, res.masks.encoder[li]);
    }
    x = std::move(y);
  }
  res.features = std::move(x);

  for (std::size_t t = 0; t < spec.tasks(); ++t) {
    Mat h = rotations.empty() ? res.features : detail::rotate_rows(res.features, rotations[t]);
    res.head_inputs.push_back(h);
    std::vector<detail::LayerCache> cache;
    const auto& layers = lay.heads[t];
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const auto& l = layers[li];
      Mat y = detail::dense_forward(pv, l, h);
      detail::activate(y, l.activation);
      cache.push_back({std::move(h), y});
      if (use_dropout && l.dropout) {
        if (!reuse_masks) res.masks.heads[t].push_back(detail::make_mask(n, l.out, spec.dropout_p, rng));
        detail::apply_mask(y, res.masks.heads[t][li]);
      }
      h = std::move(y);
    }
    const double loss = detail::task_loss(spec.heads[t], h, batch.targets[t], nullptr);
    if (!std::isfinite(loss)) throw NonFiniteLossError(t);
    res.losses.push_back(loss);
    res.outputs.push_back(std::move(h));
    res.head_cache.push_back(std::move(cache));
  }
  return res;
}

namespace detail {

// Backprop task t through its head. Accumulates head parameter gradients
// (scaled by `weight`) into grad_params and returns dL_t/d(head input) and
// dL_t/dz (unscaled).
struct HeadBackward {
  Mat grad_head_input;
  Mat grad_features;
};

inline HeadBackward head_backward(const NetworkSpec& spec, const Params& params, const Batch& batch,
                                  const ForwardResult& fw, std::size_t t, std::span<const Mat> rotations,
                                  std::span<double> grad_params, double weight) {
  const auto& layers = params.layout().heads[t];
  const auto pv = params.values();
  Mat g;
  detail::task_loss(spec.heads[t], fw.outputs[t], batch.targets[t], &g);
  Vec scratch(params.size(), 0.0);
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& l = layers[li];
    const auto& c = fw.head_cache[t][li];
    if (l.dropout && !fw.masks.empty()) detail::apply_mask(g, fw.masks.heads[t][li]);
    detail::activation_backward(g, c.activated, l.activation);
    g = detail::dense_backward(pv, l, c.input, g, scratch, true);
  }
  auto [b, e] = params.layout().head_blocks[t];
  for (std::size_t i = b; i < e; ++i) grad_params[i] += weight * scratch[i];
  HeadBackward out;
  out.grad_features = rotations.empty() ? g : matmul(g, rotations[t]);
  out.grad_head_input = std::move(g);
  return out;
}

inline void encoder_backward(const Params& params, const ForwardResult& fw, Mat g, std::span<double> grad_params) {
  const auto& layers = params.layout().encoder;
  const auto pv = params.values();
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& l = layers[li];
    const auto& c = fw.encoder_cache[li];
    if (!fw.masks.empty()) detail::apply_mask(g, fw.masks.encoder[li]);
    detail::activation_backward(g, c.activated, l.activation);
    g = detail::dense_backward(pv, l, c.input, g, grad_params, li > 0);
  }
}

inline Vec column_sums(const Mat& m) {
  Vec s(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) axpy(1.0, m.row(r), s);
  return s;
}

}  // namespace detail

struct PerTaskGradients {
  GradientBundle shared;         // row t = dL_t / d(theta_sh)
  std::vector<Vec> heads;        // dL_t / d(theta_t), one block per task
  Mat feature_grads;             // row t = sum over batch of dL_t / d(head-t input)
  Vec losses;
};

// One encoder backward pass per task. Uses the masks stored in `fw`.
inline PerTaskGradients backward_per_task(const NetworkSpec& spec, const Params& params, const Batch& batch,
                                          const ForwardResult& fw, std::span<const Mat> rotations = {}) {
  const std::size_t nt = spec.tasks();
  const auto& lay = params.layout();
  Mat shared(nt, lay.shared_size);
  PerTaskGradients out;
  out.feature_grads = Mat(nt, spec.feature_dim());
  std::vector<std::string> names;
  for (std::size_t t = 0; t < nt; ++t) {
    Vec grad(params.size(), 0.0);
    auto hb = detail::head_backward(spec, params, batch, fw, t, rotations, grad, 1.0);
    const Vec fsum = detail::column_sums(hb.grad_head_input);
    std::copy(fsum.begin(), fsum.end(), out.feature_grads.row(t).begin());
    detail::encoder_backward(params, fw, std::move(hb.grad_features), grad);
    std::copy(grad.begin(), grad.begin() + std::ptrdiff_t(lay.shared_size), shared.row(t).begin());
    auto [b, e] = lay.head_blocks[t];
    out.heads.emplace_back(grad.begin() + std::ptrdiff_t(b), grad.begin() + std::ptrdiff_t(e));
    names.push_back(spec.heads[t].name.empty() ? "task" + std::to_string(t) : spec.heads[t].name);
  }
  out.shared = GradientBundle(std::move(shared), std::move(names));
  out.losses = fw.losses;
  return out;
}

// Gradient of sum_t w_t L_t over all parameters with a single encoder pass.
inline Vec backward_weighted(const NetworkSpec& spec, const Params& params, const Batch& batch,
                             const ForwardResult& fw, std::span<const double> weights,
                             std::span<const Mat> rotations = {}) {
  if (weights.size() != spec.tasks()) throw InvalidArgument("backward_weighted: one weight per task required");
  Vec grad(params.size(), 0.0);
  Mat gz(batch.inputs.rows(), spec.feature_dim());
  for (std::size_t t = 0; t < spec.tasks(); ++t) {
    auto hb = detail::head_backward(spec, params, batch, fw, t, rotations, grad, weights[t]);
    axpy(weights[t], hb.grad_features.data(), gz.data());
  }
  detail::encoder_backward(params, fw, std::move(gz), grad);
  return grad;
}

// Full-parameter gradient from a shared direction plus per-task head blocks.
inline Vec assemble_gradient(const Params& params, std::span<const double> shared_direction,
                             const std::vector<Vec>& head_grads, std::span<const double> head_weights = {}) {
  const auto& lay = params.layout();
  if (shared_direction.size() != lay.shared_size) throw InvalidArgument("assemble_gradient: shared size mismatch");
  Vec grad(params.size(), 0.0);
  std::copy(shared_direction.begin(), shared_direction.end(), grad.begin());
  for (std::size_t t = 0; t < head_grads.size(); ++t) {
    const double w = head_weights.empty() ? 1.0 : head_weights[t];
    auto [b, e] = lay.head_blocks[t];
    for (std::size_t i = b; i < e; ++i) grad[i] = w * head_grads[t][i - b];
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay
// ---------------------------------------------------------------------------

struct AdamState {
  Vec m;
  Vec v;
  std::size_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  AdamState() = default;
  AdamState(std::size_t n, double lr_, double weight_decay_ = 0.0)
      : m(n, 0.0), v(n, 0.0), lr(lr_), weight_decay(weight_decay_) {}
};

inline void adam_step(AdamState& s, std::span<double> params, std::span<const double> direction) {
  if (direction.size() != params.size() || s.m.size() != params.size()) {
    throw InvalidArgument("adam_step: length mismatch");
  }
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, double(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, double(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = direction[i];
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
    const double mhat = s.m[i] / bc1;
    const double vhat = s.v[i] / bc2;
    params[i] -= s.lr * s.weight_decay * params[i];
    params[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

}  // namespace mtlbench
