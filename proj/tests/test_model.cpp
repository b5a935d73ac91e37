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

#include <cmath>

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "mtlbench/model.hpp"
#include "mtlbench/rotation.hpp"
#include "oracles.hpp"

namespace mtlbench {
namespace {

TEST(Layout, BlocksTileTheParameterVector) {
  NetworkSpec spec;
  spec.input_dim = 3;
  spec.encoder = {{4, Activation::kTanh}, {2, Activation::kRelu}};
  spec.heads = {{"a", {}, 2, LossKind::kCrossEntropy}, {"b", {{3, Activation::kTanh}}, 1}};
  const Params p(spec);
  EXPECT_EQ(p.layout().shared_size, 3u * 4 + 4 + 4 * 2 + 2);
  EXPECT_EQ(p.layout().head_blocks[0].first, p.layout().shared_size);
  EXPECT_EQ(p.layout().head_blocks[0].second, p.layout().head_blocks[1].first);
  EXPECT_EQ(p.layout().head_blocks[1].second, p.size());
  EXPECT_EQ(p.size(), p.layout().shared_size + (2u * 2 + 2) + (2u * 3 + 3 + 3 * 1 + 1));
}

TEST(Layout, InvalidSpecsThrow) {
  NetworkSpec spec;
  spec.input_dim = 2;
  EXPECT_THROW(Params{spec}, InvalidArgument);  // no heads
  spec.heads = {{"a", {}, 2, LossKind::kCrossEntropy}};
  spec.dropout_p = 1.0;
  EXPECT_THROW(Params{spec}, InvalidArgument);
}

TEST(Forward, CrossEntropyByHand) {
  NetworkSpec spec;
  spec.input_dim = 1;
  spec.encoder = {{1, Activation::kIdentity}};
  spec.heads = {{"c", {}, 2, LossKind::kCrossEntropy}};
  Params p(spec);
  // Encoder passes x through; logits = [w0 x + b0, w1 x + b1].
  auto v = p.values();
  v[0] = 1.0;
  v[2] = 1.0;
  v[3] = -1.0;
  v[4] = 0.5;
  v[5] = 0.0;
  Batch b;
  b.inputs = Mat(1, 1);
  b.inputs(0, 0) = 2.0;
  b.targets = {{{1}, {}}};
  Rng rng(0);
  const auto fw = forward(spec, p, b, rng, false);
  const double l0 = 2.5, l1 = -2.0;
  const double expected = std::log(std::exp(l0) + std::exp(l1)) - l1;
  EXPECT_NEAR(fw.losses[0], expected, 1e-12);
}

TEST(Forward, MeanSquaredErrorByHand) {
  NetworkSpec spec;
  spec.input_dim = 1;
  spec.encoder = {{1, Activation::kIdentity}};
  spec.heads = {{"r", {}, 2, LossKind::kMeanSquaredError}};
  Params p(spec);
  auto v = p.values();
  v[0] = 1.0;
  v[2] = 1.0;
  v[3] = 2.0;
  Batch b;
  b.inputs = Mat(2, 1);
  b.inputs(0, 0) = 1.0;
  b.inputs(1, 0) = -1.0;
  TaskTarget t;
  t.values = Mat(2, 2);
  b.targets = {t};
  Rng rng(0);
  // outputs (1,2) and (-1,-2): mean of squares = (1+4+1+4)/4.
  EXPECT_NEAR(forward(spec, p, b, rng, false).losses[0], 2.5, 1e-15);
}

TEST(Forward, NonFiniteLossIsReported) {
  NetworkSpec spec;
  spec.input_dim = 1;
  spec.encoder = {{1, Activation::kIdentity}};
  spec.heads = {{"r", {}, 1}, {"s", {}, 1}};
  Params p(spec);
  Batch b;
  b.inputs = Mat(1, 1);
  TaskTarget ok, bad;
  ok.values = Mat(1, 1);
  bad.values = Mat(1, 1);
  bad.values(0, 0) = std::numeric_limits<double>::infinity();
  b.targets = {ok, bad};
  Rng rng(0);
  try {
    forward(spec, p, b, rng, false);
    FAIL() << "expected NonFiniteLossError";
  } catch (const NonFiniteLossError& e) {
    EXPECT_EQ(e.task(), 1u);
  }
}

TEST(Forward, RejectsMismatchedBatches) {
  Rng rng(1);
  auto tp = oracle::tiny_problem(rng, 2);
  Batch b = tp.batch;
  b.targets.pop_back();
  EXPECT_THROW(forward(tp.spec, tp.params, b, rng, false), InvalidArgument);
  b = tp.batch;
  b.targets[0].labels[0] = 99;
  EXPECT_THROW(forward(tp.spec, tp.params, b, rng, false), InvalidArgument);
  b = tp.batch;
  b.inputs = Mat(b.inputs.rows(), b.inputs.cols() + 1);
  EXPECT_THROW(forward(tp.spec, tp.params, b, rng, false), InvalidArgument);
}

// Analytic per-task gradients agree with central differences on random
// small networks, with and without rotations and dropout.
TEST(Backward, PerTaskGradientsMatchFiniteDifferences) {
  Rng rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    auto tp = oracle::tiny_problem(rng, 2 + rng.index(2));
    EXPECT_LT(oracle::shared_gradient_error(tp), 1e-6) << "trial " << trial;
  }
}

TEST(Backward, GradientsWithRotationsMatchFiniteDifferences) {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    auto tp = oracle::tiny_problem(rng, 2);
    RotationSet rot(2, tp.spec.feature_dim());
    for (std::size_t t = 0; t < 2; ++t) {
      Mat a(tp.spec.feature_dim(), tp.spec.feature_dim());
      for (double& v : a.data()) v = rng.normal();
      rot.set_generator(t, a);
    }
    EXPECT_LT(oracle::shared_gradient_error(tp, rot.rotations()), 1e-6) << "trial " << trial;
  }
}

TEST(Backward, GradientsWithDropoutMatchFiniteDifferencesUnderFixedMasks) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto tp = oracle::tiny_problem(rng, 2, 0.3);
    EXPECT_LT(oracle::shared_gradient_error(tp, {}, true, 100 + trial), 1e-6) << "trial " << trial;
  }
}

TEST(Backward, WeightedEqualsWeightedSumOfPerTask) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    auto tp = oracle::tiny_problem(rng, 3, 0.2);
    Rng mrng(trial);
    const auto fw = forward(tp.spec, tp.params, tp.batch, mrng, true);
    const auto per = backward_per_task(tp.spec, tp.params, tp.batch, fw);
    const Vec w{0.2, 1.5, -0.7};
    const Vec got = backward_weighted(tp.spec, tp.params, tp.batch, fw, w);
    const Vec shared = combine_rows(per.shared.matrix(), w);
    const Vec want = assemble_gradient(tp.params, shared, per.heads, w);
    EXPECT_LT(oracle::relative_error(got, want), 1e-12);
  }
}

TEST(Backward, FeatureGradientsAreBatchSums) {
  Rng rng(3);
  auto tp = oracle::tiny_problem(rng, 2);
  const auto fw = forward(tp.spec, tp.params, tp.batch, rng, false);
  const auto per = backward_per_task(tp.spec, tp.params, tp.batch, fw);
  // d L_t / d(shift of every feature row by e_k), by central differences.
  const std::size_t f = tp.spec.feature_dim();
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t k = 0; k < f; ++k) {
      auto loss_with_shift = [&](double h) {
        // Evaluate the head alone on shifted features, behind an identity
        // encoder.
        Mat z = fw.features;
        for (std::size_t r = 0; r < z.rows(); ++r) z(r, k) += h;
        NetworkSpec head_only;
        head_only.input_dim = f;
        head_only.encoder = {{f, Activation::kIdentity}};
        head_only.heads = {tp.spec.heads[t]};
        Params hp(head_only);
        for (std::size_t i = 0; i < f; ++i) hp.values()[i * f + i] = 1.0;
        auto src = tp.params.head(t);
        std::copy(src.begin(), src.end(), hp.head(0).begin());
        Batch b;
        b.inputs = z;
        b.targets = {tp.batch.targets[t]};
        Rng unused(0);
        return forward(head_only, hp, b, unused, false).losses[0];
      };
      const double fd = (loss_with_shift(1e-6) - loss_with_shift(-1e-6)) / 2e-6;
      EXPECT_NEAR(per.feature_grads(t, k), fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Dropout, MasksAreReproducibleAndScaled) {
  Rng rng(4);
  auto tp = oracle::tiny_problem(rng, 2, 0.5);
  Rng a(11), b(11);
  const auto fa = forward(tp.spec, tp.params, tp.batch, a, true);
  const auto fb = forward(tp.spec, tp.params, tp.batch, b, true);
  EXPECT_EQ(fa.losses, fb.losses);
  for (const Mat& m : fa.masks.encoder)
    for (double v : m.data()) EXPECT_TRUE(v == 0.0 || v == 2.0);
  Rng c(12);
  const auto reused = forward(tp.spec, tp.params, tp.batch, c, true, {}, &fa.masks);
  EXPECT_EQ(reused.losses, fa.losses);
  // Evaluation mode ignores dropout entirely.
  Rng d(13);
  const auto ev = forward(tp.spec, tp.params, tp.batch, d, false);
  EXPECT_TRUE(ev.masks.empty());
}

TEST(Adam, FirstStepsByHand) {
  AdamState s(2, 0.1, 0.01);
  Vec p{1.0, -2.0};
  adam_step(s, p, Vec{0.5, -4.0});
  // After one step m_hat = g and v_hat = g^2, so the update is lr * sign(g)
  // up to eps, preceded by decoupled decay.
  EXPECT_NEAR(p[0], 1.0 * (1 - 0.001) - 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_NEAR(p[1], -2.0 * (1 - 0.001) + 0.1 * 4.0 / (4.0 + 1e-8), 1e-12);
  const double p0 = p[0];
  adam_step(s, p, Vec{0.25, 0.0});
  const double m = (0.9 * 0.05 + 0.1 * 0.25) / (1 - 0.81);
  const double v = (0.999 * 0.00025 + 0.001 * 0.0625) / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p[0], p0 * (1 - 0.001) - 0.1 * m / (std::sqrt(v) + 1e-8), 1e-12);
  EXPECT_THROW(adam_step(s, p, Vec{1.0}), InvalidArgument);
}

}  // namespace
}  // namespace mtlbench
