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

// Training loop, grid search, multi-seed comparison and fixed-weight replay.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mtlbench/aggregators.hpp"
#include "mtlbench/errors.hpp"
#include "mtlbench/metrics.hpp"
#include "mtlbench/model.hpp"
#include "mtlbench/numerics.hpp"
#include "mtlbench/problems.hpp"
#include "mtlbench/rotation.hpp"
#include "mtlbench/weight_vector.hpp"
#include "mtlbench/weighters.hpp"

namespace mtlbench {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ProblemConfig {
  std::string id = "symmetric_two_task";
  std::size_t size = 3000;
  std::uint64_t data_seed = 0;
  std::size_t input_dim = 16;
  std::size_t classes = 4;
  double label_noise = 0.3;
  // mixed_norm_two_task
  std::size_t recon_dim = 16;
  double recon_scale = 0.1;
  // conflict_regression
  std::size_t tasks = 4;
  double kappa = 0.0;
  double noise = 0.5;
  // multimnist
  std::string idx_images;
  std::string idx_labels;
  std::vector<std::string> mnist_tasks{"CL", "CR"};

  friend bool operator==(const ProblemConfig&, const ProblemConfig&) = default;
};

inline const std::vector<std::string>& problem_ids() {
  static const std::vector<std::string> ids{"symmetric_two_task", "mixed_norm_two_task", "conflict_regression",
                                            "multimnist"};
  return ids;
}

enum class SmtoKind { kGradient, kLoss, kReference };

struct SmtoInfo {
  std::string id;
  SmtoKind kind;
  std::map<std::string, double> defaults;
};

inline const std::vector<SmtoInfo>& smto_registry() {
  static const std::vector<SmtoInfo> reg{
      {"unit_scal", SmtoKind::kLoss, {}},
      {"si", SmtoKind::kLoss, {}},
      {"rlw_normal", SmtoKind::kLoss, {}},
      {"rlw_dirichlet", SmtoKind::kLoss, {}},
      {"uw", SmtoKind::kLoss, {}},
      {"famo", SmtoKind::kLoss, {{"gamma", 0.001}, {"beta", 0.025}}},
      {"auto_lambda", SmtoKind::kLoss, {{"lr_scale", 0.1}, {"init", 0.1}}},
      {"fixed", SmtoKind::kLoss, {}},
      {"rotograd", SmtoKind::kLoss, {{"rot_lr_scale", 1.0}}},
      {"mgda_ub", SmtoKind::kGradient, {}},
      {"pcgrad", SmtoKind::kGradient, {}},
      {"graddrop", SmtoKind::kGradient, {{"k", 1.0}, {"leak", 0.5}}},
      {"edm", SmtoKind::kGradient, {}},
      {"imtl_g", SmtoKind::kGradient, {{"alpha_max", 1e3}}},
      {"cagrad", SmtoKind::kGradient, {{"c", 0.5}}},
      {"nash_mtl", SmtoKind::kGradient, {{"iters", 20}}},
      {"cdtt", SmtoKind::kGradient, {{"alpha", 0.6}, {"window", 5}}},
      {"single_task", SmtoKind::kReference, {{"task", 0}}},
  };
  return reg;
}

inline const SmtoInfo& smto_info(const std::string& id) {
  for (const auto& s : smto_registry())
    if (s.id == id) return s;
  throw InvalidArgument("unknown SMTO id: " + id);
}

// Every multi-task optimizer (everything except the single-task reference).
inline std::vector<std::string> multitask_smto_ids() {
  std::vector<std::string> out;
  for (const auto& s : smto_registry())
    if (s.kind != SmtoKind::kReference && s.id != "fixed") out.push_back(s.id);
  return out;
}

struct TrialConfig {
  ProblemConfig problem;
  std::string smto = "unit_scal";
  std::map<std::string, double> smto_params;  // overrides of the SMTO defaults
  Vec fixed_weights;                          // used by "fixed"
  double lr = 0.005;
  double dropout_p = 0.0;
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  std::vector<std::size_t> encoder;  // hidden widths; empty = problem default

  friend bool operator==(const TrialConfig&, const TrialConfig&) = default;
};

inline double smto_param(const TrialConfig& cfg, const std::string& key) {
  auto it = cfg.smto_params.find(key);
  if (it != cfg.smto_params.end()) return it->second;
  const auto& d = smto_info(cfg.smto).defaults;
  auto jt = d.find(key);
  if (jt == d.end()) throw InvalidArgument("SMTO " + cfg.smto + " has no parameter " + key);
  return jt->second;
}

inline void validate(const TrialConfig& cfg) {
  const auto& info = smto_info(cfg.smto);
  for (const auto& [k, v] : cfg.smto_params) {
    if (!info.defaults.count(k)) throw InvalidArgument("SMTO " + cfg.smto + " has no parameter " + k);
    if (!std::isfinite(v)) throw InvalidArgument("SMTO parameter " + k + " must be finite");
  }
  if (std::find(problem_ids().begin(), problem_ids().end(), cfg.problem.id) == problem_ids().end()) {
    throw InvalidArgument("unknown problem id: " + cfg.problem.id);
  }
  if (!(cfg.lr > 0.0)) throw InvalidArgument("lr must be positive");
  if (!(cfg.dropout_p >= 0.0 && cfg.dropout_p < 1.0)) throw InvalidArgument("dropout_p must be in [0, 1)");
  if (!(cfg.weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be >= 0");
  if (cfg.batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
  if (cfg.epochs == 0) throw InvalidArgument("epochs must be >= 1");
  if (cfg.smto == "fixed" && cfg.fixed_weights.empty()) throw InvalidArgument("fixed SMTO needs fixed_weights");
}

// Search grids. Auxiliary learning rates are given as a scale of lr.
struct GridSpec {
  std::vector<double> lr{0.01, 0.0075, 0.005, 0.0025, 0.001, 0.00075, 0.0005};
  std::vector<double> dropout{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<double> weight_decay{0.0};
  std::map<std::string, std::vector<double>> smto_params;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

inline GridSpec default_grid(const std::string& smto) {
  GridSpec g;
  if (smto == "cagrad") g.smto_params["c"] = {0.2, 0.5, 0.8};
  if (smto == "cdtt") g.smto_params["alpha"] = {0.2, 0.4, 0.6, 0.8, 1.0};
  if (smto == "famo") g.smto_params["gamma"] = {0.01, 0.001, 0.0001};
  if (smto == "auto_lambda") g.smto_params["lr_scale"] = {1000, 100, 10, 1, 0.1, 0.01, 0.001};
  if (smto == "rotograd") g.smto_params["rot_lr_scale"] = {5, 1, 0.5, 0.1};
  return g;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  Vec losses;
  Vec weights;
  double interference = 0.0;
  Diagnostics diagnostics;  // aggregator diagnostics, empty for loss-based methods

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  Vec train_loss;  // mean over the epoch's steps
  TaskMetrics val;
  TaskMetrics test;
  double val_score = 0.0;
  double interference = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrialResult {
  TrialConfig config;
  std::vector<std::string> tasks;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  WeightTrace trace;
  std::size_t best_epoch = 0;
  bool crashed = false;
  std::size_t crash_step = 0;
  std::string crash_message;
  double wall_seconds = 0.0;

  const EpochRecord& best() const {
    if (epochs.empty()) throw InvalidArgument("trial has no completed epoch");
    return epochs[best_epoch];
  }
  const TaskMetrics& best_test() const { return best().test; }

  friend bool operator==(const TrialResult&, const TrialResult&) = default;
};

// Bitwise comparison of everything except wall time.
inline bool same_numbers(const TrialResult& a, const TrialResult& b) {
  TrialResult x = a, y = b;
  x.wall_seconds = y.wall_seconds = 0.0;
  return x == y;
}

// ---------------------------------------------------------------------------
// Problem and network construction
// ---------------------------------------------------------------------------

inline DataSplits make_problem(const ProblemConfig& p) {
  Rng rng(p.data_seed, 0x5eed);
  if (p.id == "symmetric_two_task") {
    SymmetricTwoTaskOptions o;
    o.input_dim = p.input_dim;
    o.classes = p.classes;
    o.label_noise = p.label_noise;
    return symmetric_two_task(rng, p.size, o);
  }
  if (p.id == "mixed_norm_two_task") {
    MixedNormOptions o;
    o.input_dim = p.input_dim;
    o.classes = p.classes;
    o.label_noise = p.label_noise;
    o.recon_dim = p.recon_dim;
    o.recon_scale = p.recon_scale;
    return mixed_norm_two_task(rng, p.size, o);
  }
  if (p.id == "conflict_regression") {
    ConflictSpec s;
    s.tasks = p.tasks;
    s.kappa = p.kappa;
    s.noise = p.noise;
    s.input_dim = p.input_dim;
    return conflict_regression(s, rng, p.size);
  }
  if (p.id == "multimnist") {
    MultiMnistOptions o;
    o.size = p.size;
    o.tasks = p.mnist_tasks;
    return load_multimnist(p.idx_images, p.idx_labels, rng, o);
  }
  throw InvalidArgument("unknown problem id: " + p.id);
}

inline std::vector<std::size_t> default_encoder(const std::string& problem) {
  if (problem == "mixed_norm_two_task") return {32, 6};
  if (problem == "conflict_regression") return {32, 8};
  if (problem == "multimnist") return {128, 32};
  return {32, 16};
}

inline NetworkSpec make_network(const TrialConfig& cfg, std::size_t input_dim,
                                const std::vector<TaskDescriptor>& tasks) {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.dropout_p = cfg.dropout_p;
  const auto widths = cfg.encoder.empty() ? default_encoder(cfg.problem.id) : cfg.encoder;
  for (std::size_t w : widths) spec.encoder.push_back({w, Activation::kTanh});
  for (const auto& t : tasks) spec.heads.push_back({t.name, {}, t.output_dim, t.loss});
  return spec;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace detail {

inline double accuracy(const Mat& logits, const std::vector<int>& labels) {
  std::size_t hit = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const auto arg = std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
    if (int(arg) == labels[r]) ++hit;
  }
  return logits.rows() == 0 ? 0.0 : double(hit) / double(logits.rows());
}

// Accuracy for classification heads, mean squared error for regression heads.
inline TaskMetrics evaluate(const NetworkSpec& spec, const Params& params, const Batch& data,
                            std::span<const Mat> rotations) {
  Rng unused(0);
  const ForwardResult fw = forward(spec, params, data, unused, false, rotations);
  TaskMetrics out;
  for (std::size_t t = 0; t < spec.tasks(); ++t) {
    TaskMetricSet m{spec.heads[t].name, {}};
    if (spec.heads[t].loss == LossKind::kCrossEntropy) {
      m.metrics.push_back({"acc", accuracy(fw.outputs[t], data.targets[t].labels), false});
    } else {
      m.metrics.push_back({"mse", fw.losses[t], true});
    }
    out.push_back(std::move(m));
  }
  return out;
}

// Per-task-normalized validation scalar: accuracy for classification, minus
// the MSE relative to the initial-parameter MSE for regression.
inline double validation_score(const TaskMetrics& val, const Vec& reference_mse) {
  double s = 0.0;
  for (std::size_t t = 0; t < val.size(); ++t) {
    const Metric& m = val[t].metrics.front();
    s += m.lower_is_better ? -m.value / std::max(reference_mse[t], 1e-300) : m.value;
  }
  return s / double(val.size());
}

inline Dataset select_task(const Dataset& d, std::size_t t) {
  Dataset out = d;
  out.targets = {d.targets.at(t)};
  out.tasks = {d.tasks.at(t)};
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

// Per-run mutable state of the loss- and gradient-based methods.
struct SmtoRuntime {
  std::string id;
  std::size_t tasks = 0;
  Rng rng{0};
  UwState uw;
  AdamState uw_adam;
  FamoState famo;
  WeightVector lambda;
  CdttState cdtt;
  RotationSet rot;
  WeightVector fixed;
};

inline Vec weighted_shared(const GradientBundle& g, std::span<const double> w) {
  return combine_rows(g.matrix(), w);
}

}  // namespace detail

inline TrialResult run_trial_on(const TrialConfig& cfg, const DataSplits& data) {
  validate(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  TrialResult res;
  res.config = cfg;

  Dataset train = data.train, val = data.val, test = data.test;
  if (cfg.smto == "single_task") {
    const auto t = std::size_t(smto_param(cfg, "task"));
    if (t >= data.tasks().size()) throw InvalidArgument("single_task: task index out of range");
    train = detail::select_task(train, t);
    val = detail::select_task(val, t);
    test = detail::select_task(test, t);
  }
  if (train.size() == 0) throw InvalidArgument("run_trial: empty training split");
  const NetworkSpec spec = make_network(cfg, train.inputs.cols(), train.tasks);
  spec.validate();
  const std::size_t nt = spec.tasks();
  for (const auto& h : spec.heads) res.tasks.push_back(h.name);
  res.trace.smto = cfg.smto;
  res.trace.seed = cfg.seed;

  const Rng root(cfg.seed, 0x7a1);
  Rng init_rng = root.fork(1), shuffle_rng = root.fork(2), dropout_rng = root.fork(3);
  Rng val_rng = root.fork(5);
  Params params = [&] {
    Rng r = init_rng;
    return init_params(spec, r);
  }();
  AdamState adam(params.size(), cfg.lr, cfg.weight_decay);

  detail::SmtoRuntime rt;
  rt.id = cfg.smto;
  rt.tasks = nt;
  rt.rng = root.fork(4);
  if (cfg.smto == "uw") {
    rt.uw = UwState(nt);
    rt.uw_adam = AdamState(nt, cfg.lr);
  }
  if (cfg.smto == "famo") rt.famo = FamoState(nt, smto_param(cfg, "gamma"), smto_param(cfg, "beta"));
  if (cfg.smto == "auto_lambda") rt.lambda = WeightVector(Vec(nt, smto_param(cfg, "init")), WeightConvention::kFree);
  if (cfg.smto == "cdtt") {
    rt.cdtt = CdttState(nt, smto_param(cfg, "alpha"), std::size_t(smto_param(cfg, "window")));
  }
  if (cfg.smto == "rotograd") rt.rot = RotationSet(nt, spec.feature_dim());
  if (cfg.smto == "fixed") {
    if (cfg.fixed_weights.size() != nt) throw InvalidArgument("fixed_weights: one weight per task required");
    rt.fixed = WeightVector(cfg.fixed_weights, WeightConvention::kFree);
  }

  const Batch val_all = val.all(), test_all = test.all();
  std::span<const Mat> no_rot;
  auto rotations = [&]() -> std::span<const Mat> { return cfg.smto == "rotograd" ? rt.rot.rotations() : no_rot; };

  Vec reference_mse(nt, 1.0);
  {
    const TaskMetrics m0 = detail::evaluate(spec, params, val_all, rotations());
    for (std::size_t t = 0; t < nt; ++t)
      if (m0[t].metrics.front().lower_is_better) reference_mse[t] = m0[t].metrics.front().value;
  }

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t step = 0;

  try {
    for (std::size_t ep = 0; ep < cfg.epochs; ++ep) {
      shuffle_rng.shuffle(order);
      EpochRecord rec;
      rec.epoch = ep;
      rec.train_loss.assign(nt, 0.0);
      InterferenceAccumulator inter;
      std::size_t nsteps = 0;
      for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size, ++step, ++nsteps) {
        const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
        const Batch batch = train.batch(std::span<const std::size_t>(order.data() + b0, b1 - b0));
        const ForwardResult fw = forward(spec, params, batch, dropout_rng, true, rotations());
        const PerTaskGradients g = backward_per_task(spec, params, batch, fw, rotations());
        const Vec& losses = fw.losses;

        Vec shared_dir;
        Vec head_w(nt, 1.0);
        WeightVector w;
        Diagnostics diag;
        const std::string& id = cfg.smto;
        if (id == "unit_scal" || id == "single_task") {
          w = unit_scal(losses);
        } else if (id == "si") {
          w = si(losses);
        } else if (id == "rlw_normal") {
          w = rlw(rt.rng, RlwDistribution::kNormal, nt);
        } else if (id == "rlw_dirichlet") {
          w = rlw(rt.rng, RlwDistribution::kDirichlet, nt);
        } else if (id == "uw") {
          const UwLoss u = uw_loss(losses, rt.uw);
          w = u.weights;
          adam_step(rt.uw_adam, rt.uw.log_var, u.grad_log_var);
        } else if (id == "famo") {
          w = famo_weights(rt.famo, losses);
        } else if (id == "auto_lambda") {
          w = rt.lambda;
        } else if (id == "fixed") {
          w = fixed(rt.fixed, losses);
        } else if (id == "rotograd") {
          w = unit_scal(losses);
          const Mat enc = encoder_side_gradients(rt.rot, g.feature_grads);
          const RotationTarget target = rotation_target(enc);
          const RotationLoss rl = rotation_loss(rt.rot, g.feature_grads, target.v);
          for (std::size_t t = 0; t < nt; ++t)
            rt.rot.descend(t, rl.generator_grads[t], cfg.lr * smto_param(cfg, "rot_lr_scale"));
        } else {
          AggregationResult agg;
          if (id == "mgda_ub") {
            // Weights from the gradients w.r.t. the shared representation.
            const AggregationResult z = mgda_ub(GradientBundle(g.feature_grads));
            agg.weights = z.weights;
            agg.direction = detail::weighted_shared(g.shared, z.weights.values());
            agg.diagnostics = z.diagnostics;
          } else if (id == "pcgrad") {
            agg = pcgrad(g.shared, rt.rng);
          } else if (id == "graddrop") {
            agg = graddrop(g.shared, rt.rng, {smto_param(cfg, "k"), smto_param(cfg, "leak")});
          } else if (id == "edm") {
            agg = edm(g.shared);
          } else if (id == "imtl_g") {
            agg = imtl_g(g.shared, {smto_param(cfg, "alpha_max")});
          } else if (id == "cagrad") {
            CagradOptions o;
            o.c = smto_param(cfg, "c");
            agg = cagrad(g.shared, o);
          } else if (id == "nash_mtl") {
            agg = nash_mtl(g.shared, std::size_t(smto_param(cfg, "iters")));
          } else if (id == "cdtt") {
            agg = cdtt(g.shared, losses, rt.cdtt);
          } else {
            throw InvalidArgument("unknown SMTO id: " + id);
          }
          require_finite(agg.direction, id + " direction");
          shared_dir = std::move(agg.direction);
          w = agg.weights;
          diag = std::move(agg.diagnostics);
        }
        if (shared_dir.empty()) {
          shared_dir = detail::weighted_shared(g.shared, w.values());
          head_w = w.values();
        }
        const Vec full = assemble_gradient(params, shared_dir, g.heads, head_w);
        require_finite(full, "update direction");

        Params before = cfg.smto == "auto_lambda" ? params : Params{};
        adam_step(adam, params.values(), full);

        if (id == "famo") {
          Rng unused(0);
          const ForwardResult next = forward(spec, params, batch, unused, true, rotations(), &fw.masks);
          famo_update(rt.famo, losses, next.losses);
        }
        if (id == "auto_lambda") {
          std::vector<std::size_t> vrows(std::min(cfg.batch_size, val.size()));
          for (auto& r : vrows) r = val_rng.index(val.size());
          const Batch vb = val.batch(vrows);
          const LookaheadModel model{spec, before, cfg.lr};
          const AutoLambdaResult al = auto_lambda_update(rt.lambda, batch, vb, model, cfg.lr * smto_param(cfg, "lr_scale"));
          rt.lambda = al.lambda;
        }

        StepRecord sr;
        sr.step = step;
        sr.epoch = ep;
        sr.losses = losses;
        sr.weights = w.values();
        sr.interference = inter.add(g.shared);
        sr.diagnostics = std::move(diag);
        res.trace.push(ep, w.values());
        res.steps.push_back(std::move(sr));
        axpy(1.0, losses, rec.train_loss);
      }
      for (double& v : rec.train_loss) v /= double(std::max<std::size_t>(nsteps, 1));
      rec.interference = inter.mean();
      rec.val = detail::evaluate(spec, params, val_all, rotations());
      rec.test = detail::evaluate(spec, params, test_all, rotations());
      rec.val_score = detail::validation_score(rec.val, reference_mse);
      if (!std::isfinite(rec.val_score)) throw NumericalError("non-finite validation score");
      res.epochs.push_back(std::move(rec));
    }
  } catch (const Error& e) {
    res.crashed = true;
    res.crash_step = step;
    res.crash_message = e.what();
  }

  for (std::size_t e = 0; e < res.epochs.size(); ++e)
    if (res.epochs[e].val_score > res.epochs[res.best_epoch].val_score) res.best_epoch = e;
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline TrialResult run_trial(const TrialConfig& cfg) {
  validate(cfg);
  return run_trial_on(cfg, make_problem(cfg.problem));
}

using Trainer = std::function<TrialResult(const TrialConfig&)>;

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

// Runs fn(0..n-1) on up to `threads` workers; results are stored by index, so
// the output does not depend on scheduling. The first exception is rethrown.
template <class T>
std::vector<T> parallel_map(std::size_t n, std::size_t threads, const std::function<T(std::size_t)>& fn) {
  std::vector<std::optional<T>> slots(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      if (failed.load()) return;
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
        return;
      }
    }
  };
  const std::size_t k = std::max<std::size_t>(1, std::min(threads, n));
  if (k == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < k; ++i) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<T> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline std::vector<TrialResult> run_trials(const std::vector<TrialConfig>& cfgs, const Trainer& trainer,
                                           std::size_t threads = 1) {
  return parallel_map<TrialResult>(cfgs.size(), threads, [&](std::size_t i) { return trainer(cfgs[i]); });
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

struct GridPoint {
  double lr = 0.0;
  double dropout_p = 0.0;
  double weight_decay = 0.0;
  std::map<std::string, double> params;

  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

inline std::vector<GridPoint> expand_grid(const GridSpec& g) {
  if (g.lr.empty() || g.dropout.empty() || g.weight_decay.empty()) throw InvalidArgument("grid: empty axis");
  std::vector<std::map<std::string, double>> combos{{}};
  for (const auto& [k, vals] : g.smto_params) {
    if (vals.empty()) throw InvalidArgument("grid: empty axis " + k);
    std::vector<std::map<std::string, double>> next;
    for (const auto& c : combos)
      for (double v : vals) {
        auto m = c;
        m[k] = v;
        next.push_back(std::move(m));
      }
    combos = std::move(next);
  }
  std::vector<GridPoint> out;
  for (double lr : g.lr)
    for (double d : g.dropout)
      for (double wd : g.weight_decay)
        for (const auto& c : combos) out.push_back({lr, d, wd, c});
  return out;
}

inline TrialConfig apply_point(TrialConfig cfg, const GridPoint& p) {
  cfg.lr = p.lr;
  cfg.dropout_p = p.dropout_p;
  cfg.weight_decay = p.weight_decay;
  for (const auto& [k, v] : p.params) cfg.smto_params[k] = v;
  return cfg;
}

struct GridEntry {
  GridPoint point;
  Vec val_scores;  // best validation score of each non-crashed seed
  std::size_t crashed = 0;
  bool excluded = false;  // every seed crashed
  double mean_val = 0.0;
};

struct GridSummary {
  std::vector<GridEntry> entries;
  std::size_t best = 0;
  std::vector<TrialResult> final_runs;  // selection seeds followed by the extra seeds
  std::vector<std::string> report;      // one line per excluded grid point
};

// Declared tie-break on equal mean validation score: smaller lr, then smaller
// dropout, then smaller weight decay, then smaller SMTO parameters.
inline bool grid_point_preferred(const GridPoint& a, const GridPoint& b) {
  if (a.lr != b.lr) return a.lr < b.lr;
  if (a.dropout_p != b.dropout_p) return a.dropout_p < b.dropout_p;
  if (a.weight_decay != b.weight_decay) return a.weight_decay < b.weight_decay;
  return a.params < b.params;
}

inline GridSummary grid_search(const TrialConfig& base, const GridSpec& grid, std::size_t seeds_per_config,
                               std::size_t seeds_final, const Trainer& trainer = run_trial,
                               std::size_t threads = 1) {
  if (seeds_per_config == 0) throw InvalidArgument("grid_search: seeds_per_config must be >= 1");
  const auto points = expand_grid(grid);
  std::vector<TrialConfig> cfgs;
  for (const auto& p : points)
    for (std::size_t s = 0; s < seeds_per_config; ++s) {
      TrialConfig c = apply_point(base, p);
      c.seed = base.seed + s;
      cfgs.push_back(std::move(c));
    }
  const auto results = run_trials(cfgs, trainer, threads);

  GridSummary out;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < points.size(); ++i) {
    GridEntry e;
    e.point = points[i];
    for (std::size_t s = 0; s < seeds_per_config; ++s) {
      const auto& r = results[i * seeds_per_config + s];
      if (r.crashed || r.epochs.empty()) {
        ++e.crashed;
      } else {
        e.val_scores.push_back(r.best().val_score);
      }
    }
    e.excluded = e.val_scores.empty();
    if (e.excluded) {
      out.report.push_back("excluded: all " + std::to_string(seeds_per_config) + " seeds crashed at lr=" +
                           std::to_string(e.point.lr));
    } else {
      e.mean_val = mean_of(e.val_scores);
      if (!best) {
        best = i;
      } else {
        const auto& cur = out.entries[*best];
        if (e.mean_val > cur.mean_val ||
            (e.mean_val == cur.mean_val && grid_point_preferred(e.point, cur.point))) {
          best = i;
        }
      }
    }
    out.entries.push_back(std::move(e));
  }
  if (!best) throw NumericalError("grid_search: every grid point crashed");
  out.best = *best;

  for (std::size_t s = 0; s < seeds_per_config; ++s) out.final_runs.push_back(results[*best * seeds_per_config + s]);
  std::vector<TrialConfig> extra;
  for (std::size_t s = 0; s < seeds_final; ++s) {
    TrialConfig c = apply_point(base, points[*best]);
    c.seed = base.seed + seeds_per_config + s;
    extra.push_back(std::move(c));
  }
  for (auto& r : run_trials(extra, trainer, threads)) out.final_runs.push_back(std::move(r));
  return out;
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

inline constexpr int kSchemaVersion = 1;

struct SmtoSummary {
  std::string smto;
  Vec delta_per_seed;  // one value per non-crashed seed
  Quantiles delta_quantiles;
  double delta_mean = 0.0;
  double delta_stddev = 0.0;
  double delta_of_mean_metrics = 0.0;  // Delta_mtm of the seed-averaged metrics
  TaskMetrics mean_metrics;
  double mean_rank = 0.0;
  std::size_t crashed = 0;
  std::size_t runs = 0;
  double interference = 0.0;  // mean over runs of the per-epoch mean
  Vec mean_weight_error;      // per run: mean over steps of |w_norm - 1/N|
};

struct MetricReport {
  int schema_version = kSchemaVersion;
  std::string problem;
  TaskMetrics baseline;
  std::vector<SmtoSummary> smtos;
  double interference = 0.0;
};

// Element-wise mean of metric tables.
inline TaskMetrics mean_metrics(const std::vector<TaskMetrics>& runs) {
  if (runs.empty()) throw InvalidArgument("mean_metrics: no runs");
  TaskMetrics m = runs.front();
  for (std::size_t t = 0; t < m.size(); ++t)
    for (std::size_t j = 0; j < m[t].metrics.size(); ++j) {
      double s = 0.0;
      for (const auto& r : runs) s += r.at(t).metrics.at(j).value;
      m[t].metrics[j].value = s / double(runs.size());
    }
  return m;
}

// Mean over tasks of |mean_steps(w_i / sum w) - 1/N|: how far the weights an
// SMTO settles around are from equal weighting.
inline double mean_weight_error(const WeightTrace& trace) {
  if (trace.empty()) return 0.0;
  const std::size_t n = trace.tasks();
  Vec avg(n, 0.0);
  for (const auto& w : trace.weights) {
    const WeightVector nw = WeightVector(w, WeightConvention::kFree).normalized();
    axpy(1.0 / double(trace.weights.size()), nw.values(), avg);
  }
  double e = 0.0;
  for (double v : avg) e += std::abs(v - 1.0 / double(n));
  return e / double(n);
}

// Mean over steps and tasks of |w_i / sum w - 1/N| (per-step spread).
inline double mean_step_weight_deviation(const WeightTrace& trace) {
  if (trace.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& w : trace.weights) {
    const WeightVector nw = WeightVector(w, WeightConvention::kFree).normalized();
    double e = 0.0;
    for (double v : nw.values()) e += std::abs(v - 1.0 / double(w.size()));
    acc += e / double(w.size());
  }
  return acc / double(trace.weights.size());
}

// Assembles a report from finished runs. `runs[k]` are the trials of smtos[k].
inline MetricReport summarize(const std::string& problem, const TaskMetrics& baseline,
                              const std::vector<std::string>& smtos,
                              const std::vector<std::vector<TrialResult>>& runs) {
  if (baseline.empty()) throw InvalidArgument("compare: missing single-task baseline");
  if (smtos.size() != runs.size()) throw InvalidArgument("compare: one run list per SMTO required");
  MetricReport rep;
  rep.problem = problem;
  rep.baseline = baseline;
  std::vector<TaskMetrics> means;
  std::vector<std::size_t> ranked;
  Vec all_inter;
  for (std::size_t k = 0; k < smtos.size(); ++k) {
    SmtoSummary s;
    s.smto = smtos[k];
    s.runs = runs[k].size();
    std::vector<TaskMetrics> best;
    Vec inter;
    for (const auto& r : runs[k]) {
      if (r.crashed || r.epochs.empty()) {
        ++s.crashed;
        continue;
      }
      best.push_back(r.best_test());
      s.delta_per_seed.push_back(delta_mtm(r.best_test(), baseline));
      Vec ep;
      for (const auto& e : r.epochs) ep.push_back(e.interference);
      inter.push_back(mean_of(ep));
      all_inter.push_back(inter.back());
      s.mean_weight_error.push_back(mean_weight_error(r.trace));
    }
    if (!best.empty()) {
      s.delta_quantiles = five_numbers(s.delta_per_seed);
      s.delta_mean = mean_of(s.delta_per_seed);
      s.delta_stddev = stddev_of(s.delta_per_seed);
      s.mean_metrics = mean_metrics(best);
      s.delta_of_mean_metrics = delta_mtm(s.mean_metrics, baseline);
      s.interference = mean_of(inter);
      means.push_back(s.mean_metrics);
      ranked.push_back(k);
    }
    rep.smtos.push_back(std::move(s));
  }
  if (!means.empty()) {
    const Vec mr = mean_rank(means);
    for (std::size_t i = 0; i < ranked.size(); ++i) rep.smtos[ranked[i]].mean_rank = mr[i];
  }
  rep.interference = mean_of(all_inter);
  return rep;
}

// Seed-averaged test metrics of one single-task run per task and seed.
inline TaskMetrics single_task_baseline(const TrialConfig& base, std::size_t tasks,
                                        const std::vector<std::uint64_t>& seeds, const Trainer& trainer,
                                        std::size_t threads = 1) {
  std::vector<TrialConfig> cfgs;
  for (std::size_t t = 0; t < tasks; ++t)
    for (auto s : seeds) {
      TrialConfig c = base;
      c.smto = "single_task";
      c.smto_params = {{"task", double(t)}};
      c.fixed_weights.clear();
      c.seed = s;
      cfgs.push_back(std::move(c));
    }
  const auto res = run_trials(cfgs, trainer, threads);
  TaskMetrics out;
  for (std::size_t t = 0; t < tasks; ++t) {
    std::vector<TaskMetrics> ok;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const auto& r = res[t * seeds.size() + i];
      if (!r.crashed && !r.epochs.empty()) ok.push_back(r.best_test());
    }
    if (ok.empty()) throw NumericalError("compare: single-task baseline crashed for task " + std::to_string(t));
    out.push_back(mean_metrics(ok).front());
  }
  return out;
}

struct SmtoChoice {
  std::string id;
  std::map<std::string, double> params;
  double lr = 0.0;  // 0 keeps the base learning rate
};

inline MetricReport compare_smtos(const TrialConfig& base, const std::vector<SmtoChoice>& smtos,
                                  const std::vector<std::uint64_t>& seeds, const Trainer& trainer = run_trial,
                                  std::size_t threads = 1) {
  if (seeds.empty()) throw InvalidArgument("compare: no seeds");
  const std::size_t tasks = make_problem(base.problem).tasks().size();
  const TaskMetrics baseline = single_task_baseline(base, tasks, seeds, trainer, threads);
  std::vector<TrialConfig> cfgs;
  std::vector<std::string> ids;
  for (const auto& s : smtos) {
    ids.push_back(s.id);
    for (auto seed : seeds) {
      TrialConfig c = base;
      c.smto = s.id;
      c.smto_params = s.params;
      if (s.lr > 0.0) c.lr = s.lr;
      c.seed = seed;
      cfgs.push_back(std::move(c));
    }
  }
  const auto res = run_trials(cfgs, trainer, threads);
  std::vector<std::vector<TrialResult>> runs(smtos.size());
  for (std::size_t k = 0; k < smtos.size(); ++k)
    for (std::size_t i = 0; i < seeds.size(); ++i) runs[k].push_back(res[k * seeds.size() + i]);
  return summarize(base.problem.id, baseline, ids, runs);
}

// ---------------------------------------------------------------------------
// Fixed-weight replay
// ---------------------------------------------------------------------------

struct ReplayResult {
  TrialResult original;
  TrialResult replay;
  WeightVector weights;
};

inline ReplayResult replay_with_fixed_weights(const TrialResult& original, const Trainer& trainer = run_trial,
                                              double beta = 0.9) {
  if (original.crashed) throw NumericalError("extract_and_replay: source trial crashed");
  ReplayResult out;
  out.original = original;
  out.weights = extract_fixed_weights(original.trace, beta);
  TrialConfig c = original.config;
  c.smto = "fixed";
  c.smto_params.clear();
  c.fixed_weights = out.weights.values();
  out.replay = trainer(c);
  return out;
}

inline ReplayResult extract_and_replay(const TrialConfig& cfg, const Trainer& trainer = run_trial,
                                       double beta = 0.9) {
  return replay_with_fixed_weights(trainer(cfg), trainer, beta);
}

}  // namespace mtlbench
