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
#include <map>

#include <gtest/gtest.h>

#include "mtlbench/harness.hpp"
#include "oracles.hpp"

namespace mtlbench {
namespace {

TrialConfig small_config(const std::string& problem, const std::string& smto, std::size_t epochs = 2) {
  TrialConfig c;
  c.problem.id = problem;
  c.problem.size = 240;
  c.smto = smto;
  c.epochs = epochs;
  c.seed = 3;
  return c;
}

TEST(RunTrial, SmokeUnitScal) {
  const auto r = run_trial(small_config("symmetric_two_task", "unit_scal"));
  ASSERT_FALSE(r.crashed) << r.crash_message;
  ASSERT_EQ(r.epochs.size(), 2u);
  EXPECT_EQ(r.tasks, (std::vector<std::string>{"class_0", "class_1"}));
  for (const auto& e : r.epochs) {
    ASSERT_EQ(e.val.size(), 2u);
    EXPECT_EQ(e.val[0].metrics[0].name, "acc");
  }
  // 160 training rows in batches of 32.
  EXPECT_EQ(r.steps.size(), 10u);
  EXPECT_EQ(r.trace.weights.size(), r.steps.size());
  EXPECT_LT(r.best_epoch, 2u);
}

TEST(RunTrial, EverySmtoCompletesOnEveryProblem) {
  for (const std::string problem : {"symmetric_two_task", "mixed_norm_two_task", "conflict_regression"}) {
    for (const auto& id : multitask_smto_ids()) {
      auto c = small_config(problem, id, 1);
      const auto r = run_trial(c);
      EXPECT_FALSE(r.crashed) << problem << "/" << id << ": " << r.crash_message;
      const std::size_t n = problem == "conflict_regression" ? 4 : 2;
      for (const auto& s : r.steps) {
        ASSERT_EQ(s.weights.size(), n) << id;
        ASSERT_EQ(s.losses.size(), n) << id;
      }
    }
  }
}

TEST(RunTrial, BitwiseDeterministic) {
  for (const std::string id : {"unit_scal", "rlw_dirichlet", "pcgrad", "graddrop", "famo", "auto_lambda"}) {
    auto c = small_config("mixed_norm_two_task", id);
    c.dropout_p = 0.2;
    const auto a = run_trial(c);
    const auto b = run_trial(c);
    EXPECT_TRUE(same_numbers(a, b)) << id;
    c.seed += 1;
    EXPECT_FALSE(same_numbers(a, run_trial(c))) << id;
  }
}

TEST(RunTrial, ParallelExecutionChangesNothing) {
  std::vector<TrialConfig> cfgs;
  for (std::uint64_t s = 0; s < 4; ++s) {
    auto c = small_config("conflict_regression", s % 2 ? "nash_mtl" : "rlw_normal", 1);
    c.seed = s;
    cfgs.push_back(c);
  }
  const auto serial = run_trials(cfgs, run_trial, 1);
  const auto parallel = run_trials(cfgs, run_trial, 3);
  for (std::size_t i = 0; i < cfgs.size(); ++i) EXPECT_TRUE(same_numbers(serial[i], parallel[i]));
}

TEST(RunTrial, NashResidualAtEveryStep) {
  auto c = small_config("conflict_regression", "nash_mtl", 2);
  c.problem.kappa = 0.0;
  c.problem.size = 600;
  const auto r = run_trial(c);
  ASSERT_FALSE(r.crashed) << r.crash_message;
  for (const auto& s : r.steps) {
    ASSERT_TRUE(s.diagnostics.count("residual"));
    EXPECT_LE(s.diagnostics.at("residual"), 1e-5) << "step " << s.step;
  }
}

TEST(RunTrial, FailuresAreRecordedAsCrashes) {
  auto c = small_config("conflict_regression", "unit_scal", 3);
  c.lr = 1e200;
  const auto r = run_trial(c);
  EXPECT_TRUE(r.crashed);
  EXPECT_FALSE(r.crash_message.empty());
  EXPECT_LE(r.crash_step, r.steps.size());
}

TEST(RunTrial, SingleTaskReference) {
  auto c = small_config("conflict_regression", "single_task", 1);
  c.smto_params = {{"task", 2}};
  const auto r = run_trial(c);
  ASSERT_FALSE(r.crashed);
  EXPECT_EQ(r.tasks, (std::vector<std::string>{"reg_2"}));
  EXPECT_EQ(r.best_test().size(), 1u);
  c.smto_params = {{"task", 4}};
  EXPECT_THROW(run_trial(c), InvalidArgument);
}

TEST(Config, ValidationErrors) {
  TrialConfig c;
  c.smto = "nope";
  EXPECT_THROW(validate(c), InvalidArgument);
  c.smto = "cagrad";
  c.smto_params = {{"alpha", 1.0}};
  EXPECT_THROW(validate(c), InvalidArgument);
  c.smto_params = {{"c", 0.3}};
  EXPECT_NO_THROW(validate(c));
  EXPECT_EQ(smto_param(c, "c"), 0.3);
  c.lr = 0.0;
  EXPECT_THROW(validate(c), InvalidArgument);
  c = {};
  c.problem.id = "imagenet";
  EXPECT_THROW(validate(c), InvalidArgument);
  c = {};
  c.smto = "fixed";
  EXPECT_THROW(validate(c), InvalidArgument);
}

TEST(Grid, ExpansionCoversEveryCombination) {
  GridSpec g;
  g.lr = {0.1, 0.01};
  g.dropout = {0.0, 0.5};
  g.smto_params = {{"c", {0.2, 0.5, 0.8}}};
  EXPECT_EQ(expand_grid(g).size(), 12u);
  EXPECT_EQ(default_grid("cagrad").smto_params.at("c").size(), 3u);
  EXPECT_EQ(expand_grid(default_grid("unit_scal")).size(), 42u);
  g.lr.clear();
  EXPECT_THROW(expand_grid(g), InvalidArgument);
}

// A trainer that reports an injected validation score, so selection logic is
// tested without training.
Trainer scoring_stub(std::function<double(const TrialConfig&)> score, std::function<bool(const TrialConfig&)> crash = {}) {
  return [=](const TrialConfig& c) {
    TrialResult r;
    r.config = c;
    r.tasks = {"a"};
    if (crash && crash(c)) {
      r.crashed = true;
      return r;
    }
    EpochRecord e;
    e.val_score = score(c);
    e.test = {{"a", {{"acc", e.val_score, false}}}};
    r.epochs.push_back(e);
    r.trace.push(0, {1.0});
    return r;
  };
}

TEST(Grid, SinglePointIsSelected) {
  GridSpec g;
  g.lr = {0.003};
  g.dropout = {0.1};
  const auto s = grid_search(TrialConfig{}, g, 2, 3, scoring_stub([](const TrialConfig&) { return 0.5; }));
  EXPECT_EQ(s.best, 0u);
  EXPECT_EQ(s.final_runs.size(), 5u);
  EXPECT_EQ(s.final_runs.back().config.seed, 4u);
  EXPECT_EQ(s.final_runs.back().config.lr, 0.003);
}

TEST(Grid, BetterValidationWins) {
  GridSpec g;
  g.lr = {0.01, 0.001};
  g.dropout = {0.0};
  const auto s = grid_search(TrialConfig{}, g, 1, 0,
                             scoring_stub([](const TrialConfig& c) { return c.lr == 0.01 ? 0.9 : 0.8; }));
  EXPECT_EQ(s.entries[s.best].point.lr, 0.01);
}

TEST(Grid, TiesPreferSmallerLearningRateThenDropout) {
  GridSpec g;
  g.lr = {0.01, 0.001};
  g.dropout = {0.3, 0.1};
  const auto s = grid_search(TrialConfig{}, g, 1, 0, scoring_stub([](const TrialConfig&) { return 0.7; }));
  EXPECT_EQ(s.entries[s.best].point.lr, 0.001);
  EXPECT_EQ(s.entries[s.best].point.dropout_p, 0.1);
  const auto again = grid_search(TrialConfig{}, g, 1, 0, scoring_stub([](const TrialConfig&) { return 0.7; }));
  EXPECT_EQ(again.best, s.best);
}

TEST(Grid, CrashedPointsAreExcludedAndReported) {
  GridSpec g;
  g.lr = {0.01, 0.001};
  g.dropout = {0.0};
  const auto s = grid_search(TrialConfig{}, g, 2, 0, scoring_stub([](const TrialConfig&) { return 0.1; }, [](const TrialConfig& c) { return c.lr == 0.001; }));
  EXPECT_EQ(s.entries[s.best].point.lr, 0.01);
  EXPECT_TRUE(s.entries[1].excluded);
  EXPECT_EQ(s.entries[1].crashed, 2u);
  EXPECT_EQ(s.report.size(), 1u);
  EXPECT_THROW(grid_search(TrialConfig{}, g, 1, 0, scoring_stub([](const TrialConfig&) { return 0.1; }, [](const TrialConfig&) { return true; })),
               NumericalError);
}

// Stub trainer for comparisons: test metrics depend on the SMTO id only.
Trainer metric_stub(std::map<std::string, Vec> by_smto) {
  return [=](const TrialConfig& c) {
    TrialResult r;
    r.config = c;
    EpochRecord e;
    if (c.smto == "single_task") {
      const auto t = std::size_t(c.smto_params.at("task"));
      e.test = {{"t" + std::to_string(t), {{"acc", by_smto.at("single_task")[t], false}}}};
    } else {
      const Vec& v = by_smto.at(c.smto);
      for (std::size_t t = 0; t < v.size(); ++t) e.test.push_back({"t" + std::to_string(t), {{"acc", v[t], false}}});
    }
    r.epochs.push_back(e);
    r.trace.push(0, Vec(e.test.size(), 1.0));
    return r;
  };
}

TEST(Compare, PublishedArithmeticAndBaselineIdentity) {
  TrialConfig base;
  base.problem.size = 60;
  const auto stub = metric_stub({{"single_task", {100.0, 100.0}},
                                 {"unit_scal", {100.0 - 1.043, 100.0 - 16.86}},
                                 {"si", {100.0, 100.0}}});
  const auto rep = compare_smtos(base, {{"unit_scal"}, {"si"}}, {1, 2}, stub);
  EXPECT_EQ(rep.schema_version, kSchemaVersion);
  EXPECT_NEAR(rep.smtos[0].delta_mean, -8.9515, 1e-9);
  EXPECT_EQ(rep.smtos[1].delta_mean, 0.0);
  EXPECT_EQ(rep.smtos[0].delta_per_seed.size(), 2u);
  EXPECT_EQ(rep.smtos[0].mean_rank, 2.0);
  EXPECT_EQ(rep.smtos[1].mean_rank, 1.0);
}

TEST(Compare, MeanRankMatchesBruteForce) {
  TrialConfig base;
  base.problem.size = 60;
  const std::map<std::string, Vec> table{{"single_task", {0.5, 0.5}},
                                         {"unit_scal", {0.9, 0.1}},
                                         {"si", {0.9, 0.6}},
                                         {"edm", {0.2, 0.6}}};
  const auto rep = compare_smtos(base, {{"unit_scal"}, {"si"}, {"edm"}}, {0}, metric_stub(table));
  const Vec r0 = oracle::brute_force_ranks(Vec{0.9, 0.9, 0.2}, false);
  const Vec r1 = oracle::brute_force_ranks(Vec{0.1, 0.6, 0.6}, false);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(rep.smtos[k].mean_rank, 0.5 * (r0[k] + r1[k]));
}

TEST(Compare, CrashesAreCounted) {
  const std::vector<std::vector<TrialResult>> runs{{TrialResult{}}};
  auto crashed = runs;
  crashed[0][0].crashed = true;
  const TaskMetrics base{{"a", {{"acc", 1.0, false}}}};
  const auto rep = summarize("p", base, {"imtl_g"}, crashed);
  EXPECT_EQ(rep.smtos[0].crashed, 1u);
  EXPECT_EQ(rep.smtos[0].runs, 1u);
  EXPECT_TRUE(rep.smtos[0].delta_per_seed.empty());
  EXPECT_THROW(summarize("p", {}, {"x"}, runs), InvalidArgument);
}

TEST(WeightError, HandComputed) {
  WeightTrace tr;
  tr.push(0, {1.0, 3.0});
  tr.push(0, {2.0, 2.0});
  // Normalized: (0.25, 0.75) and (0.5, 0.5); mean (0.375, 0.625).
  EXPECT_NEAR(mean_weight_error(tr), 0.125, 1e-15);
  EXPECT_NEAR(mean_step_weight_deviation(tr), 0.125, 1e-15);
  WeightTrace flat;
  flat.push(0, {0.2, 0.8});
  flat.push(0, {0.8, 0.2});
  EXPECT_NEAR(mean_weight_error(flat), 0.0, 1e-15);
  EXPECT_NEAR(mean_step_weight_deviation(flat), 0.3, 1e-15);
}

TEST(Replay, UnitScalExtractsUniformWeights) {
  const auto rr = extract_and_replay(small_config("conflict_regression", "unit_scal", 2));
  for (double w : rr.weights.values()) EXPECT_NEAR(w, 0.25, 1e-15);
  EXPECT_EQ(rr.replay.config.smto, "fixed");
  EXPECT_FALSE(rr.replay.crashed);
}

TEST(Replay, ConstantWeightsReplayIdentically) {
  auto c = small_config("mixed_norm_two_task", "fixed", 2);
  c.fixed_weights = {0.3, 0.7};
  const auto rr = extract_and_replay(c);
  EXPECT_NEAR(rr.weights[0], 0.3, 1e-12);
  ASSERT_EQ(rr.replay.steps.size(), rr.original.steps.size());
  for (std::size_t i = 0; i < rr.replay.steps.size(); ++i) {
    EXPECT_NEAR(rr.replay.steps[i].weights[0], rr.original.steps[i].weights[0], 1e-12);
    EXPECT_NEAR(rr.replay.steps[i].weights[1], rr.original.steps[i].weights[1], 1e-12);
  }
}

TEST(Replay, CrashedSourceIsRejected) {
  TrialResult r;
  r.crashed = true;
  EXPECT_THROW(replay_with_fixed_weights(r), NumericalError);
}

}  // namespace
}  // namespace mtlbench
