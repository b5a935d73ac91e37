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

// Command-line driver.
//
//   mtlbench run --problem conflict_regression --smto nash_mtl --seeds 3
//   mtlbench grid --problem mixed_norm_two_task --smto cagrad
//   mtlbench compare --problems symmetric_two_task --smtos unit_scal,edm,pcgrad
//   mtlbench extract-replay --trial out/trial_conflict_regression_nash_mtl_1.json
//
// Outputs go to --out (default "out"); MTLBENCH_OUT overrides it.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "mtlbench/io.hpp"
#include "mtlbench/mtlbench.hpp"

namespace fs = std::filesystem;
using namespace mtlbench;

namespace {

std::string output_root(const std::string& flag) {
  if (const char* env = std::getenv("MTLBENCH_OUT"); env != nullptr && *env != '\0') return env;
  return flag;
}

std::vector<std::uint64_t> seed_list(std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = i + 1;
  return s;
}

std::string trial_stem(const TrialResult& r) {
  return "trial_" + r.config.problem.id + "_" + r.config.smto + "_" + std::to_string(r.config.seed);
}

void write_trial(const TrialResult& r, const fs::path& dir, const std::string& stem) {
  save_trial(r, (dir / (stem + ".json")).string());
  save_trial_csv(r, (dir / (stem + ".csv")).string());
}

void print_trial(const TrialResult& r) {
  if (r.crashed) {
    std::printf("%-22s %-16s seed %-3llu crashed at step %zu: %s\n", r.config.problem.id.c_str(),
                r.config.smto.c_str(), static_cast<unsigned long long>(r.config.seed), r.crash_step,
                r.crash_message.c_str());
    return;
  }
  std::printf("%-22s %-16s seed %-3llu best epoch %zu  val %.4f  %.1fs\n", r.config.problem.id.c_str(),
              r.config.smto.c_str(), static_cast<unsigned long long>(r.config.seed), r.best_epoch,
              r.epochs[r.best_epoch].val_score, r.wall_seconds);
}

void print_report(const MetricReport& rep) {
  std::printf("%s\n%-16s %9s %9s %9s %7s %7s\n", rep.problem.c_str(), "smto", "delta", "sd", "median", "MR",
              "crash");
  for (const auto& s : rep.smtos)
    std::printf("%-16s %9.3f %9.3f %9.3f %7.3f %4zu/%zu\n", s.smto.c_str(), s.delta_mean, s.delta_stddev,
                s.delta_quantiles.median, s.mean_rank, s.crashed, s.runs);
}

Json grid_json(const GridSummary& g) {
  Json entries = Json::array();
  for (const auto& e : g.entries) {
    entries.push_back({{"lr", e.point.lr},
                       {"dropout_p", e.point.dropout_p},
                       {"weight_decay", e.point.weight_decay},
                       {"params", e.point.params},
                       {"val_scores", e.val_scores},
                       {"crashed", e.crashed},
                       {"excluded", e.excluded},
                       {"mean_val", e.mean_val}});
  }
  return {{"schema_version", kSchemaVersion}, {"entries", entries}, {"best", g.best}, {"report", g.report}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task gradient balancing benchmark"};
  app.require_subcommand(1);

  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  std::string out = "out";
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "Output directory (MTLBENCH_OUT overrides)");

  std::string problem, smto, config_path, trial_path;
  std::vector<std::string> problems, smtos;
  std::size_t seeds = 1, grid_seeds = 3, final_seeds = 2;

  auto* run = app.add_subcommand("run", "Train one problem/SMTO pair for several seeds");
  run->add_option("--problem", problem, "Problem id");
  run->add_option("--smto", smto, "SMTO id");
  run->add_option("--config", config_path, "Trial config JSON")->check(CLI::ExistingFile);
  run->add_option("--seeds", seeds, "Number of seeds (1..n)")->check(CLI::PositiveNumber);

  auto* grid = app.add_subcommand("grid", "Grid search over the SMTO's default grid");
  grid->add_option("--problem", problem, "Problem id")->required();
  grid->add_option("--smto", smto, "SMTO id")->required();
  grid->add_option("--config", config_path, "Base trial config JSON")->check(CLI::ExistingFile);
  grid->add_option("--seeds", grid_seeds, "Seeds per grid point")->check(CLI::PositiveNumber);
  grid->add_option("--final-seeds", final_seeds, "Extra seeds for the selected point");

  auto* compare = app.add_subcommand("compare", "Compare SMTOs against single-task baselines");
  compare->add_option("--problems", problems, "Problem ids")->required()->delimiter(',');
  compare->add_option("--smtos", smtos, "SMTO ids")->required()->delimiter(',');
  compare->add_option("--config", config_path, "Base trial config JSON")->check(CLI::ExistingFile);
  compare->add_option("--seeds", seeds, "Number of seeds (1..n)")->check(CLI::PositiveNumber);

  auto* replay = app.add_subcommand("extract-replay", "Retrain a finished trial with its extracted weights");
  replay->add_option("--trial", trial_path, "Trial JSON")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path root = output_root(out);
    fs::create_directories(root);
    TrialConfig base = config_path.empty() ? TrialConfig{} : load_config(config_path);
    if (!problem.empty()) base.problem.id = problem;
    if (!smto.empty()) base.smto = smto;

    if (*run) {
      std::vector<TrialConfig> cfgs;
      for (auto s : seed_list(seeds)) {
        TrialConfig c = base;
        c.seed = s;
        validate(c);
        cfgs.push_back(c);
      }
      for (const auto& r : run_trials(cfgs, run_trial, threads)) {
        write_trial(r, root, trial_stem(r));
        print_trial(r);
      }
    } else if (*grid) {
      const GridSummary g = grid_search(base, default_grid(base.smto), grid_seeds, final_seeds, run_trial, threads);
      const std::string stem = "grid_" + base.problem.id + "_" + base.smto;
      detail::write_text((root / (stem + ".json")).string(), grid_json(g).dump(2));
      for (const auto& r : g.final_runs) write_trial(r, root, stem + "_seed" + std::to_string(r.config.seed));
      for (const auto& line : g.report) std::printf("%s\n", line.c_str());
      const auto& best = g.entries[g.best];
      std::printf("selected lr %g dropout %g weight decay %g (mean val %.4f)\n", best.point.lr, best.point.dropout_p,
                  best.point.weight_decay, best.mean_val);
    } else if (*compare) {
      std::vector<SmtoChoice> choices;
      for (const auto& id : smtos) choices.push_back({id});
      for (const auto& p : problems) {
        TrialConfig c = base;
        c.problem.id = p;
        const MetricReport rep = compare_smtos(c, choices, seed_list(seeds), run_trial, threads);
        save_report(rep, (root / ("report_" + p + ".json")).string());
        print_report(rep);
      }
    } else if (*replay) {
      const TrialResult original = load_trial(trial_path);
      const ReplayResult r = replay_with_fixed_weights(original, run_trial);
      write_trial(r.replay, root, fs::path(trial_path).stem().string() + "_replay");
      std::printf("extracted weights:");
      for (double w : r.weights.values()) std::printf(" %.4f", w);
      std::printf("\n");
      print_trial(r.replay);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mtlbench: %s\n", e.what());
    return 1;
  }
  return 0;
}
