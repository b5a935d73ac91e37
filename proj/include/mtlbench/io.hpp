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

// JSON persistence of configs, trial results and reports; per-trial CSV.
// Requires nlohmann/json.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtlbench/errors.hpp"
#include "mtlbench/harness.hpp"
#include "mtlbench/metrics.hpp"

namespace mtlbench {

using Json = nlohmann::json;

namespace detail {

// 1-based line and 0-based column of a byte offset.
inline std::pair<std::size_t, std::size_t> line_and_column(const std::string& text, std::size_t offset) {
  std::size_t line = 1, col = 0;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 0;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline Json parse_json(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    const std::size_t off = e.byte == 0 ? 0 : e.byte - 1;
    auto [line, col] = line_and_column(text, off);
    throw ParseError(std::string("malformed JSON: ") + e.what(), line, col);
  }
}

// Field access that reports schema violations as ParseError.
template <class T>
T get(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(std::string("missing field '") + key + "'", 0, 0);
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ParseError(std::string("bad field '") + key + "': " + e.what(), 0, 0);
  }
}

inline void reject_unknown(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": expected an object", 0, 0);
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ParseError(where + ": unknown key '" + k + "'", 0, 0);
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write file: " + path);
  out << text;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

inline Json to_json(const ProblemConfig& p) {
  return {{"id", p.id},
          {"size", p.size},
          {"data_seed", p.data_seed},
          {"input_dim", p.input_dim},
          {"classes", p.classes},
          {"label_noise", p.label_noise},
          {"recon_dim", p.recon_dim},
          {"recon_scale", p.recon_scale},
          {"tasks", p.tasks},
          {"kappa", p.kappa},
          {"noise", p.noise},
          {"idx_images", p.idx_images},
          {"idx_labels", p.idx_labels},
          {"mnist_tasks", p.mnist_tasks}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline ProblemConfig problem_from_json(const Json& j) {
  detail::reject_unknown(j,
                         {"id", "size", "data_seed", "input_dim", "classes", "label_noise", "recon_dim",
                          "recon_scale", "tasks", "kappa", "noise", "idx_images", "idx_labels", "mnist_tasks"},
                         "problem");
  ProblemConfig p;
  auto opt = [&](const char* k, auto& field) {
    if (j.contains(k)) field = detail::get<std::decay_t<decltype(field)>>(j, k);
  };
  opt("id", p.id);
  opt("size", p.size);
  opt("data_seed", p.data_seed);
  opt("input_dim", p.input_dim);
  opt("classes", p.classes);
  opt("label_noise", p.label_noise);
  opt("recon_dim", p.recon_dim);
  opt("recon_scale", p.recon_scale);
  opt("tasks", p.tasks);
  opt("kappa", p.kappa);
  opt("noise", p.noise);
  opt("idx_images", p.idx_images);
  opt("idx_labels", p.idx_labels);
  opt("mnist_tasks", p.mnist_tasks);
  return p;
}

inline Json to_json(const TrialConfig& c) {
  return {{"problem", to_json(c.problem)},
          {"smto", c.smto},
          {"smto_params", c.smto_params},
          {"fixed_weights", c.fixed_weights},
          {"lr", c.lr},
          {"dropout_p", c.dropout_p},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"encoder", c.encoder}};
}

inline TrialConfig config_from_json(const Json& j) {
  detail::reject_unknown(j,
                         {"problem", "smto", "smto_params", "fixed_weights", "lr", "dropout_p", "weight_decay",
                          "batch_size", "epochs", "seed", "encoder"},
                         "config");
  TrialConfig c;
  if (j.contains("problem")) c.problem = problem_from_json(j.at("problem"));
  auto opt = [&](const char* k, auto& field) {
    if (j.contains(k)) field = detail::get<std::decay_t<decltype(field)>>(j, k);
  };
  opt("smto", c.smto);
  opt("smto_params", c.smto_params);
  opt("fixed_weights", c.fixed_weights);
  opt("lr", c.lr);
  opt("dropout_p", c.dropout_p);
  opt("weight_decay", c.weight_decay);
  opt("batch_size", c.batch_size);
  opt("epochs", c.epochs);
  opt("seed", c.seed);
  opt("encoder", c.encoder);
  return c;
}

// Parses and validates a config file's text.
inline TrialConfig parse_config(const std::string& text) {
  TrialConfig c = config_from_json(detail::parse_json(text));
  validate(c);
  return c;
}

inline TrialConfig load_config(const std::string& path) { return parse_config(detail::read_text(path)); }

// ---------------------------------------------------------------------------
// Trial results
// ---------------------------------------------------------------------------

inline Json to_json(const TaskMetrics& m) {
  Json arr = Json::array();
  for (const auto& t : m) {
    Json ms = Json::array();
    for (const auto& x : t.metrics)
      ms.push_back({{"name", x.name}, {"value", x.value}, {"lower_is_better", x.lower_is_better}});
    arr.push_back({{"task", t.task}, {"metrics", ms}});
  }
  return arr;
}

inline TaskMetrics metrics_from_json(const Json& j) {
  if (!j.is_array()) throw ParseError("metrics: expected an array", 0, 0);
  TaskMetrics out;
  for (const auto& t : j) {
    TaskMetricSet s;
    s.task = detail::get<std::string>(t, "task");
    for (const auto& x : t.at("metrics")) {
      s.metrics.push_back({detail::get<std::string>(x, "name"), detail::get<double>(x, "value"),
                           detail::get<bool>(x, "lower_is_better")});
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline Json to_json(const TrialResult& r) {
  Json steps = Json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"step", s.step},
                     {"epoch", s.epoch},
                     {"losses", s.losses},
                     {"weights", s.weights},
                     {"interference", s.interference},
                     {"diagnostics", s.diagnostics}});
  }
  Json epochs = Json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val", to_json(e.val)},
                      {"test", to_json(e.test)},
                      {"val_score", e.val_score},
                      {"interference", e.interference}});
  }
  return {{"schema_version", kSchemaVersion},
          {"config", to_json(r.config)},
          {"tasks", r.tasks},
          {"steps", steps},
          {"epochs", epochs},
          {"trace",
           {{"smto", r.trace.smto}, {"seed", r.trace.seed}, {"epoch", r.trace.epoch}, {"weights", r.trace.weights}}},
          {"best_epoch", r.best_epoch},
          {"crashed", r.crashed},
          {"crash_step", r.crash_step},
          {"crash_message", r.crash_message},
          {"wall_seconds", r.wall_seconds}};
}

namespace detail {

// Schema violations reported by the JSON library become ParseError.
template <class F>
auto schema_guard(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw ParseError(std::string("schema mismatch: ") + e.what(), 0, 0);
  }
}

}  // namespace detail

inline TrialResult trial_from_json_unchecked(const Json& j) {
  const int version = detail::get<int>(j, "schema_version");
  if (version != kSchemaVersion) throw ParseError("unsupported schema_version " + std::to_string(version), 0, 0);
  TrialResult r;
  r.config = config_from_json(j.at("config"));
  r.tasks = detail::get<std::vector<std::string>>(j, "tasks");
  for (const auto& s : j.at("steps")) {
    r.steps.push_back({detail::get<std::size_t>(s, "step"), detail::get<std::size_t>(s, "epoch"),
                       detail::get<Vec>(s, "losses"), detail::get<Vec>(s, "weights"),
                       detail::get<double>(s, "interference"), detail::get<Diagnostics>(s, "diagnostics")});
  }
  for (const auto& e : j.at("epochs")) {
    EpochRecord rec;
    rec.epoch = detail::get<std::size_t>(e, "epoch");
    rec.train_loss = detail::get<Vec>(e, "train_loss");
    rec.val = metrics_from_json(e.at("val"));
    rec.test = metrics_from_json(e.at("test"));
    rec.val_score = detail::get<double>(e, "val_score");
    rec.interference = detail::get<double>(e, "interference");
    r.epochs.push_back(std::move(rec));
  }
  const Json& t = j.at("trace");
  r.trace.smto = detail::get<std::string>(t, "smto");
  r.trace.seed = detail::get<std::uint64_t>(t, "seed");
  r.trace.epoch = detail::get<std::vector<std::size_t>>(t, "epoch");
  r.trace.weights = detail::get<std::vector<Vec>>(t, "weights");
  r.best_epoch = detail::get<std::size_t>(j, "best_epoch");
  r.crashed = detail::get<bool>(j, "crashed");
  r.crash_step = detail::get<std::size_t>(j, "crash_step");
  r.crash_message = detail::get<std::string>(j, "crash_message");
  r.wall_seconds = detail::get<double>(j, "wall_seconds");
  return r;
}

inline TrialResult trial_from_json(const Json& j) {
  return detail::schema_guard([&] { return trial_from_json_unchecked(j); });
}

inline void save_trial(const TrialResult& r, const std::string& path) {
  detail::write_text(path, to_json(r).dump(1));
}

inline TrialResult load_trial(const std::string& path) {
  return trial_from_json(detail::parse_json(detail::read_text(path)));
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline Json to_json(const Quantiles& q) {
  return {{"min", q.min}, {"q1", q.q1}, {"median", q.median}, {"q3", q.q3}, {"max", q.max}};
}

inline Json to_json(const MetricReport& rep) {
  Json smtos = Json::array();
  for (const auto& s : rep.smtos) {
    smtos.push_back({{"smto", s.smto},
                     {"delta_mtm_per_seed", s.delta_per_seed},
                     {"delta_mtm_quantiles", to_json(s.delta_quantiles)},
                     {"delta_mtm_mean", s.delta_mean},
                     {"delta_mtm_stddev", s.delta_stddev},
                     {"delta_mtm_of_mean_metrics", s.delta_of_mean_metrics},
                     {"mean_metrics", to_json(s.mean_metrics)},
                     {"mean_rank", s.mean_rank},
                     {"crashed", s.crashed},
                     {"runs", s.runs},
                     {"interference", s.interference},
                     {"mean_weight_error", s.mean_weight_error}});
  }
  return {{"schema_version", rep.schema_version},
          {"problem", rep.problem},
          {"baseline", to_json(rep.baseline)},
          {"interference", rep.interference},
          {"smtos", smtos}};
}

inline MetricReport report_from_json_unchecked(const Json& j) {
  MetricReport rep;
  rep.schema_version = detail::get<int>(j, "schema_version");
  if (rep.schema_version != kSchemaVersion) throw ParseError("unsupported schema_version", 0, 0);
  rep.problem = detail::get<std::string>(j, "problem");
  rep.baseline = metrics_from_json(j.at("baseline"));
  rep.interference = detail::get<double>(j, "interference");
  for (const auto& s : j.at("smtos")) {
    SmtoSummary x;
    x.smto = detail::get<std::string>(s, "smto");
    x.delta_per_seed = detail::get<Vec>(s, "delta_mtm_per_seed");
    const Json& q = s.at("delta_mtm_quantiles");
    x.delta_quantiles = {detail::get<double>(q, "min"), detail::get<double>(q, "q1"),
                         detail::get<double>(q, "median"), detail::get<double>(q, "q3"),
                         detail::get<double>(q, "max")};
    x.delta_mean = detail::get<double>(s, "delta_mtm_mean");
    x.delta_stddev = detail::get<double>(s, "delta_mtm_stddev");
    x.delta_of_mean_metrics = detail::get<double>(s, "delta_mtm_of_mean_metrics");
    x.mean_metrics = metrics_from_json(s.at("mean_metrics"));
    x.mean_rank = detail::get<double>(s, "mean_rank");
    x.crashed = detail::get<std::size_t>(s, "crashed");
    x.runs = detail::get<std::size_t>(s, "runs");
    x.interference = detail::get<double>(s, "interference");
    x.mean_weight_error = detail::get<Vec>(s, "mean_weight_error");
    rep.smtos.push_back(std::move(x));
  }
  return rep;
}

inline MetricReport report_from_json(const Json& j) {
  return detail::schema_guard([&] { return report_from_json_unchecked(j); });
}

inline void save_report(const MetricReport& rep, const std::string& path) {
  detail::write_text(path, to_json(rep).dump(1));
}

inline MetricReport load_report(const std::string& path) {
  return report_from_json(detail::parse_json(detail::read_text(path)));
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

// step, epoch, loss_<task>..., weight_<task>..., interference,
// val_<task>_<metric>..., test_<task>_<metric>...
inline std::vector<std::string> csv_header(const TrialResult& r) {
  std::vector<std::string> h{"step", "epoch"};
  for (const auto& t : r.tasks) h.push_back("loss_" + t);
  for (const auto& t : r.tasks) h.push_back("weight_" + t);
  h.push_back("interference");
  if (!r.epochs.empty()) {
    for (const char* split : {"val", "test"}) {
      const auto& m = std::string(split) == "val" ? r.epochs.front().val : r.epochs.front().test;
      for (const auto& t : m)
        for (const auto& x : t.metrics) h.push_back(std::string(split) + "_" + t.task + "_" + x.name);
    }
  }
  return h;
}

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

}  // namespace detail

// One row per step; the val/test columns carry the metrics of the step's epoch
// (empty for steps of an epoch that did not finish).
inline std::string trial_csv(const TrialResult& r) {
  std::ostringstream os;
  const auto header = csv_header(r);
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << "\n";
  for (const auto& s : r.steps) {
    os << s.step << "," << s.epoch;
    for (double v : s.losses) os << "," << detail::fmt(v);
    for (double v : s.weights) os << "," << detail::fmt(v);
    os << "," << detail::fmt(s.interference);
    if (!r.epochs.empty()) {
      const EpochRecord* e = s.epoch < r.epochs.size() ? &r.epochs[s.epoch] : nullptr;
      for (const auto* m : {&r.epochs.front().val, &r.epochs.front().test}) {
        const bool val = m == &r.epochs.front().val;
        for (std::size_t t = 0; t < m->size(); ++t)
          for (std::size_t k = 0; k < (*m)[t].metrics.size(); ++k) {
            os << ",";
            if (e) os << detail::fmt((val ? e->val : e->test)[t].metrics[k].value);
          }
      }
    }
    os << "\n";
  }
  return os.str();
}

inline void save_trial_csv(const TrialResult& r, const std::string& path) { detail::write_text(path, trial_csv(r)); }

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Plain comma-separated text without quoting; rows must match the header width.
inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::size_t line = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string ln = text.substr(pos, end - pos);
    ++line;
    std::vector<std::string> cells;
    std::size_t a = 0;
    while (true) {
      const std::size_t b = ln.find(',', a);
      cells.push_back(ln.substr(a, b == std::string::npos ? std::string::npos : b - a));
      if (b == std::string::npos) break;
      a = b + 1;
    }
    if (t.header.empty()) {
      t.header = std::move(cells);
    } else if (cells.size() != t.header.size()) {
      throw ParseError("csv: expected " + std::to_string(t.header.size()) + " cells, got " +
                           std::to_string(cells.size()),
                       line, ln.size());
    } else {
      t.rows.push_back(std::move(cells));
    }
    pos = end + 1;
  }
  return t;
}

}  // namespace mtlbench
