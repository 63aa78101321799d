// Copyright 2026 The lmkit Authors.
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

// Run reports, multi-seed aggregation and the cross-task summary table.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lmkit/core/error.hpp"
#include "lmkit/eval/metrics.hpp"

namespace lmkit::eval {

using Metrics = std::vector<std::pair<std::string, double>>;  // insertion ordered

// One run of one model on one task. The first metric is the headline one.
struct MetricReport {
  std::string task;
  std::string model;
  std::string family;
  std::uint64_t seed = 0;
  Metrics metrics;
  nlohmann::ordered_json per_class;  // optional breakdown, null when absent

  double get(const std::string& name) const {
    for (const auto& [k, v] : metrics) {
      if (k == name) return v;
    }
    throw ConfigError("report has no metric '" + name + "'");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["task"] = task;
    j["model"] = model;
    j["family"] = family;
    j["seed"] = seed;
    j["metrics"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : metrics) j["metrics"][k] = v;
    if (!per_class.is_null()) j["per_class"] = per_class;
    return j;
  }

  static MetricReport from_json(const nlohmann::ordered_json& j) {
    MetricReport r;
    try {
      r.task = j.at("task").get<std::string>();
      r.model = j.value("model", std::string());
      r.family = j.value("family", std::string());
      r.seed = j.value("seed", std::uint64_t{0});
      for (const auto& [k, v] : j.at("metrics").items()) r.metrics.emplace_back(k, v.get<double>());
      if (j.contains("per_class")) r.per_class = j["per_class"];
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("bad report record: ") + e.what());
    }
    for (const auto& [k, v] : r.metrics) {
      if (!(v >= 0.0 && v <= 100.0)) throw DataError("metric '" + k + "' outside [0, 100]");
    }
    return r;
  }
};

inline MetricReport classification_report(const std::string& task,
                                          const ClassificationReport& c) {
  MetricReport r;
  r.task = task;
  r.metrics = {{"micro_f1", c.micro_f1}, {"macro_f1", c.macro_f1}};
  r.per_class = nlohmann::ordered_json::object();
  for (const auto& [name, s] : c.per_class) {
    r.per_class[name] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1},
                         {"gold", s.gold}};
  }
  return r;
}

inline MetricReport span_report(const std::string& task, const SpanScore& s) {
  MetricReport r;
  r.task = task;
  r.metrics = {{"f1", s.f1}, {"precision", s.precision}, {"recall", s.recall}};
  return r;
}

inline void write_reports(std::ostream& out, const std::vector<MetricReport>& reports) {
  for (const auto& r : reports) out << r.to_json().dump() << '\n';
}

inline std::vector<MetricReport> read_reports(std::istream& in) {
  std::vector<MetricReport> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw DataError("reports line " + std::to_string(lineno) + ": invalid JSON");
    }
    out.push_back(MetricReport::from_json(j));
  }
  return out;
}

// ------------------------------------------------------------- aggregation

struct AggregateReport {
  std::string task;
  std::string model;
  std::string family;
  std::size_t runs = 0;
  Metrics mean;
  Metrics stddev;             // sample standard deviation
  bool stddev_undefined = false;  // a single run: stddev reported as 0

  double mean_of(const std::string& name) const {
    for (const auto& [k, v] : mean) {
      if (k == name) return v;
    }
    throw ConfigError("aggregate has no metric '" + name + "'");
  }
};

// Mean and sample standard deviation over `expected_runs` reports of the
// same task and metric names.
inline AggregateReport average_runs(const std::vector<MetricReport>& reports,
                                    std::size_t expected_runs = 5) {
  if (reports.empty()) throw ConfigError("average_runs: no reports");
  if (reports.size() != expected_runs) {
    throw ConfigError("average_runs: expected " + std::to_string(expected_runs) + " runs, got " +
                      std::to_string(reports.size()));
  }
  const auto& first = reports.front();
  for (const auto& r : reports) {
    if (r.task != first.task) throw ConfigError("average_runs: mixed tasks");
    if (r.metrics.size() != first.metrics.size()) {
      throw ConfigError("average_runs: mismatched metric sets");
    }
    for (std::size_t i = 0; i < r.metrics.size(); ++i) {
      if (r.metrics[i].first != first.metrics[i].first) {
        throw ConfigError("average_runs: mismatched metric sets");
      }
    }
  }
  AggregateReport agg{first.task, first.model, first.family, reports.size(), {}, {}, false};
  const double n = static_cast<double>(reports.size());
  for (std::size_t i = 0; i < first.metrics.size(); ++i) {
    double sum = 0.0;
    for (const auto& r : reports) sum += r.metrics[i].second;
    const double mean = sum / n;
    double sq = 0.0;
    for (const auto& r : reports) sq += (r.metrics[i].second - mean) * (r.metrics[i].second - mean);
    agg.mean.emplace_back(first.metrics[i].first, mean);
    agg.stddev.emplace_back(first.metrics[i].first, n > 1 ? std::sqrt(sq / (n - 1)) : 0.0);
  }
  agg.stddev_undefined = reports.size() == 1;
  return agg;
}

// Groups reports by (family, model, task) and averages each group, which
// must hold `expected_runs` reports.
inline std::vector<AggregateReport> aggregate_all(const std::vector<MetricReport>& reports,
                                                  std::size_t expected_runs = 5) {
  std::vector<std::array<std::string, 3>> order;
  std::map<std::array<std::string, 3>, std::vector<MetricReport>> groups;
  for (const auto& r : reports) {
    const std::array<std::string, 3> key{r.family, r.model, r.task};
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(r);
  }
  std::vector<AggregateReport> out;
  for (const auto& key : order) out.push_back(average_runs(groups[key], expected_runs));
  return out;
}

// ------------------------------------------------------------------ tables

inline const std::vector<std::string>& model_families() {
  static const std::vector<std::string> kFamilies = {"Static Embeddings", "Flair Embeddings",
                                                     "BERT Language Models", "Baselines"};
  return kFamilies;
}

inline std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// Markdown table: one column per task (first appearance order), rows grouped
// by family, each cell the mean of the aggregate's headline metric. The best
// value of every column carries a trailing '*'.
inline std::string render_results_table(const std::vector<AggregateReport>& aggregates) {
  if (aggregates.empty()) throw ConfigError("render_results_table: nothing to render");
  std::vector<std::string> tasks;
  for (const auto& a : aggregates) {
    if (a.mean.empty()) throw ConfigError("aggregate without metrics");
    if (std::find(tasks.begin(), tasks.end(), a.task) == tasks.end()) tasks.push_back(a.task);
    const auto& fam = model_families();
    if (std::find(fam.begin(), fam.end(), a.family) == fam.end()) {
      throw ConfigError("unknown model family '" + a.family + "'");
    }
  }
  std::map<std::string, double> best;
  for (const auto& a : aggregates) {
    const double v = a.mean.front().second;
    auto it = best.find(a.task);
    if (it == best.end() || v > it->second) best[a.task] = v;
  }
  std::ostringstream out;
  out << "| Model |";
  for (const auto& t : tasks) out << ' ' << t << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < tasks.size(); ++i) out << "---:|";
  out << '\n';
  for (const auto& family : model_families()) {
    std::vector<std::string> models;
    for (const auto& a : aggregates) {
      if (a.family == family && std::find(models.begin(), models.end(), a.model) == models.end()) {
        models.push_back(a.model);
      }
    }
    if (models.empty()) continue;
    out << "| *" << family << "* |";
    for (std::size_t i = 0; i < tasks.size(); ++i) out << " |";
    out << '\n';
    for (const auto& m : models) {
      out << "| " << m << " |";
      for (const auto& t : tasks) {
        const AggregateReport* cell = nullptr;
        for (const auto& a : aggregates) {
          if (a.family == family && a.model == m && a.task == t) cell = &a;
        }
        if (!cell) {
          out << " — |";
          continue;
        }
        const double v = cell->mean.front().second;
        out << ' ' << format_score(v) << (v == best[t] ? "*" : "") << " |";
      }
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace lmkit::eval
