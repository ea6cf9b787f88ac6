#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "conceptlm/experiment/journal.hpp"
#include "conceptlm/pdm/annotations.hpp"
#include "conceptlm/pdm/evaluation.hpp"
#include "conceptlm/strategies.hpp"
#include "conceptlm/text.hpp"

namespace conceptlm::experiment {

struct MetricInfo {
  const char* key;
  const char* label;
};

/// The seven plotted metrics, in panel order.
inline constexpr std::array<MetricInfo, 7> kPanelMetrics = {{
    {"theta_c1", "theta_C1 valid JSON"},
    {"theta_c2", "theta_C2 schema syntax"},
    {"theta_c3", "theta_C3 non-parroting"},
    {"theta_c4", "theta_C4 quasi-semantic"},
    {"theta_time", "theta_time seconds"},
    {"theta_cost", "theta_cost tokens"},
    {"theta_p", "theta_P confidence"},
}};

/// Per-sample product theta_C4 * theta_C3, defined when both are.
inline constexpr const char* kCombinedMetric = "theta_c4_c3";
inline constexpr const char* kCorrectnessMetric = "k";

struct Stat {
  std::size_t n = 0;
  std::size_t excluded = 0;  // completed records where the metric is not applicable
  double mean = 0.0;
  double variance = 0.0;  // sample variance, n - 1 denominator; 0 when n < 2
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline Stat summarize(const std::vector<double>& values, std::size_t excluded = 0) {
  Stat s;
  s.n = values.size();
  s.excluded = excluded;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.variance = sq / static_cast<double>(s.n - 1);
  }
  s.stddev = std::sqrt(s.variance);
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  s.min = *lo;
  s.max = *hi;
  // Rounding can push the mean of equal values one ulp outside [min, max].
  s.mean = std::clamp(s.mean, s.min, s.max);
  return s;
}

struct CellAggregate {
  std::string model;
  std::string scm;
  std::size_t records = 0;
  std::size_t failed = 0;
  std::map<std::string, Stat> metrics;
};

struct Aggregates {
  std::vector<std::string> models;  // first-appearance order
  std::vector<std::string> scms;    // canonical SCM order
  std::map<std::pair<std::string, std::string>, CellAggregate> cells;

  const CellAggregate* cell(const std::string& model, const std::string& scm) const {
    auto it = cells.find({model, scm});
    return it == cells.end() ? nullptr : &it->second;
  }
};

using EvaluationOverrides = std::map<std::string, pdm::EvaluationRecord>;

/// Metric value of one completed record; nullopt when not applicable.
inline std::optional<double> metric_value(const std::string& key, const RunRecord& r, const pdm::EvaluationRecord& e) {
  auto opt = [](const auto& v) -> std::optional<double> {
    return v ? std::optional<double>(static_cast<double>(*v)) : std::nullopt;
  };
  if (key == "theta_c1") return static_cast<double>(e.theta_c1);
  if (key == "theta_c2") return opt(e.theta_c2);
  if (key == "theta_c3") return opt(e.theta_c3);
  if (key == "theta_c4") return e.c4();
  if (key == "theta_time") return r.metrics.theta_time;
  if (key == "theta_cost") return static_cast<double>(r.metrics.theta_cost);
  if (key == "theta_p") return r.metrics.theta_p;
  if (key == kCombinedMetric) {
    auto c4 = e.c4();
    if (!c4 || !e.theta_c3) return std::nullopt;
    return *c4 * static_cast<double>(*e.theta_c3);
  }
  if (key == kCorrectnessMetric) return opt(r.metrics.k);
  throw PreconditionError("unknown metric '" + key + "'");
}

inline std::vector<std::string> aggregated_metric_keys() {
  std::vector<std::string> keys;
  for (const auto& m : kPanelMetrics) keys.emplace_back(m.key);
  keys.emplace_back(kCombinedMetric);
  keys.emplace_back(kCorrectnessMetric);
  return keys;
}

/// Per (model, SCM) statistics. Failed records only count in `failed`; when a
/// provenance appears twice the first record wins. `overrides` replaces the
/// journal's evaluation of a sample (re-evaluation, annotations).
inline Aggregates aggregate(const std::vector<RunRecord>& records, const EvaluationOverrides* overrides = nullptr) {
  if (records.empty()) throw PreconditionError("aggregate needs a non-empty journal");
  Aggregates agg;
  std::set<pdm::SampleProvenance> seen;
  std::set<std::string> scm_set;
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::vector<double>>> values;
  const auto keys = aggregated_metric_keys();

  for (const auto& r : records) {
    if (!seen.insert(r.provenance).second) continue;
    const auto& p = r.provenance;
    if (std::find(agg.models.begin(), agg.models.end(), p.model) == agg.models.end()) agg.models.push_back(p.model);
    scm_set.insert(p.scm);
    auto& cell = agg.cells[{p.model, p.scm}];
    cell.model = p.model;
    cell.scm = p.scm;
    ++cell.records;
    auto& cell_values = values[{p.model, p.scm}];
    if (r.status == RecordStatus::failed) {
      ++cell.failed;
      continue;
    }
    const pdm::EvaluationRecord* eval = &r.evaluation;
    if (overrides) {
      if (auto it = overrides->find(p.sample_id()); it != overrides->end()) eval = &it->second;
    }
    for (const auto& key : keys) {
      auto v = metric_value(key, r, *eval);
      if (v) {
        cell_values[key].push_back(*v);
      } else {
        cell.metrics[key].excluded += 1;
      }
    }
  }

  for (auto& [id, cell] : agg.cells) {
    for (const auto& key : keys) {
      const auto excluded = cell.metrics[key].excluded;
      cell.metrics[key] = summarize(values[id][key], excluded);
    }
  }
  for (auto scm : kAllScms) {
    if (scm_set.erase(to_string(scm))) agg.scms.push_back(to_string(scm));
  }
  for (const auto& other : scm_set) agg.scms.push_back(other);
  return agg;
}

/// a / b - 1, e.g. 0.306 for a 30.6% improvement.
inline double relative_margin(double a, double b) {
  if (b == 0.0) throw PreconditionError("relative margin against a zero baseline");
  return a / b - 1.0;
}

inline const char* kEvaluationFile = "evaluation.jsonl";
inline const char* kAnnotationFile = "annotations.csv";

/// Current evaluation of every completed record of a run: the journal's, then
/// any re-evaluation file, then the annotation file's KPI scores.
inline EvaluationOverrides current_evaluations(const std::vector<RunRecord>& records,
                                               const std::filesystem::path& run_dir,
                                               std::vector<pdm::AuditEntry>* audit = nullptr) {
  pdm::AnnotationStore store;
  for (const auto& r : records) {
    if (r.status == RecordStatus::completed) store.records.emplace(r.provenance.sample_id(), r.evaluation);
  }
  const auto eval_path = run_dir / kEvaluationFile;
  if (std::filesystem::exists(eval_path)) {
    const auto content = text::read_file(eval_path.string());
    std::size_t pos = 0;
    while (pos < content.size()) {
      auto nl = content.find('\n', pos);
      if (nl == std::string::npos) nl = content.size();
      auto line = std::string_view(content).substr(pos, nl - pos);
      pos = nl + 1;
      if (text::trim(line).empty()) continue;
      auto j = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
      if (j.is_discarded()) throw SchemaError(eval_path.string() + ": not valid JSON lines");
      auto e = pdm::evaluation_from_json(j);
      auto id = e.provenance.sample_id();
      if (store.records.count(id)) store.records[id] = std::move(e);
    }
  }
  const auto ann_path = run_dir / kAnnotationFile;
  if (std::filesystem::exists(ann_path)) {
    pdm::ingest_annotations(pdm::parse_annotations(text::read_file(ann_path.string())), store);
  }
  if (audit) *audit = store.audit;
  return store.records;
}

}  // namespace conceptlm::experiment
