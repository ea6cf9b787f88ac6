#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "conceptlm/csv.hpp"
#include "conceptlm/error.hpp"
#include "conceptlm/pdm/evaluation.hpp"
#include "conceptlm/text.hpp"

namespace conceptlm::pdm {

inline const std::vector<std::string>& annotation_header() {
  static const std::vector<std::string> kHeader = {
      "sample_id", "names", "base", "identifiers", "constraints", "composition",
      "units", "datatypes", "relationships", "annotator", "timestamp"};
  return kHeader;
}

struct AnnotationRow {
  std::string sample_id;
  KpiScores kpis;
};

/// Parses an annotation CSV. Columns are located by header name, so their
/// order is free; every KPI column must be present and every score in [0, 1].
inline std::vector<AnnotationRow> parse_annotations(std::string_view text) {
  std::vector<csv::Row> rows;
  try {
    rows = csv::parse(text);
  } catch (const Error& e) {
    throw AnnotationError(std::string("annotation file: ") + e.what());
  }
  if (rows.empty()) return {};
  const auto& header = rows.front();
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[std::string(text::trim(header[i]))] = i;
  for (const auto& name : annotation_header()) {
    if (!col.count(name)) throw AnnotationError("annotation file is missing column '" + name + "'");
  }

  std::vector<AnnotationRow> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && text::trim(row[0]).empty()) continue;
    const std::string where = "annotation row " + std::to_string(r + 1);
    auto cell = [&](const std::string& name) -> std::string {
      auto i = col.at(name);
      if (i >= row.size()) throw AnnotationError(where + " is missing '" + name + "'");
      return std::string(text::trim(row[i]));
    };
    AnnotationRow a;
    a.sample_id = cell("sample_id");
    if (a.sample_id.empty()) throw AnnotationError(where + " has an empty sample_id");
    for (std::size_t k = 0; k < kKpiNames.size(); ++k) {
      const auto raw = cell(kKpiNames[k]);
      if (raw.empty()) throw AnnotationError(where + " is missing KPI '" + std::string(kKpiNames[k]) + "'");
      double v = 0.0;
      std::size_t used = 0;
      try {
        v = std::stod(raw, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != raw.size()) {
        throw AnnotationError(where + ": KPI '" + std::string(kKpiNames[k]) + "' is not a number: " + raw);
      }
      if (!(v >= 0.0 && v <= 1.0)) {
        throw AnnotationError(where + ": KPI '" + std::string(kKpiNames[k]) + "' = " + raw + " is outside [0, 1]");
      }
      a.kpis.scores[k] = v;
    }
    a.kpis.annotator = cell("annotator");
    a.kpis.timestamp = cell("timestamp");
    out.push_back(std::move(a));
  }
  return out;
}

inline std::string format_annotation_row(const AnnotationRow& a) {
  csv::Row row{a.sample_id};
  for (double v : a.kpis.scores) {
    std::ostringstream s;
    s << v;
    row.push_back(s.str());
  }
  row.push_back(a.kpis.annotator);
  row.push_back(a.kpis.timestamp);
  return csv::format_row(row);
}

struct AuditEntry {
  std::string sample_id;
  std::optional<KpiScores> previous;
  KpiScores current;
};

/// Evaluation records by sample id, plus the history of every re-annotation.
struct AnnotationStore {
  std::map<std::string, EvaluationRecord> records;
  std::vector<AuditEntry> audit;
};

/// Applies rows in order; theta_C4 becomes the mean of the eight KPIs. All
/// rows are validated before any record changes.
inline std::size_t ingest_annotations(const std::vector<AnnotationRow>& rows, AnnotationStore& store) {
  for (const auto& row : rows) {
    auto it = store.records.find(row.sample_id);
    if (it == store.records.end()) throw AnnotationError("annotation for unknown sample '" + row.sample_id + "'");
    if (it->second.theta_c1 != 1) {
      throw AnnotationError("sample '" + row.sample_id + "' has no extracted JSON and cannot be annotated");
    }
  }
  for (const auto& row : rows) {
    auto& rec = store.records.at(row.sample_id);
    if (rec.kpis) store.audit.push_back({row.sample_id, rec.kpis, row.kpis});
    rec.kpis = row.kpis;
    rec.theta_c4 = row.kpis.mean();
    rec.c4_state = C4State::scored;
  }
  return rows.size();
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct PendingSample {
  std::string sample_id;
  std::string document;  // extracted JSON, pretty-printed
};

/// Interactive KPI scoring. Samples already present in `path` are skipped and
/// each finished sample is appended and flushed immediately, so an interrupted
/// session leaves a valid file that a later session resumes.
inline std::size_t annotate_session(const std::vector<PendingSample>& pending, const std::filesystem::path& path,
                                    const std::string& annotator, std::istream& in, std::ostream& out,
                                    const std::function<std::string()>& clock = utc_timestamp) {
  std::set<std::string> done;
  const bool exists = std::filesystem::exists(path) && std::filesystem::file_size(path) > 0;
  if (exists) {
    for (const auto& row : parse_annotations(text::read_file(path.string()))) done.insert(row.sample_id);
  }
  std::ofstream file(path, std::ios::binary | std::ios::app);
  if (!file) throw AnnotationError("cannot open " + path.string());
  if (!exists) {
    file << csv::format_row(annotation_header());
    file.flush();
  }

  std::size_t written = 0;
  std::size_t remaining = 0;
  for (const auto& p : pending) remaining += done.count(p.sample_id) ? 0 : 1;
  for (const auto& p : pending) {
    if (done.count(p.sample_id)) continue;
    out << "\n=== " << p.sample_id << " (" << remaining-- << " left) ===\n" << p.document << "\n";
    AnnotationRow row{p.sample_id, {}};
    for (std::size_t k = 0; k < kKpiNames.size(); ++k) {
      for (;;) {
        out << kKpiNames[k] << " [0-1]: " << std::flush;
        std::string line;
        if (!std::getline(in, line)) {
          out << "\ninput closed; " << written << " sample(s) saved\n";
          return written;
        }
        const auto raw = std::string(text::trim(line));
        double v = -1.0;
        std::size_t used = 0;
        try {
          v = std::stod(raw, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (!raw.empty() && used == raw.size() && v >= 0.0 && v <= 1.0) {
          row.kpis.scores[k] = v;
          break;
        }
        out << "scores must be numbers between 0 and 1\n";
      }
    }
    row.kpis.annotator = annotator;
    row.kpis.timestamp = clock();
    file << format_annotation_row(row);
    file.flush();
    ++written;
  }
  return written;
}

}  // namespace conceptlm::pdm
