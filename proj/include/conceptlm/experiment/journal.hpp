#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptlm/error.hpp"
#include "conceptlm/metrics.hpp"
#include "conceptlm/pdm/evaluation.hpp"
#include "conceptlm/text.hpp"

namespace conceptlm::experiment {

enum class RecordStatus { completed, failed };

inline std::string to_string(RecordStatus s) { return s == RecordStatus::completed ? "completed" : "failed"; }

struct RunRecord {
  pdm::SampleProvenance provenance;
  RecordStatus status = RecordStatus::completed;
  std::string transcript_file;  // relative to the run directory
  MetricBundle metrics;
  pdm::EvaluationRecord evaluation;
  std::optional<std::string> error;
  std::string config_digest;
  std::string template_version;
  std::string recorded_at;  // wall clock; the only non-reproducible field
};

inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json j = {{"sample_id", r.provenance.sample_id()},
                      {"provenance", r.provenance.to_json()},
                      {"status", to_string(r.status)},
                      {"transcript", r.transcript_file},
                      {"metrics", to_json(r.metrics)},
                      {"evaluation", pdm::to_json(r.evaluation)},
                      {"config_digest", r.config_digest},
                      {"template_version", r.template_version},
                      {"timing", {{"recorded_at", r.recorded_at}}}};
  j["error"] = r.error ? nlohmann::json(*r.error) : nlohmann::json(nullptr);
  return j;
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.provenance = pdm::SampleProvenance::from_json(j.at("provenance"));
  const auto status = j.at("status").get<std::string>();
  if (status != "completed" && status != "failed") throw SchemaError("unknown record status '" + status + "'");
  r.status = status == "completed" ? RecordStatus::completed : RecordStatus::failed;
  r.transcript_file = j.at("transcript").get<std::string>();
  r.metrics = metric_bundle_from_json(j.at("metrics"));
  r.evaluation = pdm::evaluation_from_json(j.at("evaluation"));
  if (!j.at("error").is_null()) r.error = j["error"].get<std::string>();
  r.config_digest = j.at("config_digest").get<std::string>();
  r.template_version = j.at("template_version").get<std::string>();
  if (j.contains("timing")) r.recorded_at = j["timing"].value("recorded_at", "");
  return r;
}

/// Reads a JSON-lines journal. A final line without its newline is the trace
/// of an interrupted write; with `repair` the file is truncated before it.
inline std::vector<RunRecord> read_journal(const std::filesystem::path& path, bool repair = false) {
  std::vector<RunRecord> out;
  if (!std::filesystem::exists(path)) return out;
  const auto content = text::read_file(path.string());
  std::size_t pos = 0, line_no = 0;
  while (pos < content.size()) {
    ++line_no;
    const auto nl = content.find('\n', pos);
    if (nl == std::string::npos) {
      if (repair) std::filesystem::resize_file(path, pos);
      break;
    }
    const auto line = std::string_view(content).substr(pos, nl - pos);
    pos = nl + 1;
    if (text::trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
    if (j.is_discarded()) throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": not valid JSON");
    try {
      out.push_back(run_record_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

/// Append-only writer. Each record goes out in a single write on an O_APPEND
/// descriptor.
class JournalWriter {
 public:
  explicit JournalWriter(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot open journal " + path.string() + ": " + std::strerror(errno));
  }
  ~JournalWriter() {
    if (fd_ >= 0) ::close(fd_);
  }
  JournalWriter(const JournalWriter&) = delete;
  JournalWriter& operator=(const JournalWriter&) = delete;

  void append(const RunRecord& record) { append_line(to_json(record).dump()); }

  void append_line(std::string line) {
    line.push_back('\n');
    std::size_t done = 0;
    while (done < line.size()) {
      auto n = ::write(fd_, line.data() + done, line.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(std::string("journal write failed: ") + std::strerror(errno));
      }
      done += static_cast<std::size_t>(n);
    }
    ::fsync(fd_);
  }

 private:
  int fd_ = -1;
};

}  // namespace conceptlm::experiment
