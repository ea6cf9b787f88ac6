#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptlm/error.hpp"
#include "conceptlm/pdm/extract.hpp"
#include "conceptlm/pdm/parroting.hpp"
#include "conceptlm/pdm/schema.hpp"

namespace conceptlm::pdm {

inline constexpr std::array<const char*, 8> kKpiNames = {
    "names", "base", "identifiers", "constraints", "composition", "units", "datatypes", "relationships"};

/// Human quasi-semantic scores, one per KPI, each in [0, 1].
struct KpiScores {
  std::array<double, 8> scores{};
  std::string annotator;
  std::string timestamp;

  double mean() const {
    double s = 0.0;
    for (double v : scores) s += v;
    return s / static_cast<double>(scores.size());
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"annotator", annotator}, {"timestamp", timestamp}};
    for (std::size_t i = 0; i < kKpiNames.size(); ++i) j[kKpiNames[i]] = scores[i];
    return j;
  }

  static KpiScores from_json(const nlohmann::json& j) {
    KpiScores k;
    k.annotator = j.value("annotator", "");
    k.timestamp = j.value("timestamp", "");
    for (std::size_t i = 0; i < kKpiNames.size(); ++i) k.scores[i] = j.at(kKpiNames[i]).get<double>();
    return k;
  }
};

struct SampleProvenance {
  std::string model;
  std::string scm;
  std::string domain;
  std::size_t sample = 0;

  /// `model/scm/domain/index`, the key used by annotation files.
  std::string sample_id() const { return model + "/" + scm + "/" + domain + "/" + std::to_string(sample); }

  friend bool operator==(const SampleProvenance&, const SampleProvenance&) = default;
  friend auto operator<=>(const SampleProvenance&, const SampleProvenance&) = default;

  nlohmann::json to_json() const { return {{"model", model}, {"scm", scm}, {"domain", domain}, {"sample", sample}}; }
  static SampleProvenance from_json(const nlohmann::json& j) {
    return {j.at("model").get<std::string>(), j.at("scm").get<std::string>(), j.at("domain").get<std::string>(),
            j.at("sample").get<std::size_t>()};
  }
};

enum class C4State { not_applicable, pending, scored };

/// Per-sample correctness aspects. Evaluation cascades: when no JSON could be
/// extracted (C1 = 0) the other aspects are not applicable.
struct EvaluationRecord {
  SampleProvenance provenance;
  int theta_c1 = 0;
  std::optional<int> theta_c2;
  std::optional<int> theta_c3;  // non-parroting pass
  C4State c4_state = C4State::not_applicable;
  double theta_c4 = 0.0;
  std::optional<KpiScores> kpis;
  std::optional<double> parroting_similarity;
  std::string parroting_exemplar;
  std::vector<Violation> violations;

  std::optional<double> c4() const {
    return c4_state == C4State::scored ? std::optional<double>(theta_c4) : std::nullopt;
  }
};

struct EvaluationSettings {
  const PdmSchema* schema = nullptr;
  std::vector<ExemplarDocument> exemplars;  // empty: parroting not applicable
  std::vector<std::string> query_domain_terms;
  double parroting_threshold = kDefaultParrotingThreshold;
};

inline EvaluationRecord evaluate_response(const std::string& response, const SampleProvenance& provenance,
                                          const EvaluationSettings& settings) {
  if (!settings.schema) throw PreconditionError("evaluation needs a schema");
  EvaluationRecord rec;
  rec.provenance = provenance;
  auto doc = extract_json(response);
  if (!doc) return rec;
  rec.theta_c1 = 1;
  auto syntax = check_syntax(doc->value, *settings.schema);
  rec.theta_c2 = syntax.score;
  rec.violations = std::move(syntax.violations);
  auto parrot = check_parroting(doc->value, settings.exemplars, settings.query_domain_terms, settings.parroting_threshold);
  if (parrot.applicable) {
    rec.theta_c3 = parrot.pass();
    rec.parroting_similarity = parrot.similarity;
    rec.parroting_exemplar = parrot.exemplar;
  }
  rec.c4_state = C4State::pending;
  return rec;
}

inline nlohmann::json to_json(const EvaluationRecord& r) {
  auto opt = [](const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json violations = nlohmann::json::array();
  for (const auto& v : r.violations) violations.push_back(v.to_json());
  nlohmann::json j = {{"sample_id", r.provenance.sample_id()},
                      {"provenance", r.provenance.to_json()},
                      {"theta_c1", r.theta_c1},
                      {"theta_c2", opt(r.theta_c2)},
                      {"theta_c3", opt(r.theta_c3)},
                      {"parroting_similarity", opt(r.parroting_similarity)},
                      {"parroting_exemplar", r.parroting_exemplar},
                      {"violations", std::move(violations)}};
  switch (r.c4_state) {
    case C4State::not_applicable: j["theta_c4"] = nullptr; break;
    case C4State::pending: j["theta_c4"] = "pending"; break;
    case C4State::scored: j["theta_c4"] = r.theta_c4; break;
  }
  j["kpis"] = r.kpis ? r.kpis->to_json() : nlohmann::json(nullptr);
  return j;
}

inline EvaluationRecord evaluation_from_json(const nlohmann::json& j) {
  EvaluationRecord r;
  r.provenance = SampleProvenance::from_json(j.at("provenance"));
  r.theta_c1 = j.at("theta_c1").get<int>();
  if (!j.at("theta_c2").is_null()) r.theta_c2 = j["theta_c2"].get<int>();
  if (!j.at("theta_c3").is_null()) r.theta_c3 = j["theta_c3"].get<int>();
  if (!j.at("parroting_similarity").is_null()) r.parroting_similarity = j["parroting_similarity"].get<double>();
  r.parroting_exemplar = j.value("parroting_exemplar", "");
  for (const auto& v : j.at("violations")) {
    r.violations.push_back({v.at("rule").get<std::string>(), v.at("path").get<std::string>(),
                            v.at("message").get<std::string>()});
  }
  const auto& c4 = j.at("theta_c4");
  if (c4.is_null()) {
    r.c4_state = C4State::not_applicable;
  } else if (c4.is_string()) {
    r.c4_state = C4State::pending;
  } else {
    r.c4_state = C4State::scored;
    r.theta_c4 = c4.get<double>();
  }
  if (j.contains("kpis") && !j["kpis"].is_null()) r.kpis = KpiScores::from_json(j["kpis"]);
  return r;
}

}  // namespace conceptlm::pdm
