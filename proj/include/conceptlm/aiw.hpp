#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptlm/concept_graph.hpp"
#include "conceptlm/gateway.hpp"
#include "conceptlm/matcher.hpp"
#include "conceptlm/metrics.hpp"
#include "conceptlm/probe.hpp"
#include "conceptlm/strategies.hpp"

// "X sisters and Y brothers" family puzzle, bundled as a small end-to-end
// example of every prompting strategy.
namespace conceptlm::aiw {

enum class Variant { brother, sister };

/// Sisters of a sibling of a girl who has `sisters` sisters and `brothers`
/// brothers. nullopt when that sibling does not exist.
inline std::optional<int> answer(int sisters, int brothers, Variant variant) {
  if (sisters < 0 || brothers < 0) throw PreconditionError("sibling counts must be non-negative");
  if (variant == Variant::brother) {
    if (brothers == 0) return std::nullopt;
    return sisters + 1;
  }
  if (sisters == 0) return std::nullopt;
  return sisters;
}

inline std::string question(const std::string& name, int sisters, int brothers, Variant variant) {
  return name + " has " + std::to_string(sisters) + " sisters and " + std::to_string(brothers) +
         " brothers. How many sisters does " + name + "'s " + (variant == Variant::brother ? "brother" : "sister") +
         " have?";
}

inline constexpr int kDemoSisters = 4;
inline constexpr int kDemoBrothers = 11;

inline const nlohmann::json& graph_json() {
  static const nlohmann::json kGraph = nlohmann::json::parse(R"({
  "name": "sibling puzzle",
  "nodes": [
    {
      "id": "counting",
      "title": "Adding whole numbers",
      "body": "Adding whole numbers gives the size of several groups taken together.",
      "examples": ["3 + 7 + 1 = 11"],
      "probes": [{"question": "What is 3 + 7 + 1?", "match": {"kind": "number", "value": 11}}]
    },
    {
      "id": "sibling_total",
      "title": "Total number of children in a family",
      "body": "If a child has X sisters and Y brothers, the family has X + Y + 1 children, because the child is counted as well.",
      "examples": ["Bob has 2 sisters and 3 brothers, so the family has 2 + 3 + 1 = 6 children."]
    },
    {
      "id": "gender_role",
      "title": "Counting the sisters of a sibling",
      "body": "Every girl in a family is a sister of each of her siblings. When a girl has X sisters, each of her brothers has X + 1 sisters: her X sisters and the girl herself. Each of her sisters has X sisters: the other X - 1 sisters and the girl herself.",
      "examples": ["Mary has 2 sisters and 1 brother. Mary's brother has 2 + 1 = 3 sisters. Mary's sister has 2 sisters."]
    }
  ],
  "edges": [
    {"from": "counting", "to": "sibling_total", "label": "sums the groups"},
    {"from": "sibling_total", "to": "gender_role"}
  ]
})");
  return kGraph;
}

inline ConceptGraph graph() { return load_graph(graph_json().dump()); }

inline ConceptualProblem problem(Variant variant = Variant::brother) {
  auto expected = answer(kDemoSisters, kDemoBrothers, variant);
  return ConceptualProblem::make(question("Rabbit", kDemoSisters, kDemoBrothers, variant), "family",
                                 AnswerMatcher::number(*expected));
}

inline ExemplarPair icl_exemplar() { return ExemplarPair::make(question("Alice", 3, 7, Variant::brother), "4"); }

inline std::vector<ExemplarPair> cot_exemplars() {
  return {ExemplarPair::make(question("Alice", 3, 7, Variant::brother),
                             "Alice has 3 sisters. Alice's brother has the same sisters as Alice. "
                             "So Alice's brother has 3 + 1 = 4 sisters. The answer is 4.")};
}

/// Scripted replies: the example-based strategies repeat the exemplar's
/// reasoning and answer 4; the concept-based ones count Rabbit and answer 5.
inline const nlohmann::json& mock_script() {
  static const nlohmann::json kScript = nlohmann::json::parse(R"({
  "name": "sibling-puzzle",
  "rules": [
    {"scm": "probe", "contains": "3 + 7 + 1", "response": "3 + 7 + 1 = 11"},
    {"scm": "simple", "response": "Rabbit has 4 sisters, so Rabbit's brother has 4 sisters."},
    {"scm": "icl", "response": "4"},
    {"scm": "cot", "response": "Rabbit has 4 sisters. Rabbit's brother has the same sisters as Rabbit. So the answer is 4."},
    {"scm": "cicl", "response": "The family has 4 + 11 + 1 = 16 children. Rabbit is a girl, so Rabbit's brother has Rabbit's 4 sisters and Rabbit herself as sisters: 4 + 1 = 5."},
    {"scm": "coc", "response": "Understood."},
    {"scm": "coc", "turn": "last", "response": "Rabbit's brother has Rabbit's 4 sisters plus Rabbit herself as sisters, so 4 + 1 = 5."}
  ]
})");
  return kScript;
}

struct Materials {
  ConceptGraph graph;
  PlanMaterials plan;
  ProbeOutcome probe;
};

/// Probes the model for base knowledge, then gathers everything the five
/// plans need.
inline Materials materials(Backend& backend, const ModelSpec& spec, const ProbeSettings& settings = {}) {
  Materials m{graph(), {}, {}};
  m.probe = probe_known_set(m.graph, backend, spec, settings);
  m.plan.known = m.probe.known;
  m.plan.icl_exemplar = icl_exemplar();
  m.plan.cot_pairs = cot_exemplars();
  return m;
}

struct DemoRow {
  Scm scm = Scm::simple;
  std::size_t turns = 0;
  std::string final_response;
  std::optional<int> k;  // nullopt when the chain failed
  std::optional<std::string> failure;
};

inline std::vector<DemoRow> run_demo(Backend& backend, const ModelSpec& spec, const RetryPolicy& retry = {}) {
  ProbeSettings probe_settings;
  probe_settings.retry = retry;
  auto m = materials(backend, spec, probe_settings);
  m.plan.graph = &m.graph;
  const auto cp = problem();
  std::vector<DemoRow> rows;
  for (auto scm : kAllScms) {
    auto plan = build_plan(scm, cp, m.plan);
    RunOptions options;
    options.tag.domain = cp.domain_tag;
    options.retry = retry;
    auto t = run_plan(plan, spec, backend, options);
    DemoRow row{scm, plan.turns.size(), t.final_response(), std::nullopt, t.failure};
    if (t.complete) row.k = correctness_indicator(t.final_response(), *cp.expected);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace conceptlm::aiw
