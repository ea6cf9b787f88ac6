#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptlm/concept_graph.hpp"
#include "conceptlm/error.hpp"
#include "conceptlm/matcher.hpp"
#include "conceptlm/templates.hpp"
#include "conceptlm/text.hpp"

namespace conceptlm {

/// Shallow customization methods.
enum class Scm { simple, icl, cot, cicl, coc };

inline constexpr Scm kAllScms[] = {Scm::simple, Scm::icl, Scm::cot, Scm::cicl, Scm::coc};

inline std::string to_string(Scm scm) {
  switch (scm) {
    case Scm::simple: return "simple";
    case Scm::icl: return "icl";
    case Scm::cot: return "cot";
    case Scm::cicl: return "cicl";
    case Scm::coc: return "coc";
  }
  return "?";
}

inline Scm parse_scm(std::string_view s) {
  for (auto scm : kAllScms) {
    if (to_string(scm) == s) return scm;
  }
  throw PreconditionError("unknown SCM '" + std::string(s) + "' (expected simple, icl, cot, cicl or coc)");
}

struct ConceptualProblem {
  std::string query;
  std::string domain_tag;
  std::optional<AnswerMatcher> expected;

  static ConceptualProblem make(std::string query, std::string domain_tag = {},
                                std::optional<AnswerMatcher> expected = std::nullopt) {
    if (text::trim(query).empty()) throw PreconditionError("conceptual problem query is empty");
    return {std::move(query), std::move(domain_tag), std::move(expected)};
  }

  /// Fills a query template such as "Can you generate a {pdm_name} for {domain}?".
  /// `domain` is always available as a variable. Leftover placeholders are an error.
  static ConceptualProblem from_template(std::string_view tmpl, std::map<std::string, std::string> vars,
                                         std::string domain_tag) {
    vars.emplace("domain", domain_tag);
    for (const auto& [k, v] : vars) {
      if (text::trim(v).empty()) throw PreconditionError("query template variable '" + k + "' is empty");
    }
    auto query = text::fill(tmpl, vars);
    auto open = query.find('{');
    if (open != std::string::npos && query.find('}', open) != std::string::npos) {
      throw PreconditionError("query template has an unfilled placeholder: " + query);
    }
    return make(std::move(query), std::move(domain_tag));
  }
};

struct ExemplarPair {
  std::string query;
  std::string response;

  static ExemplarPair make(std::string query, std::string response) {
    if (text::trim(query).empty() || text::trim(response).empty()) {
      throw PreconditionError("exemplar query and response must be non-empty");
    }
    return {std::move(query), std::move(response)};
  }
};

enum class TurnKind { concept_intro, exemplar_block, conceptual_problem };

inline std::string to_string(TurnKind kind) {
  switch (kind) {
    case TurnKind::concept_intro: return "concept_intro";
    case TurnKind::exemplar_block: return "exemplar_block";
    case TurnKind::conceptual_problem: return "conceptual_problem";
  }
  return "?";
}

struct PlannedTurn {
  std::string content;
  TurnKind kind = TurnKind::conceptual_problem;
  std::optional<std::string> concept_id;
  bool expects_response = true;
};

struct PromptPlan {
  Scm scm = Scm::simple;
  std::vector<PlannedTurn> turns;
  std::size_t final_query_index = 0;
  std::size_t exemplar_count = 0;  // N worked pairs for CoT
  std::string template_version;
  std::vector<std::string> warnings;
};

/// Separator between rendered concepts and the problem in single-prompt plans.
inline constexpr std::string_view kBlockSeparator = "\n\n";

namespace detail {

inline PromptPlan single_turn(Scm scm, std::string content, const TemplateSet& templates) {
  PromptPlan plan;
  plan.scm = scm;
  plan.turns.push_back({std::move(content), TurnKind::conceptual_problem, std::nullopt, true});
  plan.final_query_index = 0;
  plan.template_version = templates.version();
  return plan;
}

}  // namespace detail

using TitleLookup = std::function<std::string(std::string_view id)>;

/// Natural-language rendering of one concept: heading, body, what it builds
/// on, and its examples. Deterministic for equal inputs.
inline std::string render_concept(const Concept& node, const std::vector<ConceptEdge>& incident,
                                  const TitleLookup& title_of, const TemplateSet& templates = {}) {
  if (text::trim(node.body).empty()) throw PreconditionError("concept '" + node.id + "' has an empty body");
  std::string out = text::fill(templates.get("concept_heading"), {{"title", node.title}});
  out += "\n";
  out += node.body;
  if (!incident.empty()) {
    std::vector<std::string> sources;
    for (const auto& e : incident) {
      auto item = title_of(e.from);
      if (e.label) item += " (" + *e.label + ")";
      sources.push_back(std::move(item));
    }
    out += "\n";
    out += text::fill(templates.get("concept_builds_on"), {{"sources", text::join(sources, "; ")}});
  }
  for (std::size_t i = 0; i < node.examples.size(); ++i) {
    out += "\n";
    out += text::fill(templates.get("concept_example"),
                      {{"index", std::to_string(i + 1)}, {"example", node.examples[i]}});
  }
  return out;
}

inline PromptPlan build_simple(const ConceptualProblem& cp, const TemplateSet& templates = {}) {
  return detail::single_turn(Scm::simple, cp.query, templates);
}

inline PromptPlan build_icl(const ConceptualProblem& cp, const ExemplarPair& exemplar,
                            const TemplateSet& templates = {}) {
  if (exemplar.query.empty() || exemplar.response.empty()) throw PreconditionError("ICL exemplar is empty");
  auto block = text::fill(templates.get("icl_exemplar"), {{"query", exemplar.query}, {"response", exemplar.response}});
  auto plan = detail::single_turn(Scm::icl, block + std::string(kBlockSeparator) + cp.query, templates);
  plan.exemplar_count = 1;
  return plan;
}

/// Worked pairs in the given order, then the problem.
inline PromptPlan build_cot(const ConceptualProblem& cp, const std::vector<ExemplarPair>& pairs,
                            const TemplateSet& templates = {}, bool step_by_step = false) {
  if (pairs.empty()) throw PreconditionError("CoT needs at least one worked pair");
  std::string content;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    content += text::fill(templates.get("cot_pair"), {{"index", std::to_string(i + 1)},
                                                      {"query", pairs[i].query},
                                                      {"response", pairs[i].response}});
    content += kBlockSeparator;
  }
  content += cp.query;
  if (step_by_step) content += "\n" + templates.get("cot_step_suffix");
  auto plan = detail::single_turn(Scm::cot, std::move(content), templates);
  plan.exemplar_count = pairs.size();
  return plan;
}

namespace detail {

inline std::vector<std::string> rendered_chain(const MissingGraph& missing, const std::vector<ChainStep>& steps,
                                               const TemplateSet& templates) {
  TitleLookup lookup = [&missing](std::string_view id) { return missing.title_of(id); };
  std::vector<std::string> out;
  for (const auto& step : steps) {
    auto incident = step.reference_in;
    incident.insert(incident.end(), step.internal_in.begin(), step.internal_in.end());
    out.push_back(render_concept(step.node, incident, lookup, templates));
  }
  return out;
}

}  // namespace detail

/// All missing concepts in chain order, then the problem, as one zero-shot
/// prompt. An empty missing graph degrades to the simple plan.
inline PromptPlan build_cicl(const MissingGraph& missing, const ConceptualProblem& cp,
                             const TemplateSet& templates = {}) {
  if (missing.empty()) {
    auto plan = build_simple(cp, templates);
    plan.warnings.push_back("no missing concepts; C-ICL degraded to a simple prompt");
    return plan;
  }
  auto blocks = detail::rendered_chain(missing, chain_order(missing), templates);
  blocks.push_back(cp.query);
  return detail::single_turn(Scm::cicl, text::join(blocks, kBlockSeparator), templates);
}

/// One turn per missing concept in chain order, then the problem.
inline PromptPlan build_coc(const MissingGraph& missing, const ConceptualProblem& cp,
                            const TemplateSet& templates = {}) {
  if (missing.empty()) throw PreconditionError("CoC needs at least one missing concept");
  auto steps = chain_order(missing);
  auto blocks = detail::rendered_chain(missing, steps, templates);
  PromptPlan plan;
  plan.scm = Scm::coc;
  plan.template_version = templates.version();
  for (std::size_t i = 0; i < steps.size(); ++i) {
    plan.turns.push_back({std::move(blocks[i]), TurnKind::concept_intro, steps[i].node.id, true});
  }
  plan.turns.push_back({cp.query, TurnKind::conceptual_problem, std::nullopt, true});
  plan.final_query_index = plan.turns.size() - 1;
  return plan;
}

/// Everything needed to build any of the five plans for one problem.
struct PlanMaterials {
  const ConceptGraph* graph = nullptr;
  KnownSet known;
  std::optional<ExemplarPair> icl_exemplar;
  std::vector<ExemplarPair> cot_pairs;
  bool cot_step_by_step = false;
  TemplateSet templates;
};

inline PromptPlan build_plan(Scm scm, const ConceptualProblem& cp, const PlanMaterials& m) {
  switch (scm) {
    case Scm::simple:
      return build_simple(cp, m.templates);
    case Scm::icl:
      if (!m.icl_exemplar) throw PreconditionError("ICL plan needs an exemplar pair");
      return build_icl(cp, *m.icl_exemplar, m.templates);
    case Scm::cot:
      return build_cot(cp, m.cot_pairs, m.templates, m.cot_step_by_step);
    case Scm::cicl:
    case Scm::coc: {
      if (!m.graph) throw PreconditionError("conceptual plans need a concept graph");
      require_problem_ready(*m.graph);
      auto missing = subtract_known(*m.graph, m.known);
      return scm == Scm::cicl ? build_cicl(missing, cp, m.templates) : build_coc(missing, cp, m.templates);
    }
  }
  throw PreconditionError("unreachable SCM");
}

inline nlohmann::json to_json(const PromptPlan& plan) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& t : plan.turns) {
    nlohmann::json tj = {{"kind", to_string(t.kind)}, {"content", t.content}};
    if (t.concept_id) tj["concept_id"] = *t.concept_id;
    turns.push_back(std::move(tj));
  }
  return {{"scm", to_string(plan.scm)},
          {"turns", std::move(turns)},
          {"final_query_index", plan.final_query_index},
          {"exemplar_count", plan.exemplar_count},
          {"template_version", plan.template_version},
          {"warnings", plan.warnings}};
}

}  // namespace conceptlm
