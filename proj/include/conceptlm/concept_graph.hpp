#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptlm/error.hpp"
#include "conceptlm/matcher.hpp"
#include "conceptlm/text.hpp"

namespace conceptlm {

enum class ConceptRole { general_knowledge, intermediate, topic };

inline std::string_view to_string(ConceptRole role) {
  switch (role) {
    case ConceptRole::general_knowledge: return "general_knowledge";
    case ConceptRole::intermediate: return "intermediate";
    case ConceptRole::topic: return "topic";
  }
  return "?";
}

struct Probe {
  std::string question;
  AnswerMatcher match;
};

struct Concept {
  std::string id;
  std::string title;
  std::string body;
  std::vector<std::string> examples;
  std::vector<Probe> probes;
};

/// Edge from a sub-concept to the more abstract concept it supports.
struct ConceptEdge {
  std::string from;
  std::string to;
  std::optional<std::string> label;

  friend bool operator==(const ConceptEdge& a, const ConceptEdge& b) {
    return a.from == b.from && a.to == b.to && a.label == b.label;
  }
};

/// Conceptual information as a directed graph of concepts. Immutable once
/// built; construction checks ids and endpoints but not acyclicity, which is
/// reported by validate_acyclic() so authors see every cycle at once.
class ConceptGraph {
 public:
  ConceptGraph() = default;

  ConceptGraph(std::vector<Concept> nodes, std::vector<ConceptEdge> edges)
      : nodes_(std::move(nodes)), edges_(std::move(edges)) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& id = nodes_[i].id;
      if (id.empty()) throw GraphError("concept at index " + std::to_string(i) + " has an empty id");
      if (!index_.emplace(id, i).second) throw GraphError("duplicate concept id '" + id + "'");
    }
    in_.resize(nodes_.size());
    out_.resize(nodes_.size());
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      const auto& edge = edges_[e];
      auto from = index_.find(edge.from);
      auto to = index_.find(edge.to);
      if (from == index_.end()) throw GraphError("edge endpoint '" + edge.from + "' is not a declared concept");
      if (to == index_.end()) throw GraphError("edge endpoint '" + edge.to + "' is not a declared concept");
      if (edge.from == edge.to) throw GraphError("self-loop on concept '" + edge.from + "'");
      out_[from->second].push_back(e);
      in_[to->second].push_back(e);
    }
  }

  const std::vector<Concept>& nodes() const noexcept { return nodes_; }
  const std::vector<ConceptEdge>& edges() const noexcept { return edges_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }

  bool contains(std::string_view id) const { return index_.find(std::string(id)) != index_.end(); }

  const Concept& node(std::string_view id) const { return nodes_[index_of(id)]; }

  std::vector<ConceptEdge> in_edges(std::string_view id) const { return collect(in_[index_of(id)]); }
  std::vector<ConceptEdge> out_edges(std::string_view id) const { return collect(out_[index_of(id)]); }

  /// An isolated concept is both source and sink; it is reported as a topic.
  ConceptRole role(std::string_view id) const {
    auto i = index_of(id);
    if (out_[i].empty()) return ConceptRole::topic;
    if (in_[i].empty()) return ConceptRole::general_knowledge;
    return ConceptRole::intermediate;
  }

  /// Sorted ids of concepts with no outgoing edge.
  std::vector<std::string> sinks() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (out_[i].empty()) out.push_back(nodes_[i].id);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Sorted ids of concepts with no incoming edge.
  std::vector<std::string> sources() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (in_[i].empty()) out.push_back(nodes_[i].id);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::size_t index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) throw GraphError("unknown concept id '" + std::string(id) + "'");
    return it->second;
  }

  std::vector<ConceptEdge> collect(const std::vector<std::size_t>& idx) const {
    std::vector<ConceptEdge> out;
    out.reserve(idx.size());
    for (auto e : idx) out.push_back(edges_[e]);
    return out;
  }

  std::vector<Concept> nodes_;
  std::vector<ConceptEdge> edges_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> in_;
  std::vector<std::vector<std::size_t>> out_;
};

// ---------------------------------------------------------------------------
// Graph file format

namespace detail {

inline void require_keys(const nlohmann::json& obj, const std::string& where,
                         std::initializer_list<std::string_view> required,
                         std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw GraphError(where + ": expected an object");
  for (auto key : required) {
    if (!obj.contains(std::string(key))) throw GraphError(where + ": missing '" + std::string(key) + "'");
  }
  for (const auto& [key, _] : obj.items()) {
    bool ok = std::find(allowed.begin(), allowed.end(), key) != allowed.end();
    if (!ok) throw GraphError(where + ": unexpected key '" + key + "'");
  }
}

inline std::string require_string(const nlohmann::json& obj, const std::string& key, const std::string& where) {
  const auto& v = obj.at(key);
  if (!v.is_string()) throw GraphError(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

}  // namespace detail

/// Parses a graph document: `{"nodes": [...], "edges": [...]}`. Multiple
/// sinks are legal here (authoring is iterative) and produce a warning.
inline ConceptGraph load_graph(std::string_view source, std::vector<std::string>* warnings = nullptr) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(source);
  } catch (const nlohmann::json::parse_error& e) {
    auto offset = e.byte == 0 ? 0 : e.byte - 1;
    auto [line, col] = text::line_column(source, offset);
    throw ParseError("graph file parse error at line " + std::to_string(line) + ", column " +
                         std::to_string(col) + ": " + e.what(),
                     line, col);
  }
  detail::require_keys(doc, "$", {"nodes", "edges"}, {"nodes", "edges", "name", "description"});
  if (!doc["nodes"].is_array()) throw GraphError("$.nodes: expected an array");
  if (!doc["edges"].is_array()) throw GraphError("$.edges: expected an array");

  std::vector<Concept> nodes;
  for (std::size_t i = 0; i < doc["nodes"].size(); ++i) {
    const auto& n = doc["nodes"][i];
    const std::string where = "$.nodes[" + std::to_string(i) + "]";
    detail::require_keys(n, where, {"id", "title", "body"}, {"id", "title", "body", "examples", "probes"});
    Concept c;
    c.id = detail::require_string(n, "id", where);
    c.title = detail::require_string(n, "title", where);
    c.body = detail::require_string(n, "body", where);
    if (n.contains("examples")) {
      if (!n["examples"].is_array()) throw GraphError(where + ".examples: expected an array");
      for (const auto& ex : n["examples"]) {
        if (!ex.is_string()) throw GraphError(where + ".examples: expected strings");
        c.examples.push_back(ex.get<std::string>());
      }
    }
    if (n.contains("probes")) {
      if (!n["probes"].is_array()) throw GraphError(where + ".probes: expected an array");
      for (std::size_t p = 0; p < n["probes"].size(); ++p) {
        const auto& pj = n["probes"][p];
        const std::string pwhere = where + ".probes[" + std::to_string(p) + "]";
        detail::require_keys(pj, pwhere, {"question", "match"}, {"question", "match"});
        try {
          c.probes.push_back({detail::require_string(pj, "question", pwhere), AnswerMatcher::from_json(pj["match"])});
        } catch (const PreconditionError& e) {
          throw GraphError(pwhere + ".match: " + e.what());
        }
      }
    }
    nodes.push_back(std::move(c));
  }

  std::vector<ConceptEdge> edges;
  for (std::size_t i = 0; i < doc["edges"].size(); ++i) {
    const auto& e = doc["edges"][i];
    const std::string where = "$.edges[" + std::to_string(i) + "]";
    detail::require_keys(e, where, {"from", "to"}, {"from", "to", "label"});
    ConceptEdge edge{detail::require_string(e, "from", where), detail::require_string(e, "to", where), std::nullopt};
    if (e.contains("label")) edge.label = detail::require_string(e, "label", where);
    edges.push_back(std::move(edge));
  }

  ConceptGraph graph(std::move(nodes), std::move(edges));
  if (warnings && graph.sinks().size() > 1) {
    warnings->push_back("graph has " + std::to_string(graph.sinks().size()) +
                        " sinks (" + text::join(graph.sinks(), ", ") +
                        "); building a chain requires exactly one topic");
  }
  return graph;
}

// ---------------------------------------------------------------------------
// Acyclicity

struct AcyclicReport {
  bool ok = true;
  std::vector<std::vector<std::string>> cycles;  // one per back edge found
  std::vector<std::string> sinks;
};

/// Depth-first search from every node in id order. Each back edge yields the
/// cycle it closes, listed from the re-entered node.
inline AcyclicReport validate_acyclic(const ConceptGraph& graph) {
  AcyclicReport report;
  report.sinks = graph.sinks();

  std::vector<std::string> ids;
  for (const auto& n : graph.nodes()) ids.push_back(n.id);
  std::sort(ids.begin(), ids.end());

  enum class Mark { white, grey, black };
  std::map<std::string, Mark> mark;
  for (const auto& id : ids) mark[id] = Mark::white;
  std::vector<std::string> stack;

  std::function<void(const std::string&)> visit = [&](const std::string& id) {
    mark[id] = Mark::grey;
    stack.push_back(id);
    std::vector<std::string> next;
    for (const auto& e : graph.out_edges(id)) next.push_back(e.to);
    std::sort(next.begin(), next.end());
    for (const auto& to : next) {
      if (mark[to] == Mark::grey) {
        auto start = std::find(stack.begin(), stack.end(), to);
        report.cycles.emplace_back(start, stack.end());
      } else if (mark[to] == Mark::white) {
        visit(to);
      }
    }
    stack.pop_back();
    mark[id] = Mark::black;
  };
  for (const auto& id : ids) {
    if (mark[id] == Mark::white) visit(id);
  }
  report.ok = report.cycles.empty();
  return report;
}

/// A problem-ready graph is acyclic with exactly one topic.
inline void require_problem_ready(const ConceptGraph& graph) {
  auto report = validate_acyclic(graph);
  if (!report.ok) {
    throw GraphError("concept graph has a cycle: " + text::join(report.cycles.front(), " -> "));
  }
  if (report.sinks.size() != 1) {
    throw GraphError("concept graph must have exactly one topic, found " + std::to_string(report.sinks.size()) +
                     (report.sinks.empty() ? "" : " (" + text::join(report.sinks, ", ") + ")"));
  }
}

// ---------------------------------------------------------------------------
// Base knowledge and the missing subgraph

struct KnowledgeProvenance {
  enum class Source { asserted, probed };
  Source source = Source::asserted;
  double score = 1.0;  // fraction of probe trials answered correctly
};

class KnownSet {
 public:
  void add_asserted(std::string id) { entries_[std::move(id)] = {KnowledgeProvenance::Source::asserted, 1.0}; }
  void add_probed(std::string id, double score) {
    entries_[std::move(id)] = {KnowledgeProvenance::Source::probed, score};
  }

  bool contains(std::string_view id) const { return entries_.count(std::string(id)) != 0; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : entries_) out.push_back(id);
    return out;
  }

  const std::map<std::string, KnowledgeProvenance>& entries() const noexcept { return entries_; }

  /// Accepts `["a", "b"]` or `{"known": ["a", "b"]}`.
  static KnownSet from_json(const nlohmann::json& j) {
    const auto& list = j.is_object() ? j.at("known") : j;
    if (!list.is_array()) throw PreconditionError("known set must be an array of concept ids");
    KnownSet known;
    for (const auto& id : list) known.add_asserted(id.get<std::string>());
    return known;
  }

 private:
  std::map<std::string, KnowledgeProvenance> entries_;
};

/// The concepts a model still has to be taught. Edges between two known
/// concepts are dropped; edges from a known concept into a missing one are
/// kept as references so prompts can point at base knowledge.
class MissingGraph {
 public:
  const std::vector<Concept>& nodes() const noexcept { return nodes_; }
  const std::vector<ConceptEdge>& internal_edges() const noexcept { return internal_; }
  const std::vector<ConceptEdge>& reference_edges() const noexcept { return reference_; }
  bool empty() const noexcept { return nodes_.empty(); }
  std::size_t size() const noexcept { return nodes_.size(); }

  bool contains(std::string_view id) const {
    return std::any_of(nodes_.begin(), nodes_.end(), [&](const Concept& c) { return c.id == id; });
  }

  /// Title of a missing concept or a referenced known concept.
  std::string title_of(std::string_view id) const {
    for (const auto& c : nodes_) {
      if (c.id == id) return c.title;
    }
    if (auto it = referenced_.find(std::string(id)); it != referenced_.end()) return it->second.title;
    return std::string(id);
  }

  const std::map<std::string, Concept>& referenced_known() const noexcept { return referenced_; }

 private:
  friend MissingGraph subtract_known(const ConceptGraph&, const KnownSet&);

  std::vector<Concept> nodes_;
  std::vector<ConceptEdge> internal_;
  std::vector<ConceptEdge> reference_;
  std::map<std::string, Concept> referenced_;
};

inline MissingGraph subtract_known(const ConceptGraph& graph, const KnownSet& known) {
  for (const auto& id : known.ids()) {
    if (!graph.contains(id)) throw GraphError("known set names unknown concept '" + id + "'");
  }
  MissingGraph missing;
  for (const auto& c : graph.nodes()) {
    if (!known.contains(c.id)) missing.nodes_.push_back(c);
  }
  for (const auto& e : graph.edges()) {
    const bool from_known = known.contains(e.from);
    const bool to_known = known.contains(e.to);
    if (to_known) continue;
    if (from_known) {
      missing.reference_.push_back(e);
      missing.referenced_.emplace(e.from, graph.node(e.from));
    } else {
      missing.internal_.push_back(e);
    }
  }
  return missing;
}

struct ChainStep {
  Concept node;
  std::vector<ConceptEdge> internal_in;
  std::vector<ConceptEdge> reference_in;
};

/// Prerequisite-respecting level order: each layer holds the missing concepts
/// whose missing prerequisites all sit in earlier layers; ties within a layer
/// are broken by id.
inline std::vector<ChainStep> chain_order(const MissingGraph& missing) {
  std::map<std::string, std::size_t> in_degree;
  std::map<std::string, std::vector<std::string>> successors;
  std::map<std::string, const Concept*> by_id;
  for (const auto& c : missing.nodes()) {
    in_degree[c.id] = 0;
    by_id[c.id] = &c;
  }
  for (const auto& e : missing.internal_edges()) {
    ++in_degree[e.to];
    successors[e.from].push_back(e.to);
  }

  std::vector<std::string> layer;
  for (const auto& [id, deg] : in_degree) {
    if (deg == 0) layer.push_back(id);
  }

  std::vector<ChainStep> order;
  while (!layer.empty()) {
    std::sort(layer.begin(), layer.end());
    std::vector<std::string> next;
    for (const auto& id : layer) {
      ChainStep step{*by_id.at(id), {}, {}};
      for (const auto& e : missing.internal_edges()) {
        if (e.to == id) step.internal_in.push_back(e);
      }
      for (const auto& e : missing.reference_edges()) {
        if (e.to == id) step.reference_in.push_back(e);
      }
      order.push_back(std::move(step));
      for (const auto& succ : successors[id]) {
        if (--in_degree[succ] == 0) next.push_back(succ);
      }
    }
    layer = std::move(next);
  }
  if (order.size() != missing.size()) throw GraphError("missing concept graph contains a cycle");
  return order;
}

/// Graphviz rendering; known concepts are filled grey.
inline std::string to_dot(const ConceptGraph& graph, const KnownSet* known = nullptr) {
  auto quote = [](const std::string& s) { return "\"" + text::replace_all(s, "\"", "\\\"") + "\""; };
  std::ostringstream out;
  out << "digraph concepts {\n  rankdir=LR;\n";
  for (const auto& c : graph.nodes()) {
    out << "  " << quote(c.id) << " [label=" << quote(c.title);
    if (known && known->contains(c.id)) out << ", style=filled, fillcolor=lightgrey";
    out << "];\n";
  }
  for (const auto& e : graph.edges()) {
    out << "  " << quote(e.from) << " -> " << quote(e.to);
    if (e.label) out << " [label=" << quote(*e.label) << "]";
    out << ";\n";
  }
  out << "}\n";
  return out.str();
}

}  // namespace conceptlm
