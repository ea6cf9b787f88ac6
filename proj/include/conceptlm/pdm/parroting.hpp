#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptlm/text.hpp"

namespace conceptlm::pdm {

/// A JSON document shown to the model in the prompt materials.
struct ExemplarDocument {
  nlohmann::json value;
  std::vector<std::string> domain_terms;  // e.g. {"water pumps"}
  std::string label;
};

struct ParrotingResult {
  bool applicable = false;
  double similarity = 0.0;
  bool parroting = false;
  std::size_t matched = 0;
  std::size_t total = 0;
  std::string exemplar;  // label of the most similar exemplar

  /// Non-parroting pass: 1 when the document is original.
  int pass() const { return parroting ? 0 : 1; }
};

inline constexpr double kDefaultParrotingThreshold = 0.8;

/// Lowercase word tokens of domain terms (length >= 3), with naive singulars.
inline std::vector<std::string> domain_tokens(const std::vector<std::string>& terms) {
  std::set<std::string> tokens;
  for (const auto& term : terms) {
    std::string word;
    auto flush = [&] {
      if (word.size() >= 3) {
        tokens.insert(word);
        if (word.size() > 3 && word.back() == 's') tokens.insert(word.substr(0, word.size() - 1));
      }
      word.clear();
    };
    for (unsigned char c : term) {
      if (std::isalnum(c)) {
        word.push_back(static_cast<char>(std::tolower(c)));
      } else {
        flush();
      }
    }
    flush();
  }
  std::vector<std::string> out(tokens.begin(), tokens.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
  return out;
}

/// Replaces every case-insensitive occurrence of a domain token with a common
/// placeholder, then merges adjacent placeholders ("CoffeeMaking" and "Motor"
/// both become one placeholder).
inline std::string mask_domain(const std::string& s, const std::vector<std::string>& tokens) {
  static constexpr char kMark = '\x01';
  const std::string lower = text::to_lower(s);
  std::string masked;
  std::size_t i = 0;
  while (i < s.size()) {
    bool hit = false;
    for (const auto& t : tokens) {
      if (lower.compare(i, t.size(), t) == 0) {
        masked.push_back(kMark);
        i += t.size();
        hit = true;
        break;
      }
    }
    if (!hit) masked.push_back(s[i++]);
  }
  std::string out;
  for (std::size_t k = 0; k < masked.size(); ++k) {
    if (masked[k] == kMark) {
      out += "<D>";
      std::size_t j = k + 1;
      while (j < masked.size()) {
        std::size_t m = j;
        while (m < masked.size() && (masked[m] == ' ' || masked[m] == '_' || masked[m] == '-')) ++m;
        if (m < masked.size() && masked[m] == kMark) {
          j = m + 1;
        } else {
          break;
        }
      }
      k = j - 1;
    } else {
      out.push_back(masked[k]);
    }
  }
  return out;
}

/// Leaf (path, value) pairs of a JSON value after domain masking. Empty
/// containers count as leaves.
inline std::multiset<std::string> masked_leaves(const nlohmann::json& v, const std::vector<std::string>& tokens) {
  std::multiset<std::string> out;
  auto walk = [&](auto&& self, const nlohmann::json& node, const std::string& path) -> void {
    if (node.is_object() && !node.empty()) {
      for (const auto& [k, child] : node.items()) self(self, child, path + "." + mask_domain(k, tokens));
    } else if (node.is_array() && !node.empty()) {
      for (std::size_t i = 0; i < node.size(); ++i) self(self, node[i], path + "[" + std::to_string(i) + "]");
    } else {
      const auto value = node.is_string() ? mask_domain(node.get<std::string>(), tokens) : node.dump();
      out.insert(path + '\x1f' + value);
    }
  };
  walk(walk, v, "$");
  return out;
}

/// Similarity of two documents: shared leaf pairs over the larger leaf count.
inline double leaf_similarity(const std::multiset<std::string>& a, const std::multiset<std::string>& b,
                              std::size_t* matched = nullptr, std::size_t* total = nullptr) {
  std::vector<std::string> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  const auto denom = std::max(a.size(), b.size());
  if (matched) *matched = common.size();
  if (total) *total = denom;
  return denom == 0 ? 1.0 : static_cast<double>(common.size()) / static_cast<double>(denom);
}

/// Highest masked leaf similarity against any exemplar; parroting when it
/// reaches `threshold`. Not applicable without exemplars.
inline ParrotingResult check_parroting(const nlohmann::json& doc, const std::vector<ExemplarDocument>& exemplars,
                                       const std::vector<std::string>& query_domain_terms,
                                       double threshold = kDefaultParrotingThreshold) {
  ParrotingResult result;
  if (exemplars.empty()) return result;
  result.applicable = true;
  for (const auto& ex : exemplars) {
    auto terms = query_domain_terms;
    terms.insert(terms.end(), ex.domain_terms.begin(), ex.domain_terms.end());
    const auto tokens = domain_tokens(terms);
    std::size_t matched = 0, total = 0;
    const double sim = leaf_similarity(masked_leaves(doc, tokens), masked_leaves(ex.value, tokens), &matched, &total);
    if (sim > result.similarity || result.exemplar.empty()) {
      result.similarity = sim;
      result.matched = matched;
      result.total = total;
      result.exemplar = ex.label;
    }
  }
  result.parroting = result.similarity >= threshold;
  return result;
}

}  // namespace conceptlm::pdm
