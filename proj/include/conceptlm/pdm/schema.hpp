#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptlm/error.hpp"

namespace conceptlm::pdm {

struct Violation {
  std::string rule;
  std::string path;
  std::string message;

  nlohmann::json to_json() const { return {{"rule", rule}, {"path", path}, {"message", message}}; }
};

struct SyntaxResult {
  int score = 0;  // 1 iff no violations
  std::vector<Violation> violations;
};

inline std::string child_path(const std::string& parent, const std::string& key) {
  bool plain = !key.empty() && std::all_of(key.begin(), key.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_';
  });
  return plain ? parent + "." + key : parent + "[" + nlohmann::json(key).dump() + "]";
}

inline std::string index_path(const std::string& parent, std::size_t i) {
  return parent + "[" + std::to_string(i) + "]";
}

/// Declarative syntactic rules for a proprietary data model serialization.
/// See docs/pdm-schema.md for the rule file format.
class PdmSchema {
 public:
  struct FieldRule {
    std::vector<std::string> types;
    std::optional<std::size_t> min_length;
    std::optional<std::regex> pattern;
    std::string pattern_text;
    std::string enumeration;
    std::optional<std::size_t> min_items;
    std::shared_ptr<FieldRule> items;
    std::shared_ptr<FieldRule> values;
    std::vector<std::string> required;
    std::map<std::string, FieldRule> fields;
    bool additional = false;
  };

  struct ObjectRules {
    std::vector<std::string> required;
    std::vector<std::string> optional;
    std::vector<std::string> forbidden;
    std::map<std::string, FieldRule> fields;
  };

  static PdmSchema from_json(const nlohmann::json& j) {
    PdmSchema s;
    try {
      s.name_ = j.value("name", "pdm-schema");
      s.version_ = j.value("version", "0");
      if (j.contains("enumerations")) {
        for (const auto& [k, v] : j["enumerations"].items()) {
          s.enumerations_[k] = v.get<std::vector<std::string>>();
        }
      }
      if (j.contains("identifier_pattern")) {
        s.identifier_pattern_text_ = j["identifier_pattern"].get<std::string>();
        s.identifier_pattern_ = compile(s.identifier_pattern_text_, "identifier_pattern");
      }
      s.document_ = s.parse_object_rules(j.at("document"), "document");
      const auto& ent = j.at("entities");
      s.entity_path_ = ent.value("path", "entities");
      s.kind_field_ = ent.value("kind_field", "kind");
      s.entity_ = s.parse_object_rules(ent, "entities");
      if (j.contains("nesting")) {
        for (const auto& [k, v] : j["nesting"].items()) s.nesting_[k] = v.get<std::vector<std::string>>();
      }
      const auto checks = j.value("cross_checks", nlohmann::json::object());
      s.unique_names_ = checks.value("unique_names", true);
      s.unique_identifiers_ = checks.value("unique_identifiers", true);
      s.composition_targets_exist_ = checks.value("composition_targets_exist", true);
      s.relationship_targets_exist_ = checks.value("relationship_targets_exist", true);
      s.attributes_declared_ = checks.value("attributes_declared", true);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("malformed schema rule file: ") + e.what());
    }
    s.check_consistency();
    return s;
  }

  const std::string& name() const noexcept { return name_; }
  const std::string& version() const noexcept { return version_; }
  const std::string& entity_path() const noexcept { return entity_path_; }

  SyntaxResult check(const nlohmann::json& doc) const {
    std::vector<Violation> out;
    if (!doc.is_object()) {
      out.push_back({"type", "$", "document must be a JSON object"});
      return finish(std::move(out));
    }
    check_object(doc, "$", document_, "document", out);

    if (!doc.contains(entity_path_) || !doc[entity_path_].is_array()) return finish(std::move(out));
    const auto& entities = doc[entity_path_];
    const std::string base = child_path("$", entity_path_);

    std::map<std::string, std::string> kind_of;  // entity name -> kind
    for (const auto& e : entities) {
      if (e.is_object() && e.contains("name") && e["name"].is_string() && e.contains(kind_field_) &&
          e[kind_field_].is_string()) {
        kind_of.emplace(e["name"].get<std::string>(), e[kind_field_].get<std::string>());
      }
    }

    std::map<std::string, std::string> seen_names, seen_ids;
    for (std::size_t i = 0; i < entities.size(); ++i) {
      const auto& e = entities[i];
      const auto path = index_path(base, i);
      if (!e.is_object()) {
        out.push_back({"type", path, "entity must be an object"});
        continue;
      }
      check_object(e, path, entity_, "entity", out);

      if (unique_names_ && e.contains("name") && e["name"].is_string()) {
        auto name = e["name"].get<std::string>();
        if (auto [it, fresh] = seen_names.emplace(name, path); !fresh) {
          out.push_back({"unique.name", child_path(path, "name"), "entity name '" + name + "' already used at " + it->second});
        }
      }
      if (unique_identifiers_ && e.contains("identifiers") && e["identifiers"].is_array()) {
        for (std::size_t k = 0; k < e["identifiers"].size(); ++k) {
          const auto& id = e["identifiers"][k];
          if (!id.is_string()) continue;
          auto ip = index_path(child_path(path, "identifiers"), k);
          if (auto [it, fresh] = seen_ids.emplace(id.get<std::string>(), ip); !fresh) {
            out.push_back({"unique.identifier", ip, "identifier '" + id.get<std::string>() + "' already used at " + it->second});
          }
        }
      }
      const std::string kind = e.contains(kind_field_) && e[kind_field_].is_string() ? e[kind_field_].get<std::string>() : "";
      if (e.contains("composition") && e["composition"].is_array()) {
        const auto cpath = child_path(path, "composition");
        for (std::size_t k = 0; k < e["composition"].size(); ++k) {
          const auto& part = e["composition"][k];
          if (!part.is_string()) continue;
          auto it = kind_of.find(part.get<std::string>());
          if (it == kind_of.end()) {
            if (composition_targets_exist_) {
              out.push_back({"reference.composition", index_path(cpath, k),
                             "composed entity '" + part.get<std::string>() + "' is not defined"});
            }
            continue;
          }
          if (!nesting_.empty() && nesting_.count(kind)) {
            const auto& allowed = nesting_.at(kind);
            if (std::find(allowed.begin(), allowed.end(), it->second) == allowed.end()) {
              out.push_back({"nesting", index_path(cpath, k),
                             "a " + kind + " may not compose a " + it->second});
            }
          }
        }
      }
      if (relationship_targets_exist_ && e.contains("relationships") && e["relationships"].is_array()) {
        const auto rpath = child_path(path, "relationships");
        for (std::size_t k = 0; k < e["relationships"].size(); ++k) {
          const auto& rel = e["relationships"][k];
          if (!rel.is_object() || !rel.contains("target") || !rel["target"].is_string()) continue;
          if (!kind_of.count(rel["target"].get<std::string>())) {
            out.push_back({"reference.relationship", child_path(index_path(rpath, k), "target"),
                           "relationship target '" + rel["target"].get<std::string>() + "' is not defined"});
          }
        }
      }
      if (attributes_declared_) check_attributes(e, path, out);
    }
    return finish(std::move(out));
  }

 private:
  static std::regex compile(const std::string& pattern, const std::string& where) {
    try {
      return std::regex(pattern, std::regex::ECMAScript);
    } catch (const std::regex_error&) {
      throw SchemaError(where + ": pattern does not compile: " + pattern);
    }
  }

  FieldRule parse_field(const nlohmann::json& j, const std::string& where) const {
    FieldRule r;
    if (j.contains("type")) {
      if (j["type"].is_array()) {
        r.types = j["type"].get<std::vector<std::string>>();
      } else {
        r.types = {j["type"].get<std::string>()};
      }
    }
    if (j.contains("min_length")) r.min_length = j["min_length"].get<std::size_t>();
    if (j.contains("pattern")) {
      r.pattern_text = j["pattern"].get<std::string>();
      if (r.pattern_text == "@identifier") {
        if (!identifier_pattern_) throw SchemaError(where + ": @identifier used without identifier_pattern");
        r.pattern = identifier_pattern_;
      } else {
        r.pattern = compile(r.pattern_text, where);
      }
    }
    if (j.contains("enum")) {
      r.enumeration = j["enum"].get<std::string>();
      if (!enumerations_.count(r.enumeration)) throw SchemaError(where + ": unknown enumeration '" + r.enumeration + "'");
    }
    if (j.contains("min_items")) r.min_items = j["min_items"].get<std::size_t>();
    if (j.contains("items")) r.items = std::make_shared<FieldRule>(parse_field(j["items"], where + ".items"));
    if (j.contains("values")) r.values = std::make_shared<FieldRule>(parse_field(j["values"], where + ".values"));
    if (j.contains("required")) r.required = j["required"].get<std::vector<std::string>>();
    if (j.contains("fields")) {
      for (const auto& [k, v] : j["fields"].items()) r.fields.emplace(k, parse_field(v, where + "." + k));
    }
    r.additional = j.value("additional", false);
    return r;
  }

  ObjectRules parse_object_rules(const nlohmann::json& j, const std::string& where) const {
    ObjectRules o;
    o.required = j.value("required", std::vector<std::string>{});
    o.optional = j.value("optional", std::vector<std::string>{});
    o.forbidden = j.value("forbidden", std::vector<std::string>{});
    if (j.contains("fields")) {
      for (const auto& [k, v] : j["fields"].items()) o.fields.emplace(k, parse_field(v, where + "." + k));
    }
    return o;
  }

  void check_consistency() const {
    for (const auto* o : {&document_, &entity_}) {
      for (const auto& f : o->forbidden) {
        bool clash = std::find(o->required.begin(), o->required.end(), f) != o->required.end() ||
                     std::find(o->optional.begin(), o->optional.end(), f) != o->optional.end();
        if (clash) throw SchemaError("field '" + f + "' is both forbidden and required/optional");
      }
    }
    if (!nesting_.empty()) {
      auto kinds_it = entity_.fields.find(kind_field_);
      if (kinds_it == entity_.fields.end() || kinds_it->second.enumeration.empty()) {
        throw SchemaError("nesting rules need an enumerated '" + kind_field_ + "' field");
      }
      const auto& kinds = enumerations_.at(kinds_it->second.enumeration);
      auto known = [&](const std::string& k) { return std::find(kinds.begin(), kinds.end(), k) != kinds.end(); };
      for (const auto& [parent, children] : nesting_) {
        if (!known(parent)) throw SchemaError("nesting names unknown entity kind '" + parent + "'");
        for (const auto& c : children) {
          if (!known(c)) throw SchemaError("nesting names unknown entity kind '" + c + "'");
        }
      }
    }
  }

  static std::string type_of(const nlohmann::json& v) {
    if (v.is_null()) return "null";
    if (v.is_boolean()) return "boolean";
    if (v.is_number_integer() || v.is_number_unsigned()) return "integer";
    if (v.is_number()) return "number";
    if (v.is_string()) return "string";
    if (v.is_array()) return "array";
    return "object";
  }

  static bool type_matches(const std::string& want, const std::string& have) {
    return want == have || (want == "number" && have == "integer");
  }

  void check_value(const nlohmann::json& v, const std::string& path, const FieldRule& r,
                   std::vector<Violation>& out) const {
    if (!r.types.empty()) {
      const auto have = type_of(v);
      bool ok = std::any_of(r.types.begin(), r.types.end(), [&](const auto& t) { return type_matches(t, have); });
      if (!ok) {
        std::string want;
        for (const auto& t : r.types) want += (want.empty() ? "" : "|") + t;
        out.push_back({"type", path, "expected " + want + ", found " + have});
        return;
      }
    }
    if (v.is_string()) {
      const auto& s = v.get_ref<const std::string&>();
      if (r.min_length && s.size() < *r.min_length) {
        out.push_back({"min_length", path, "string shorter than " + std::to_string(*r.min_length)});
      }
      if (r.pattern && !std::regex_match(s, *r.pattern)) {
        out.push_back({"pattern", path, "'" + s + "' does not match " +
                                            (r.pattern_text == "@identifier" ? identifier_pattern_text_ : r.pattern_text)});
      }
      if (!r.enumeration.empty()) {
        const auto& allowed = enumerations_.at(r.enumeration);
        if (std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
          out.push_back({"enum", path, "'" + s + "' is not one of " + r.enumeration});
        }
      }
    }
    if (v.is_array()) {
      if (r.min_items && v.size() < *r.min_items) {
        out.push_back({"min_items", path, "expected at least " + std::to_string(*r.min_items) + " items"});
      }
      if (r.items) {
        for (std::size_t i = 0; i < v.size(); ++i) check_value(v[i], index_path(path, i), *r.items, out);
      }
    }
    if (v.is_object()) {
      for (const auto& key : r.required) {
        if (!v.contains(key)) out.push_back({"object.required", child_path(path, key), "missing required key '" + key + "'"});
      }
      for (const auto& [key, child] : v.items()) {
        const auto cpath = child_path(path, key);
        if (auto it = r.fields.find(key); it != r.fields.end()) {
          check_value(child, cpath, it->second, out);
        } else if (r.values) {
          check_value(child, cpath, *r.values, out);
        } else if (!r.additional && (!r.fields.empty() || !r.required.empty())) {
          out.push_back({"object.unknown_key", cpath, "unexpected key '" + key + "'"});
        }
      }
    }
  }

  void check_object(const nlohmann::json& obj, const std::string& path, const ObjectRules& rules,
                    const std::string& scope, std::vector<Violation>& out) const {
    for (const auto& key : rules.required) {
      if (!obj.contains(key)) out.push_back({scope + ".required", child_path(path, key), "missing required field '" + key + "'"});
    }
    for (const auto& [key, value] : obj.items()) {
      const auto cpath = child_path(path, key);
      if (std::find(rules.forbidden.begin(), rules.forbidden.end(), key) != rules.forbidden.end()) {
        out.push_back({scope + ".forbidden", cpath, "field '" + key + "' is forbidden"});
        continue;
      }
      bool declared = std::find(rules.required.begin(), rules.required.end(), key) != rules.required.end() ||
                      std::find(rules.optional.begin(), rules.optional.end(), key) != rules.optional.end();
      if (!declared) {
        out.push_back({scope + ".unknown_field", cpath, "field '" + key + "' is not part of the schema"});
        continue;
      }
      if (auto it = rules.fields.find(key); it != rules.fields.end()) check_value(value, cpath, it->second, out);
    }
  }

  // Every attribute named in units or constraints must have a datatype.
  void check_attributes(const nlohmann::json& e, const std::string& path, std::vector<Violation>& out) const {
    if (!e.contains("datatypes") || !e["datatypes"].is_object()) return;
    const auto& datatypes = e["datatypes"];
    if (e.contains("units") && e["units"].is_object()) {
      for (const auto& [attr, _] : e["units"].items()) {
        if (!datatypes.contains(attr)) {
          out.push_back({"attribute.undeclared", child_path(child_path(path, "units"), attr),
                         "unit given for attribute '" + attr + "' without a datatype"});
        }
      }
    }
    if (e.contains("constraints") && e["constraints"].is_array()) {
      for (std::size_t k = 0; k < e["constraints"].size(); ++k) {
        const auto& c = e["constraints"][k];
        if (!c.is_object() || !c.contains("attribute") || !c["attribute"].is_string()) continue;
        if (!datatypes.contains(c["attribute"].get<std::string>())) {
          out.push_back({"attribute.undeclared", child_path(index_path(child_path(path, "constraints"), k), "attribute"),
                         "constraint on attribute '" + c["attribute"].get<std::string>() + "' without a datatype"});
        }
      }
    }
  }

  static SyntaxResult finish(std::vector<Violation> v) {
    SyntaxResult r;
    r.score = v.empty() ? 1 : 0;
    r.violations = std::move(v);
    return r;
  }

  std::string name_;
  std::string version_;
  std::map<std::string, std::vector<std::string>> enumerations_;
  std::optional<std::regex> identifier_pattern_;
  std::string identifier_pattern_text_;
  ObjectRules document_;
  ObjectRules entity_;
  std::string entity_path_ = "entities";
  std::string kind_field_ = "kind";
  std::map<std::string, std::vector<std::string>> nesting_;
  bool unique_names_ = true;
  bool unique_identifiers_ = true;
  bool composition_targets_exist_ = true;
  bool relationship_targets_exist_ = true;
  bool attributes_declared_ = true;
};

inline SyntaxResult check_syntax(const nlohmann::json& doc, const PdmSchema& schema) { return schema.check(doc); }

}  // namespace conceptlm::pdm
