#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "conceptlm/digest.hpp"
#include "conceptlm/error.hpp"
#include "conceptlm/text.hpp"

namespace conceptlm {

/// Fixed prompt wording. Every transcript records `version()`, and any
/// override from a template directory changes it.
class TemplateSet {
 public:
  static constexpr const char* kBaseVersion = "conceptlm-prompts/1";

  TemplateSet()
      : entries_{
            {"icl_exemplar", "Here is an example question with its answer.\nQuestion: {query}\nAnswer: {response}"},
            {"cot_pair", "Example {index}:\nQuestion: {query}\nAnswer: {response}"},
            {"cot_step_suffix", "Let's think step by step."},
            {"concept_heading", "Let me explain a concept you will need. Concept: {title}"},
            {"concept_builds_on", "This concept builds on: {sources}."},
            {"concept_example", "Example {index}: {example}"},
        },
        version_(kBaseVersion) {}

  /// Reads `<key>.txt` for every known key present in `dir`.
  static TemplateSet from_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw Error("template directory not found: " + dir.string());
    TemplateSet set;
    bool changed = false;
    for (auto& [key, value] : set.entries_) {
      auto file = dir / (key + ".txt");
      if (std::filesystem::exists(file)) {
        auto content = text::read_file(file.string());
        while (!content.empty() && (content.back() == '\n' || content.back() == '\r')) content.pop_back();
        changed = changed || content != value;
        value = std::move(content);
      }
    }
    if (changed) {
      std::string all;
      for (const auto& [key, value] : set.entries_) all += key + "\n" + value + "\n";
      set.version_ = std::string(kBaseVersion) + "+custom." + sha256_hex(all).substr(0, 12);
    }
    return set;
  }

  const std::string& get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw Error("unknown template '" + key + "'");
    return it->second;
  }

  const std::string& version() const noexcept { return version_; }

 private:
  std::map<std::string, std::string> entries_;
  std::string version_;
};

}  // namespace conceptlm
