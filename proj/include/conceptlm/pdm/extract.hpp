#pragma once

#include <algorithm>
#include <optional>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace conceptlm::pdm {

/// A JSON value found inside a model response, with its byte span.
struct PdmDocument {
  nlohmann::json value;
  std::size_t begin = 0;
  std::size_t end = 0;  // one past the last byte
};

namespace detail {

inline std::optional<nlohmann::json> parse_structured(std::string_view s) {
  auto j = nlohmann::json::parse(s.begin(), s.end(), nullptr, false);
  if (j.is_discarded() || !(j.is_object() || j.is_array())) return std::nullopt;
  return j;
}

// End (exclusive) of the brace group opening at `open`, honouring JSON strings.
inline std::optional<std::size_t> balanced_end(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    char c = s[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Finds the JSON document in a response: the first fenced code block holding
/// a JSON object or array, else the longest balanced `{...}` span that parses.
/// Never throws.
inline std::optional<PdmDocument> extract_json(std::string_view response) noexcept {
  try {
    std::size_t pos = 0;
    while ((pos = response.find("```", pos)) != std::string_view::npos) {
      auto line_end = response.find('\n', pos + 3);
      if (line_end == std::string_view::npos) break;
      auto close = response.find("```", line_end + 1);
      if (close == std::string_view::npos) break;
      auto body = response.substr(line_end + 1, close - line_end - 1);
      if (auto j = detail::parse_structured(body)) return PdmDocument{std::move(*j), line_end + 1, close};
      pos = close + 3;
    }

    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (std::size_t i = 0; i < response.size(); ++i) {
      if (response[i] != '{') continue;
      if (auto end = detail::balanced_end(response, i)) spans.emplace_back(i, *end);
    }
    std::stable_sort(spans.begin(), spans.end(), [](const auto& a, const auto& b) {
      return (a.second - a.first) > (b.second - b.first);
    });
    for (const auto& [b, e] : spans) {
      if (auto j = detail::parse_structured(response.substr(b, e - b))) return PdmDocument{std::move(*j), b, e};
    }
  } catch (...) {
  }
  return std::nullopt;
}

/// Every fenced code block in `text` that holds a JSON object or array.
inline std::vector<nlohmann::json> fenced_documents(std::string_view text) {
  std::vector<nlohmann::json> out;
  std::size_t pos = 0;
  while ((pos = text.find("```", pos)) != std::string_view::npos) {
    auto line_end = text.find('\n', pos + 3);
    if (line_end == std::string_view::npos) break;
    auto close = text.find("```", line_end + 1);
    if (close == std::string_view::npos) break;
    if (auto j = detail::parse_structured(text.substr(line_end + 1, close - line_end - 1))) out.push_back(std::move(*j));
    pos = close + 3;
  }
  return out;
}

}  // namespace conceptlm::pdm
