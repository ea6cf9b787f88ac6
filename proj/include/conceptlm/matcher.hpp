#pragma once

#include <cmath>
#include <optional>
#include <regex>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "conceptlm/error.hpp"

namespace conceptlm {

/// Decides whether a free-text model response carries an expected answer.
///
/// `number` matchers compare against the last number that appears in the
/// response, so "4 sisters plus Alice makes 5" reads as 5 while "4" stays 4.
class AnswerMatcher {
 public:
  enum class Kind { substring, pattern, number };

  static AnswerMatcher substring(std::string needle) {
    return AnswerMatcher(Kind::substring, std::move(needle), 0.0, 0.0);
  }

  static AnswerMatcher pattern(std::string regex) {
    AnswerMatcher m(Kind::pattern, std::move(regex), 0.0, 0.0);
    try {
      m.regex_ = std::regex(m.text_, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw PreconditionError("matcher pattern does not compile: " + m.text_);
    }
    return m;
  }

  static AnswerMatcher number(double value, double tolerance = 0.0) {
    if (!(tolerance >= 0.0) || !std::isfinite(value)) {
      throw PreconditionError("number matcher needs a finite value and tolerance >= 0");
    }
    return AnswerMatcher(Kind::number, {}, value, tolerance);
  }

  Kind kind() const noexcept { return kind_; }
  const std::string& text() const noexcept { return text_; }
  double value() const noexcept { return value_; }
  double tolerance() const noexcept { return tolerance_; }

  bool matches(std::string_view response) const {
    switch (kind_) {
      case Kind::substring:
        return response.find(text_) != std::string_view::npos;
      case Kind::pattern:
        return std::regex_search(response.begin(), response.end(), *regex_);
      case Kind::number: {
        auto last = last_number(response);
        return last && std::fabs(*last - value_) <= tolerance_;
      }
    }
    return false;
  }

  static std::optional<double> last_number(std::string_view s) {
    static const std::regex kNumber(R"([-+]?\d+(?:\.\d+)?)");
    std::optional<double> last;
    for (std::cregex_iterator it(s.data(), s.data() + s.size(), kNumber), end; it != end; ++it) {
      last = std::stod(it->str());
    }
    return last;
  }

  nlohmann::json to_json() const {
    switch (kind_) {
      case Kind::substring:
        return {{"kind", "substring"}, {"value", text_}};
      case Kind::pattern:
        return {{"kind", "pattern"}, {"value", text_}};
      case Kind::number:
        return {{"kind", "number"}, {"value", value_}, {"tolerance", tolerance_}};
    }
    return nullptr;
  }

  static AnswerMatcher from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("kind") || !j.contains("value")) {
      throw PreconditionError("matcher needs 'kind' and 'value'");
    }
    const auto kind = j.at("kind").get<std::string>();
    const auto& v = j.at("value");
    if (kind == "substring") return substring(v.get<std::string>());
    if (kind == "pattern") return pattern(v.get<std::string>());
    if (kind == "number") {
      double value = v.is_string() ? std::stod(v.get<std::string>()) : v.get<double>();
      return number(value, j.value("tolerance", 0.0));
    }
    throw PreconditionError("unknown matcher kind '" + kind + "'");
  }

 private:
  AnswerMatcher(Kind kind, std::string text, double value, double tolerance)
      : kind_(kind), text_(std::move(text)), value_(value), tolerance_(tolerance) {}

  Kind kind_;
  std::string text_;
  double value_;
  double tolerance_;
  std::optional<std::regex> regex_;
};

}  // namespace conceptlm
