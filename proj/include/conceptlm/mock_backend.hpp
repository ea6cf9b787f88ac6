#pragma once

#include <cctype>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptlm/digest.hpp"
#include "conceptlm/error.hpp"
#include "conceptlm/gateway.hpp"
#include "conceptlm/text.hpp"
#include "conceptlm/tokenizer.hpp"

namespace conceptlm {

/// Scripted backend. Rules are keyed by SCM, turn index, model and the last
/// user message (by SHA-256 digest or substring); the most specific matching
/// rule wins and earlier rules win ties. A rule's response is chosen by the
/// request's sample index, so output never depends on call order.
///
/// Response text may use `{1}`, `{1:pascal}`, `{1:lower}`, `{1:snake}` for groups of the
/// rule's `capture` regex, plus `{model}` and `{sample}`.
class MockBackend : public Backend {
 public:
  struct ScriptedResponse {
    std::string text;
    std::optional<std::vector<double>> probabilities;
    std::optional<Usage> usage;
    std::optional<double> seconds;
  };

  struct Rule {
    std::string scm = "*";
    std::optional<std::size_t> turn;  // nullopt: any turn
    bool last_turn = false;
    std::string model = "*";
    std::optional<std::string> digest;
    std::optional<std::string> contains;
    std::optional<std::regex> capture;
    std::string fail;  // "", "transport", "malformed", "backend"
    std::vector<ScriptedResponse> responses;

    int specificity() const {
      return (digest ? 8 : 0) + (contains ? 4 : 0) + ((turn || last_turn) ? 2 : 0) + (scm != "*" ? 1 : 0) +
             (model != "*" ? 1 : 0);
    }
  };

  struct Script {
    std::vector<Rule> rules;
    std::string name = "script";
    double base_seconds = 0.25;
    double seconds_per_token = 0.02;
  };

  explicit MockBackend(Script script)
      : rules_(std::move(script.rules)),
        name_(std::move(script.name)),
        base_seconds_(script.base_seconds),
        seconds_per_token_(script.seconds_per_token) {}

  explicit MockBackend(const nlohmann::json& script) : MockBackend(parse(script)) {}

  static Script parse(const nlohmann::json& j) {
    std::vector<Rule> rules;
    for (const auto& rj : j.at("rules")) {
      Rule r;
      r.scm = rj.value("scm", "*");
      r.model = rj.value("model", "*");
      if (rj.contains("turn")) {
        const auto& t = rj["turn"];
        if (t.is_string() && t.get<std::string>() == "last") {
          r.last_turn = true;
        } else if (t.is_number_unsigned()) {
          r.turn = t.get<std::size_t>();
        } else if (!(t.is_string() && t.get<std::string>() == "*")) {
          throw PreconditionError("mock rule 'turn' must be an index, \"last\" or \"*\"");
        }
      }
      if (rj.contains("digest")) r.digest = rj["digest"].get<std::string>();
      if (rj.contains("contains")) r.contains = rj["contains"].get<std::string>();
      if (rj.contains("capture")) r.capture = std::regex(rj["capture"].get<std::string>());
      r.fail = rj.value("fail", "");
      if (rj.contains("responses")) {
        for (const auto& resp : rj["responses"]) r.responses.push_back(parse_response(resp));
      } else if (rj.contains("response")) {
        r.responses.push_back(parse_response(rj["response"]));
      }
      if (r.responses.empty() && r.fail.empty()) throw PreconditionError("mock rule without responses");
      rules.push_back(std::move(r));
    }
    const auto& latency = j.value("latency", nlohmann::json::object());
    return Script{std::move(rules), j.value("name", "script"), latency.value("base_seconds", 0.25),
                  latency.value("seconds_per_token", 0.02)};
  }

  std::string id() const override { return "mock:" + name_; }

  BackendReply send(const CompletionRequest& request) override {
    {
      std::lock_guard lock(mutex_);
      received_.push_back(request);
    }
    const std::string last_user = last_user_message(request.messages);
    const Rule* best = nullptr;
    for (const auto& rule : rules_) {
      if (!applies(rule, request, last_user)) continue;
      if (!best || rule.specificity() > best->specificity()) best = &rule;
    }
    if (!best) {
      throw BackendError("mock script has no rule for scm=" + request.tag.scm + " turn=" +
                         std::to_string(request.tag.turn_index) + " digest=" + sha256_hex(last_user));
    }
    if (best->fail == "transport") throw TransportError("scripted transport failure");
    if (best->fail == "malformed") throw MalformedPayloadError("scripted malformed payload");
    if (best->fail == "backend") throw BackendError("scripted backend refusal");

    const auto& scripted = best->responses[request.tag.sample % best->responses.size()];
    BackendReply reply;
    reply.text = expand(scripted.text, *best, request, last_user);
    reply.token_probabilities = scripted.probabilities;
    reply.usage = scripted.usage;
    reply.simulated_seconds =
        scripted.seconds.value_or(base_seconds_ + seconds_per_token_ * static_cast<double>(estimate_tokens(reply.text)));
    return reply;
  }

  std::vector<CompletionRequest> received() const {
    std::lock_guard lock(mutex_);
    return received_;
  }

  std::size_t calls() const {
    std::lock_guard lock(mutex_);
    return received_.size();
  }

 private:
  static ScriptedResponse parse_response(const nlohmann::json& j) {
    ScriptedResponse r;
    if (j.is_string()) {
      r.text = j.get<std::string>();
      return r;
    }
    r.text = j.at("text").get<std::string>();
    if (j.contains("probabilities")) r.probabilities = j["probabilities"].get<std::vector<double>>();
    if (j.contains("usage")) {
      r.usage = Usage{j["usage"].at("prompt_tokens").get<std::size_t>(),
                      j["usage"].at("completion_tokens").get<std::size_t>()};
    }
    if (j.contains("seconds")) r.seconds = j["seconds"].get<double>();
    return r;
  }

  static std::string snake_case(const std::string& s) {
    std::string out;
    for (unsigned char c : s) {
      if (std::isalnum(c)) {
        out.push_back(static_cast<char>(std::tolower(c)));
      } else if (!out.empty() && out.back() != '_') {
        out.push_back('_');
      }
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out;
  }

  static std::string last_user_message(const std::vector<Message>& messages) {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
      if (it->role == Role::user) return it->content;
    }
    return {};
  }

  static bool applies(const Rule& rule, const CompletionRequest& req, const std::string& last_user) {
    if (rule.scm != "*" && rule.scm != req.tag.scm) return false;
    if (rule.model != "*" && rule.model != req.model.name) return false;
    if (rule.turn && *rule.turn != req.tag.turn_index) return false;
    if (rule.last_turn && req.tag.turn_index + 1 != req.tag.turn_count) return false;
    if (rule.contains && last_user.find(*rule.contains) == std::string::npos) return false;
    if (rule.digest && *rule.digest != sha256_hex(last_user)) return false;
    if (rule.capture && !std::regex_search(last_user, *rule.capture)) return false;
    return true;
  }

  static std::string expand(const std::string& tmpl, const Rule& rule, const CompletionRequest& req,
                            const std::string& last_user) {
    std::map<std::string, std::string> vars{{"model", req.model.name}, {"sample", std::to_string(req.tag.sample)}};
    std::smatch m;
    if (rule.capture && std::regex_search(last_user, m, *rule.capture)) {
      for (std::size_t g = 1; g < m.size(); ++g) {
        const auto key = std::to_string(g);
        vars[key] = m[g].str();
        vars[key + ":pascal"] = text::pascal_case(m[g].str());
        vars[key + ":lower"] = text::to_lower(m[g].str());
        vars[key + ":snake"] = snake_case(m[g].str());
      }
    }
    return text::fill(tmpl, vars);
  }

  std::vector<Rule> rules_;
  std::string name_;
  double base_seconds_;
  double seconds_per_token_;
  mutable std::mutex mutex_;
  std::vector<CompletionRequest> received_;
};

}  // namespace conceptlm
