#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptlm/error.hpp"
#include "conceptlm/strategies.hpp"
#include "conceptlm/tokenizer.hpp"

namespace conceptlm {

enum class Role { system, user, assistant };

inline std::string to_string(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "?";
}

struct Message {
  Role role = Role::user;
  std::string content;

  friend bool operator==(const Message&, const Message&) = default;
};

/// Model identity and limits. Defaults follow the experiment setup: backend
/// default sampling, 16000 total tokens, 4096 response tokens.
struct ModelSpec {
  std::string name = "mock";
  std::size_t max_total_tokens = 16000;
  std::size_t max_response_tokens = 4096;
  std::optional<double> temperature;

  void validate() const {
    if (name.empty()) throw PreconditionError("model name is empty");
    if (max_response_tokens > max_total_tokens) {
      throw PreconditionError("max_response_tokens exceeds max_total_tokens for model " + name);
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"name", name}, {"max_total_tokens", max_total_tokens},
                        {"max_response_tokens", max_response_tokens}};
    if (temperature) j["temperature"] = *temperature;
    return j;
  }

  static ModelSpec from_json(const nlohmann::json& j) {
    ModelSpec spec;
    if (j.is_string()) {
      spec.name = j.get<std::string>();
    } else {
      spec.name = j.at("name").get<std::string>();
      spec.max_total_tokens = j.value("max_total_tokens", spec.max_total_tokens);
      spec.max_response_tokens = j.value("max_response_tokens", spec.max_response_tokens);
      if (j.contains("temperature")) spec.temperature = j.at("temperature").get<double>();
    }
    spec.validate();
    return spec;
  }
};

/// Where a request sits in an experiment. Not sent over the wire; mock and
/// cassette backends key on it.
struct RequestTag {
  std::string scm;
  std::size_t turn_index = 0;
  std::size_t turn_count = 1;
  std::size_t sample = 0;
  std::string domain;

  nlohmann::json to_json() const {
    return {{"scm", scm}, {"turn_index", turn_index}, {"turn_count", turn_count},
            {"sample", sample}, {"domain", domain}};
  }
};

struct CompletionRequest {
  std::vector<Message> messages;
  ModelSpec model;
  RequestTag tag;
};

struct Usage {
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

struct BackendReply {
  std::string text;
  std::optional<Usage> usage;
  std::optional<std::vector<double>> token_probabilities;
  // Backends with a virtual clock (the mock) report generation time here so
  // repeated runs are reproducible; otherwise wall-clock time is measured.
  std::optional<double> simulated_seconds;
};

class Backend {
 public:
  virtual ~Backend() = default;

  virtual std::string id() const = 0;
  virtual BackendReply send(const CompletionRequest& request) = 0;

  virtual bool is_replay() const { return false; }

  virtual std::size_t count_prompt_tokens(const std::vector<Message>& messages) const {
    std::size_t n = 0;
    for (const auto& m : messages) n += estimate_tokens(m.content);
    return n;
  }
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };
};

struct Completion {
  std::string text;
  std::size_t prompt_tokens = 0;
  std::size_t response_tokens = 0;
  bool usage_reported = false;
  std::optional<std::vector<double>> probabilities;
  double elapsed_seconds = 0.0;
  int attempts = 1;
};

/// One chat completion. Rejects over-budget prompts before sending, retries
/// transport failures with exponential backoff, and times only the attempt
/// that succeeded.
inline Completion complete(const std::vector<Message>& history, const ModelSpec& spec, Backend& backend,
                           const RequestTag& tag = {}, const RetryPolicy& retry = {}) {
  if (history.empty()) throw PreconditionError("conversation history is empty");
  spec.validate();
  const auto prompt_tokens = backend.count_prompt_tokens(history);
  if (prompt_tokens + spec.max_response_tokens > spec.max_total_tokens) {
    throw TokenLimitError("prompt of " + std::to_string(prompt_tokens) + " tokens plus " +
                          std::to_string(spec.max_response_tokens) + " response tokens exceeds the " +
                          std::to_string(spec.max_total_tokens) + " token limit of " + spec.name);
  }

  CompletionRequest request{history, spec, tag};
  auto backoff = retry.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    const auto start = std::chrono::steady_clock::now();
    BackendReply reply;
    try {
      reply = backend.send(request);
    } catch (const TransportError&) {
      if (attempt >= retry.max_attempts) throw;
      retry.sleep(backoff);
      backoff *= 2;
      continue;
    }
    const std::chrono::duration<double> measured = std::chrono::steady_clock::now() - start;

    Completion out;
    out.text = std::move(reply.text);
    out.attempts = attempt;
    out.elapsed_seconds = reply.simulated_seconds.value_or(measured.count());
    if (!(out.elapsed_seconds >= 0.0)) throw MalformedPayloadError("negative generation time from backend");
    if (reply.token_probabilities) {
      for (double p : *reply.token_probabilities) {
        if (!(p >= 0.0 && p <= 1.0)) throw MalformedPayloadError("token probability outside [0, 1]");
      }
      out.probabilities = std::move(reply.token_probabilities);
    }
    if (reply.usage) {
      out.usage_reported = true;
      out.prompt_tokens = reply.usage->prompt_tokens;
      out.response_tokens = reply.usage->completion_tokens;
    } else {
      out.prompt_tokens = prompt_tokens;
      out.response_tokens = estimate_tokens(out.text);
    }
    return out;
  }
}

struct TurnRecord {
  std::string request;
  std::string response;
  double seconds = 0.0;
  std::size_t prompt_tokens = 0;
  std::size_t response_tokens = 0;
  bool usage_reported = false;
  std::optional<std::vector<double>> probabilities;
  int attempts = 1;
};

struct Transcript {
  std::string scm;
  std::size_t planned_turns = 0;
  std::vector<TurnRecord> turns;
  std::string backend_id;
  std::string model;
  std::string template_version;
  bool complete = false;
  std::optional<std::string> failure;
  bool replay_timing = false;

  /// Alternating user/assistant messages in send order.
  std::vector<Message> messages() const {
    std::vector<Message> out;
    for (const auto& t : turns) {
      out.push_back({Role::user, t.request});
      out.push_back({Role::assistant, t.response});
    }
    return out;
  }

  const std::string& final_response() const {
    static const std::string kEmpty;
    return turns.empty() ? kEmpty : turns.back().response;
  }
};

inline nlohmann::json to_json(const Transcript& t) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& r : t.turns) {
    nlohmann::json tj = {{"request", r.request},
                         {"response", r.response},
                         {"seconds", r.seconds},
                         {"prompt_tokens", r.prompt_tokens},
                         {"response_tokens", r.response_tokens},
                         {"usage_reported", r.usage_reported},
                         {"attempts", r.attempts}};
    tj["probabilities"] = r.probabilities ? nlohmann::json(*r.probabilities) : nlohmann::json(nullptr);
    turns.push_back(std::move(tj));
  }
  nlohmann::json j = {{"scm", t.scm},
                      {"planned_turns", t.planned_turns},
                      {"turns", std::move(turns)},
                      {"backend", t.backend_id},
                      {"model", t.model},
                      {"template_version", t.template_version},
                      {"complete", t.complete},
                      {"replay_timing", t.replay_timing}};
  j["failure"] = t.failure ? nlohmann::json(*t.failure) : nlohmann::json(nullptr);
  return j;
}

inline Transcript transcript_from_json(const nlohmann::json& j) {
  Transcript t;
  t.scm = j.at("scm").get<std::string>();
  t.planned_turns = j.at("planned_turns").get<std::size_t>();
  t.backend_id = j.at("backend").get<std::string>();
  t.model = j.at("model").get<std::string>();
  t.template_version = j.at("template_version").get<std::string>();
  t.complete = j.at("complete").get<bool>();
  t.replay_timing = j.value("replay_timing", false);
  if (!j.at("failure").is_null()) t.failure = j.at("failure").get<std::string>();
  for (const auto& tj : j.at("turns")) {
    TurnRecord r;
    r.request = tj.at("request").get<std::string>();
    r.response = tj.at("response").get<std::string>();
    r.seconds = tj.at("seconds").get<double>();
    r.prompt_tokens = tj.at("prompt_tokens").get<std::size_t>();
    r.response_tokens = tj.at("response_tokens").get<std::size_t>();
    r.usage_reported = tj.at("usage_reported").get<bool>();
    r.attempts = tj.value("attempts", 1);
    if (!tj.at("probabilities").is_null()) r.probabilities = tj.at("probabilities").get<std::vector<double>>();
    t.turns.push_back(std::move(r));
  }
  return t;
}

struct RunOptions {
  RequestTag tag;  // turn_index and turn_count are filled per turn
  RetryPolicy retry;
};

/// Executes the plan turn by turn; every request carries the whole prior
/// conversation. A failing turn stops the chain and leaves a partial,
/// flagged transcript.
inline Transcript run_plan(const PromptPlan& plan, const ModelSpec& spec, Backend& backend,
                           const RunOptions& options = {}) {
  if (plan.turns.empty()) throw PreconditionError("plan has no turns");
  if (plan.final_query_index != plan.turns.size() - 1) {
    throw PreconditionError("plan's conceptual problem must be its last turn");
  }
  Transcript transcript;
  transcript.scm = to_string(plan.scm);
  transcript.planned_turns = plan.turns.size();
  transcript.backend_id = backend.id();
  transcript.model = spec.name;
  transcript.template_version = plan.template_version;
  transcript.replay_timing = backend.is_replay();

  std::vector<Message> history;
  RequestTag tag = options.tag;
  tag.scm = to_string(plan.scm);
  tag.turn_count = plan.turns.size();
  for (std::size_t i = 0; i < plan.turns.size(); ++i) {
    history.push_back({Role::user, plan.turns[i].content});
    tag.turn_index = i;
    Completion c;
    try {
      c = complete(history, spec, backend, tag, options.retry);
    } catch (const Error& e) {
      transcript.failure = "turn " + std::to_string(i) + ": " + e.what();
      return transcript;
    }
    history.push_back({Role::assistant, c.text});
    transcript.turns.push_back({plan.turns[i].content, std::move(c.text), c.elapsed_seconds, c.prompt_tokens,
                                c.response_tokens, c.usage_reported, std::move(c.probabilities), c.attempts});
  }
  transcript.complete = true;
  return transcript;
}

}  // namespace conceptlm
