#pragma once

#include <numeric>
#include <optional>
#include <span>
#include <string_view>

#include <nlohmann/json.hpp>

#include "conceptlm/error.hpp"
#include "conceptlm/gateway.hpp"
#include "conceptlm/matcher.hpp"
#include "conceptlm/tokenizer.hpp"

namespace conceptlm {

/// k = 1 iff the response carries the expected answer.
inline int correctness_indicator(std::string_view response, const AnswerMatcher& expected) {
  return expected.matches(response) ? 1 : 0;
}

/// Mean of 0/1 indicators.
inline double response_correctness(std::span<const int> indicators) {
  if (indicators.empty()) throw PreconditionError("response_correctness needs at least one indicator");
  long sum = 0;
  for (int k : indicators) {
    if (k != 0 && k != 1) throw PreconditionError("correctness indicators must be 0 or 1");
    sum += k;
  }
  return static_cast<double>(sum) / static_cast<double>(indicators.size());
}

struct CostResult {
  std::size_t tokens = 0;
  bool estimated = false;  // true if any turn fell back to the tokenizer
};

/// Prompt plus response tokens of every request. Multi-turn chains re-send
/// their context, so each request is billed for the whole conversation so far.
inline CostResult response_cost(const Transcript& transcript, const TokenCounter& tokenizer = default_token_counter()) {
  if (transcript.turns.empty()) throw PreconditionError("response_cost needs a non-empty transcript");
  CostResult cost;
  std::size_t context = 0;  // tokenizer count of everything sent or received so far
  for (const auto& turn : transcript.turns) {
    const auto request = tokenizer(turn.request);
    const auto response = tokenizer(turn.response);
    if (turn.usage_reported) {
      cost.tokens += turn.prompt_tokens + turn.response_tokens;
    } else {
      cost.tokens += context + request + response;
      cost.estimated = true;
    }
    context += request + response;
  }
  return cost;
}

/// Sum of per-turn generation seconds.
inline double time_consumption(const Transcript& transcript) {
  double total = 0.0;
  for (const auto& turn : transcript.turns) total += turn.seconds;
  return total;
}

/// Mean probability over all response tokens of all turns (pooled, so long
/// turns weigh more). Absent when any turn has no probabilities.
inline std::optional<double> model_confidence(const Transcript& transcript) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& turn : transcript.turns) {
    if (!turn.probabilities) return std::nullopt;
    for (double p : *turn.probabilities) sum += p;
    count += turn.probabilities->size();
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

struct MetricBundle {
  std::optional<int> k;  // correctness indicator, when the problem has a single answer
  std::size_t theta_cost = 0;
  bool cost_estimated = false;
  double theta_time = 0.0;
  bool time_is_replay = false;
  std::optional<double> theta_p;
};

inline MetricBundle measure(const Transcript& transcript, const std::optional<AnswerMatcher>& expected = std::nullopt,
                            const TokenCounter& tokenizer = default_token_counter()) {
  MetricBundle m;
  if (!transcript.turns.empty()) {
    auto cost = response_cost(transcript, tokenizer);
    m.theta_cost = cost.tokens;
    m.cost_estimated = cost.estimated;
  }
  m.theta_time = time_consumption(transcript);
  m.time_is_replay = transcript.replay_timing;
  m.theta_p = model_confidence(transcript);
  if (expected && transcript.complete) m.k = correctness_indicator(transcript.final_response(), *expected);
  return m;
}

inline nlohmann::json to_json(const MetricBundle& m) {
  nlohmann::json j = {{"theta_cost", m.theta_cost},
                      {"cost_estimated", m.cost_estimated},
                      {"theta_time", m.theta_time},
                      {"time_is_replay", m.time_is_replay}};
  j["theta_p"] = m.theta_p ? nlohmann::json(*m.theta_p) : nlohmann::json(nullptr);
  j["k"] = m.k ? nlohmann::json(*m.k) : nlohmann::json(nullptr);
  return j;
}

inline MetricBundle metric_bundle_from_json(const nlohmann::json& j) {
  MetricBundle m;
  m.theta_cost = j.at("theta_cost").get<std::size_t>();
  m.cost_estimated = j.value("cost_estimated", false);
  m.theta_time = j.at("theta_time").get<double>();
  m.time_is_replay = j.value("time_is_replay", false);
  if (j.contains("theta_p") && !j["theta_p"].is_null()) m.theta_p = j["theta_p"].get<double>();
  if (j.contains("k") && !j["k"].is_null()) m.k = j["k"].get<int>();
  return m;
}

}  // namespace conceptlm
