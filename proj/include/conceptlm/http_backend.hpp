#pragma once

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"

#include <chrono>
#include <cmath>
#include <regex>
#include <string>

#include <nlohmann/json.hpp>

#include "conceptlm/error.hpp"
#include "conceptlm/gateway.hpp"

namespace conceptlm {

/// OpenAI-compatible chat-completions request body.
inline nlohmann::json build_chat_request(const CompletionRequest& req, bool request_logprobs = true) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : req.messages) messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  nlohmann::json body = {{"model", req.model.name},
                         {"messages", std::move(messages)},
                         {"max_tokens", req.model.max_response_tokens}};
  if (req.model.temperature) body["temperature"] = *req.model.temperature;
  if (request_logprobs) body["logprobs"] = true;
  return body;
}

/// Reads text, usage and per-token log-probabilities (as probabilities) from
/// a chat-completions response body.
inline BackendReply parse_chat_response(std::string_view body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw MalformedPayloadError("response is not a JSON object");
  try {
    const auto& choice = j.at("choices").at(0);
    BackendReply reply;
    const auto& content = choice.at("message").at("content");
    reply.text = content.is_null() ? std::string() : content.get<std::string>();
    if (j.contains("usage") && j["usage"].is_object()) {
      reply.usage = Usage{j["usage"].at("prompt_tokens").get<std::size_t>(),
                          j["usage"].at("completion_tokens").get<std::size_t>()};
    }
    if (choice.contains("logprobs") && choice["logprobs"].is_object() && choice["logprobs"].contains("content") &&
        choice["logprobs"]["content"].is_array()) {
      std::vector<double> probs;
      for (const auto& tok : choice["logprobs"]["content"]) probs.push_back(std::exp(tok.at("logprob").get<double>()));
      reply.token_probabilities = std::move(probs);
    }
    return reply;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedPayloadError(std::string("unexpected chat-completions payload: ") + e.what());
  }
}

struct HttpBackendConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key;
  bool request_logprobs = true;
  std::chrono::seconds timeout{300};
};

class OpenAiHttpBackend : public Backend {
 public:
  explicit OpenAiHttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config_.base_url, m, kUrl)) throw PreconditionError("invalid base URL " + config_.base_url);
    origin_ = m[1].str();
    std::string prefix = m[2].str();
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    path_ = prefix + "/chat/completions";
  }

  std::string id() const override { return "http:" + origin_; }

  const std::string& endpoint_path() const noexcept { return path_; }

  BackendReply send(const CompletionRequest& request) override {
    httplib::Client client(origin_);
    client.set_connection_timeout(std::chrono::seconds(30));
    client.set_read_timeout(config_.timeout);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
    const auto body = build_chat_request(request, config_.request_logprobs).dump();
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) throw TransportError("request to " + origin_ + path_ + " failed: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500) {
      throw TransportError("HTTP " + std::to_string(res->status) + " from " + origin_);
    }
    if (res->status != 200) throw BackendError("HTTP " + std::to_string(res->status) + ": " + res->body);
    return parse_chat_response(res->body);
  }

 private:
  HttpBackendConfig config_;
  std::string origin_;
  std::string path_;
};

}  // namespace conceptlm
