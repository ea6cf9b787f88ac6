#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "conceptlm/digest.hpp"
#include "conceptlm/error.hpp"
#include "conceptlm/gateway.hpp"
#include "conceptlm/text.hpp"

namespace conceptlm {

/// Canonical request form; its SHA-256 names the cassette file.
inline nlohmann::json canonical_request(const CompletionRequest& req) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : req.messages) messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return {{"model", req.model.to_json()}, {"messages", std::move(messages)}, {"tag", req.tag.to_json()}};
}

inline std::string request_digest(const CompletionRequest& req) { return sha256_hex(canonical_request(req).dump()); }

/// Writes `content` to `path` through a sibling temporary file and rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw Error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Record mode forwards to `inner` and stores every exchange; replay mode
/// serves stored replies for byte-identical requests and fails on a miss.
class CassetteBackend : public Backend {
 public:
  enum class Mode { record, replay };

  static std::unique_ptr<CassetteBackend> recording(std::unique_ptr<Backend> inner, std::filesystem::path dir) {
    std::filesystem::create_directories(dir);
    return std::unique_ptr<CassetteBackend>(new CassetteBackend(Mode::record, std::move(inner), std::move(dir)));
  }

  static std::unique_ptr<CassetteBackend> replaying(std::filesystem::path dir) {
    return std::unique_ptr<CassetteBackend>(new CassetteBackend(Mode::replay, nullptr, std::move(dir)));
  }

  std::string id() const override { return mode_ == Mode::record ? "record:" + inner_->id() : "replay"; }
  bool is_replay() const override { return mode_ == Mode::replay; }

  std::size_t count_prompt_tokens(const std::vector<Message>& messages) const override {
    return inner_ ? inner_->count_prompt_tokens(messages) : Backend::count_prompt_tokens(messages);
  }

  BackendReply send(const CompletionRequest& request) override {
    const auto canonical = canonical_request(request);
    const auto digest = sha256_hex(canonical.dump());
    const auto path = dir_ / (digest + ".json");
    if (mode_ == Mode::record) {
      auto reply = inner_->send(request);
      nlohmann::json r = {{"text", reply.text}};
      if (reply.usage) r["usage"] = {{"prompt_tokens", reply.usage->prompt_tokens},
                                     {"completion_tokens", reply.usage->completion_tokens}};
      if (reply.token_probabilities) r["probabilities"] = *reply.token_probabilities;
      write_file_atomic(path, nlohmann::json{{"digest", digest}, {"request", canonical}, {"reply", r}}.dump(2));
      return reply;
    }

    if (!std::filesystem::exists(path)) throw CassetteMissError(digest);
    nlohmann::json stored;
    try {
      stored = nlohmann::json::parse(text::read_file(path.string()));
      if (stored.at("request") != canonical) throw CassetteCorruptError("cassette " + digest + " holds a different request");
      BackendReply reply;
      const auto& r = stored.at("reply");
      reply.text = r.at("text").get<std::string>();
      if (r.contains("usage")) {
        reply.usage = Usage{r["usage"].at("prompt_tokens").get<std::size_t>(),
                            r["usage"].at("completion_tokens").get<std::size_t>()};
      }
      if (r.contains("probabilities")) reply.token_probabilities = r["probabilities"].get<std::vector<double>>();
      reply.simulated_seconds = 0.0;
      return reply;
    } catch (const nlohmann::json::exception& e) {
      throw CassetteCorruptError("cassette " + digest + " is corrupt: " + e.what());
    }
  }

 private:
  CassetteBackend(Mode mode, std::unique_ptr<Backend> inner, std::filesystem::path dir)
      : mode_(mode), inner_(std::move(inner)), dir_(std::move(dir)) {}

  Mode mode_;
  std::unique_ptr<Backend> inner_;
  std::filesystem::path dir_;
};

}  // namespace conceptlm
