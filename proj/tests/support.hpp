#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "conceptlm/concept_graph.hpp"
#include "conceptlm/gateway.hpp"

namespace testing_support {

inline std::filesystem::path data_dir() { return CONCEPTLM_DATA_DIR; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("conceptlm-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string node_name(std::size_t i) { return "n" + std::to_string(i); }

inline conceptlm::Concept make_concept(const std::string& id) { return {id, "Title " + id, "Body of " + id, {}, {}}; }

/// Random DAG: edges only go from a lower to a higher position in a shuffled
/// ordering, so no cycle is possible.
inline conceptlm::ConceptGraph random_dag(std::mt19937& rng, std::size_t max_nodes, double density = 0.3) {
  std::uniform_int_distribution<std::size_t> size(1, max_nodes);
  const auto n = size(rng);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<conceptlm::Concept> nodes;
  for (std::size_t i = 0; i < n; ++i) nodes.push_back(make_concept(node_name(i)));
  std::bernoulli_distribution coin(density);
  std::vector<conceptlm::ConceptEdge> edges;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (coin(rng)) edges.push_back({node_name(perm[a]), node_name(perm[b]), std::nullopt});
    }
  }
  return {std::move(nodes), std::move(edges)};
}

/// Random directed graph without self-loops; may contain cycles.
inline std::pair<std::size_t, std::vector<std::pair<std::size_t, std::size_t>>> random_digraph(std::mt19937& rng,
                                                                                                  std::size_t max_nodes) {
  std::uniform_int_distribution<std::size_t> size(1, max_nodes);
  const auto n = size(rng);
  std::uniform_real_distribution<double> density(0.0, 0.35);
  std::bernoulli_distribution coin(density(rng));
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (a != b && coin(rng)) edges.emplace_back(a, b);
    }
  }
  return {n, edges};
}

inline conceptlm::ConceptGraph to_graph(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<conceptlm::Concept> nodes;
  for (std::size_t i = 0; i < n; ++i) nodes.push_back(make_concept(node_name(i)));
  std::vector<conceptlm::ConceptEdge> e;
  for (auto [a, b] : edges) e.push_back({node_name(a), node_name(b), std::nullopt});
  return {std::move(nodes), std::move(e)};
}

/// Fails the test on any contact.
class FailOnContactBackend : public conceptlm::Backend {
 public:
  std::string id() const override { return "fail-on-contact"; }
  conceptlm::BackendReply send(const conceptlm::CompletionRequest&) override {
    ++contacts;
    throw conceptlm::BackendError("backend contacted during a dry run");
  }
  std::atomic<int> contacts{0};
};

/// Forwards to another backend and counts calls.
class CountingBackend : public conceptlm::Backend {
 public:
  explicit CountingBackend(std::shared_ptr<conceptlm::Backend> inner) : inner_(std::move(inner)) {}
  std::string id() const override { return inner_->id(); }
  conceptlm::BackendReply send(const conceptlm::CompletionRequest& r) override {
    ++calls;
    return inner_->send(r);
  }
  std::atomic<std::size_t> calls{0};

 private:
  std::shared_ptr<conceptlm::Backend> inner_;
};

}  // namespace testing_support
