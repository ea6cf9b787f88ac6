#pragma once

#include <map>
#include <string>
#include <vector>

#include "conceptlm/concept_graph.hpp"
#include "conceptlm/error.hpp"
#include "conceptlm/gateway.hpp"
#include "conceptlm/parallel.hpp"

namespace conceptlm {

struct ProbeSettings {
  std::size_t trials = 5;
  double threshold = 0.8;
  std::size_t parallelism = 1;
  RetryPolicy retry;
};

struct ProbeOutcome {
  KnownSet known;
  std::map<std::string, double> scores;  // every probed concept, known or not
  std::vector<std::string> skipped;      // concepts without probes; treated as missing
};

/// Asks each concept's probe questions `trials` times in fresh conversations.
/// A concept counts as base knowledge when the fraction of correct answers
/// reaches `threshold`.
inline ProbeOutcome probe_known_set(const ConceptGraph& graph, Backend& backend, const ModelSpec& spec,
                                    const ProbeSettings& settings = {}) {
  if (settings.trials < 1) throw PreconditionError("probe trials must be >= 1");
  if (!(settings.threshold > 0.0 && settings.threshold <= 1.0)) {
    throw PreconditionError("probe threshold must be in (0, 1]");
  }

  ProbeOutcome outcome;
  std::vector<const Concept*> probed;
  for (const auto& c : graph.nodes()) {
    if (c.probes.empty()) {
      outcome.skipped.push_back(c.id);
    } else {
      probed.push_back(&c);
    }
  }

  std::vector<double> scores(probed.size(), 0.0);
  parallel_for(probed.size(), settings.parallelism, [&](std::size_t i) {
    const Concept& c = *probed[i];
    std::size_t correct = 0, total = 0;
    for (std::size_t p = 0; p < c.probes.size(); ++p) {
      for (std::size_t trial = 0; trial < settings.trials; ++trial) {
        RequestTag tag{"probe", p, c.probes.size(), trial, c.id};
        auto reply = complete({{Role::user, c.probes[p].question}}, spec, backend, tag, settings.retry);
        correct += c.probes[p].match.matches(reply.text) ? 1 : 0;
        ++total;
      }
    }
    scores[i] = static_cast<double>(correct) / static_cast<double>(total);
  });

  for (std::size_t i = 0; i < probed.size(); ++i) {
    outcome.scores[probed[i]->id] = scores[i];
    if (scores[i] >= settings.threshold) outcome.known.add_probed(probed[i]->id, scores[i]);
  }
  return outcome;
}

}  // namespace conceptlm
