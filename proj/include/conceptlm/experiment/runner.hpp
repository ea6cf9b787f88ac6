#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptlm/cassette.hpp"
#include "conceptlm/concept_graph.hpp"
#include "conceptlm/digest.hpp"
#include "conceptlm/experiment/config.hpp"
#include "conceptlm/experiment/journal.hpp"
#include "conceptlm/gateway.hpp"
#include "conceptlm/metrics.hpp"
#include "conceptlm/parallel.hpp"
#include "conceptlm/pdm/annotations.hpp"
#include "conceptlm/pdm/evaluation.hpp"
#include "conceptlm/pdm/extract.hpp"
#include "conceptlm/pdm/schema.hpp"
#include "conceptlm/probe.hpp"
#include "conceptlm/strategies.hpp"
#include "conceptlm/templates.hpp"

namespace conceptlm::experiment {

/// Returns the backend serving one model. Called once per model that still
/// has pending work; the backend must tolerate concurrent `send` calls.
using BackendFactory = std::function<std::shared_ptr<Backend>(const ModelSpec&)>;

struct RunnerOptions {
  std::filesystem::path out_dir;
  std::optional<std::size_t> parallelism;  // overrides the config
  std::optional<std::size_t> limit;        // stop after this many new records
  RetryPolicy retry;
  std::function<std::string()> clock = pdm::utc_timestamp;
};

struct RunSummary {
  std::size_t total = 0;
  std::size_t completed = 0;
  std::size_t failed = 0;
  std::size_t pending = 0;
  std::size_t executed = 0;  // records produced by this invocation
};

inline const char* kJournalFile = "journal.jsonl";

/// Model-major, then SCM, domain and sample.
inline std::vector<pdm::SampleProvenance> enumerate_grid(const ExperimentConfig& config) {
  std::vector<pdm::SampleProvenance> out;
  out.reserve(config.grid_size());
  for (const auto& m : config.models) {
    for (auto scm : config.scms) {
      for (const auto& d : config.domains) {
        for (std::size_t s = 0; s < config.samples_per_cell; ++s) out.push_back({m.name, to_string(scm), d, s});
      }
    }
  }
  return out;
}

inline std::string transcript_file_for(const pdm::SampleProvenance& p) {
  return "transcripts/" + sha256_hex(p.sample_id()).substr(0, 16) + ".json";
}

/// Fenced JSON documents shown anywhere in a plan, for the parroting check.
inline std::vector<pdm::ExemplarDocument> plan_exemplar_documents(const PromptPlan& plan,
                                                                  const std::vector<std::string>& domain_terms) {
  std::vector<pdm::ExemplarDocument> out;
  for (std::size_t t = 0; t < plan.turns.size(); ++t) {
    auto docs = pdm::fenced_documents(plan.turns[t].content);
    for (std::size_t k = 0; k < docs.size(); ++k) {
      out.push_back({std::move(docs[k]), domain_terms, "turn" + std::to_string(t) + "#" + std::to_string(k)});
    }
  }
  return out;
}

/// Inputs shared by every record of a run.
struct RunContext {
  ExperimentConfig config;
  ConceptGraph graph;
  pdm::PdmSchema schema;
  TemplateSet templates;
  std::optional<ExemplarPair> icl;
  std::vector<ExemplarPair> cot;

  static RunContext load(const ExperimentConfig& config) {
    auto read = [&](const std::filesystem::path& p) {
      auto full = config.resolve(p);
      if (!std::filesystem::exists(full)) throw ConfigError("file not found: " + full.string());
      return text::read_file(full.string());
    };
    RunContext ctx{config, load_graph(read(config.graph)), pdm::PdmSchema{}, TemplateSet{}, std::nullopt, {}};
    auto schema_json = nlohmann::json::parse(read(*config.schema), nullptr, false);
    if (schema_json.is_discarded()) throw ConfigError("schema file is not valid JSON");
    ctx.schema = pdm::PdmSchema::from_json(schema_json);
    if (config.template_dir) ctx.templates = TemplateSet::from_directory(config.resolve(*config.template_dir));
    if (config.icl_exemplar) ctx.icl = load_exemplar_pairs(config.resolve(*config.icl_exemplar)).front();
    if (config.cot_exemplars) ctx.cot = load_exemplar_pairs(config.resolve(*config.cot_exemplars));
    return ctx;
  }
};

namespace detail {

// Known set of one model: asserted, or probed once and cached in the run
// directory so a resumed run does not probe again.
inline KnownSet known_set_for(const RunContext& ctx, const ModelSpec& model, Backend* backend,
                              const std::filesystem::path& out_dir, const RetryPolicy& retry) {
  KnownSet known;
  for (const auto& id : ctx.config.known_asserted) known.add_asserted(id);
  if (!ctx.config.probe) return known;

  const auto cache = out_dir / ("known-" + sha256_hex(model.name).substr(0, 12) + ".json");
  if (std::filesystem::exists(cache)) {
    auto j = nlohmann::json::parse(text::read_file(cache.string()));
    for (const auto& [id, score] : j.at("scores").items()) {
      if (score.get<double>() >= ctx.config.probe->threshold) known.add_probed(id, score.get<double>());
    }
    return known;
  }
  if (!backend) throw PreconditionError("probing needs a backend");
  auto settings = *ctx.config.probe;
  settings.retry = retry;
  auto outcome = probe_known_set(ctx.graph, *backend, model, settings);
  for (const auto& [id, prov] : outcome.known.entries()) known.add_probed(id, prov.score);
  nlohmann::json j = {{"model", model.name}, {"scores", outcome.scores}, {"skipped", outcome.skipped}};
  write_file_atomic(cache, j.dump(2) + "\n");
  return known;
}

}  // namespace detail

struct CellPlan {
  PromptPlan plan;
  ConceptualProblem problem;
  std::vector<pdm::ExemplarDocument> exemplars;
};

/// Plans of one model keyed by (scm, domain).
inline std::map<std::pair<std::string, std::string>, CellPlan> cell_plans(const RunContext& ctx, const ModelSpec&,
                                                                          const KnownSet& known) {
  PlanMaterials materials;
  materials.graph = &ctx.graph;
  materials.known = known;
  materials.icl_exemplar = ctx.icl;
  materials.cot_pairs = ctx.cot;
  materials.cot_step_by_step = ctx.config.cot_step_by_step;
  materials.templates = ctx.templates;
  std::map<std::pair<std::string, std::string>, CellPlan> out;
  for (auto scm : ctx.config.scms) {
    for (const auto& domain : ctx.config.domains) {
      auto cp = ConceptualProblem::from_template(ctx.config.query_template, ctx.config.query_vars, domain);
      cp.expected = ctx.config.expected;
      auto plan = build_plan(scm, cp, materials);
      auto exemplars = plan_exemplar_documents(plan, ctx.config.exemplar_domains);
      out.emplace(std::make_pair(to_string(scm), domain),
                  CellPlan{std::move(plan), std::move(cp), std::move(exemplars)});
    }
  }
  return out;
}

/// Known set a finished run used for `model`; never probes.
inline KnownSet recorded_known_set(const RunContext& ctx, const ModelSpec& model, const std::filesystem::path& run_dir) {
  return detail::known_set_for(ctx, model, nullptr, run_dir, {});
}

inline pdm::EvaluationRecord evaluate_transcript(const RunContext& ctx, const CellPlan& cell,
                                                 const pdm::SampleProvenance& prov, const Transcript& transcript) {
  pdm::EvaluationSettings settings{&ctx.schema, cell.exemplars, {prov.domain}, ctx.config.parroting_threshold};
  return pdm::evaluate_response(transcript.final_response(), prov, settings);
}

/// Runs every grid cell not yet in the journal of `options.out_dir`. Records
/// are appended in enumeration order whatever the parallelism, so equal
/// configs give equal journals.
inline RunSummary run_experiment(const ExperimentConfig& config, const BackendFactory& factory,
                                 const RunnerOptions& options) {
  namespace fs = std::filesystem;
  config.validate();
  const auto out = options.out_dir;
  fs::create_directories(out / "transcripts");

  const auto digest = config.digest();
  const auto snapshot = out / "config.json";
  if (fs::exists(snapshot)) {
    auto previous = nlohmann::json::parse(text::read_file(snapshot.string()), nullptr, false);
    if (previous.is_discarded() || sha256_hex(previous.dump()) != digest) {
      throw ConfigError("output directory " + out.string() + " holds a run of a different config");
    }
  } else {
    write_file_atomic(snapshot, config.raw.dump(2) + "\n");
  }
  if (!config.source.empty()) {
    nlohmann::json meta = {{"config_path", fs::absolute(config.source).string()}, {"config_digest", digest}};
    write_file_atomic(out / "run.json", meta.dump(2) + "\n");
  }

  const auto journal_path = out / kJournalFile;
  auto existing = read_journal(journal_path, true);
  std::set<pdm::SampleProvenance> done;
  for (const auto& r : existing) {
    if (r.config_digest != digest) throw ConfigError("journal was written by a different config");
    done.insert(r.provenance);
  }

  const auto grid = enumerate_grid(config);
  std::vector<pdm::SampleProvenance> pending;
  for (const auto& p : grid) {
    if (!done.count(p)) pending.push_back(p);
  }
  if (options.limit && pending.size() > *options.limit) pending.resize(*options.limit);

  RunSummary summary;
  summary.total = grid.size();
  auto count_done = [&](const std::vector<RunRecord>& records) {
    std::set<pdm::SampleProvenance> seen;
    for (const auto& r : records) {
      if (!seen.insert(r.provenance).second) continue;
      (r.status == RecordStatus::completed ? summary.completed : summary.failed) += 1;
    }
  };
  if (pending.empty()) {
    count_done(existing);
    summary.pending = summary.total - summary.completed - summary.failed;
    return summary;
  }

  auto ctx = RunContext::load(config);

  // Backends and plans for every model with pending work, before any record runs.
  std::map<std::string, std::shared_ptr<Backend>> backends;
  std::map<std::tuple<std::string, std::string, std::string>, CellPlan> plans;
  for (const auto& model : config.models) {
    bool needed = false;
    for (const auto& p : pending) needed = needed || p.model == model.name;
    if (!needed) continue;
    auto backend = factory(model);
    if (!backend) throw PreconditionError("backend factory returned nothing for " + model.name);
    backends[model.name] = backend;

    auto known = detail::known_set_for(ctx, model, backend.get(), out, options.retry);
    for (auto& [key, cell] : cell_plans(ctx, model, known)) {
      plans.emplace(std::make_tuple(model.name, key.first, key.second), std::move(cell));
    }
  }
  std::map<std::string, const ModelSpec*> specs;
  for (const auto& m : config.models) specs[m.name] = &m;

  JournalWriter journal(journal_path);
  std::vector<std::optional<RunRecord>> finished(pending.size());
  std::size_t next_commit = 0;
  std::mutex commit_mutex;

  auto execute = [&](std::size_t i) {
    const auto& prov = pending[i];
    const auto& cell = plans.at(std::make_tuple(prov.model, prov.scm, prov.domain));
    const auto& spec = *specs.at(prov.model);

    RunRecord record;
    record.provenance = prov;
    record.config_digest = digest;
    record.template_version = cell.plan.template_version;
    record.transcript_file = transcript_file_for(prov);
    record.evaluation.provenance = prov;

    RunOptions run_options;
    run_options.tag = RequestTag{prov.scm, 0, 1, prov.sample, prov.domain};
    run_options.retry = options.retry;
    Transcript transcript;
    try {
      transcript = run_plan(cell.plan, spec, *backends.at(prov.model), run_options);
    } catch (const Error& e) {
      transcript.scm = prov.scm;
      transcript.model = prov.model;
      transcript.planned_turns = cell.plan.turns.size();
      transcript.template_version = cell.plan.template_version;
      transcript.failure = e.what();
    }
    write_file_atomic(out / record.transcript_file, to_json(transcript).dump(2) + "\n");
    record.metrics = measure(transcript, cell.problem.expected);

    if (transcript.complete) {
      record.evaluation = evaluate_transcript(ctx, cell, prov, transcript);
    } else {
      record.status = RecordStatus::failed;
      record.error = transcript.failure.value_or("incomplete transcript");
    }
    record.recorded_at = options.clock();

    std::lock_guard lock(commit_mutex);
    finished[i] = std::move(record);
    while (next_commit < finished.size() && finished[next_commit]) {
      journal.append(*finished[next_commit]);
      finished[next_commit].reset();
      ++next_commit;
    }
  };

  const auto limit = options.parallelism.value_or(config.parallelism);
  parallel_for(pending.size(), limit, execute);

  summary.executed = next_commit;
  count_done(read_journal(journal_path));
  summary.pending = summary.total - summary.completed - summary.failed;
  return summary;
}

/// Script file of a mock backend config, resolved against the config directory.
inline std::optional<std::filesystem::path> mock_script_path(const ExperimentConfig& config) {
  if (config.backend.value("kind", "mock") != "mock" || !config.backend.contains("script")) return std::nullopt;
  return config.resolve(config.backend["script"].get<std::string>());
}

}  // namespace conceptlm::experiment
