#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "conceptlm/aiw.hpp"
#include "conceptlm/cassette.hpp"
#include "conceptlm/concept_graph.hpp"
#include "conceptlm/experiment/aggregate.hpp"
#include "conceptlm/experiment/config.hpp"
#include "conceptlm/experiment/journal.hpp"
#include "conceptlm/experiment/report.hpp"
#include "conceptlm/experiment/runner.hpp"
#include "conceptlm/http_backend.hpp"
#include "conceptlm/mock_backend.hpp"
#include "conceptlm/pdm/annotations.hpp"
#include "conceptlm/pdm/extract.hpp"
#include "conceptlm/probe.hpp"
#include "conceptlm/strategies.hpp"

namespace conceptlm::cli {

enum ExitCode : int {
  kOk = 0,
  kRecordsFailed = 1,
  kUsage = 2,
  kMissingInput = 3,
  kMissingApiKey = 4,
  kValidation = 5,
  kRuntime = 6,
};

/// Settings that pick a backend. Empty fields fall back to the config file.
struct BackendChoice {
  std::string kind;  // mock, http, replay
  std::optional<std::filesystem::path> script;
  std::optional<std::filesystem::path> cassettes;
  std::string base_url;
  std::string api_key_env = "OPENAI_API_KEY";
};

/// Builds a backend for one model from a resolved choice.
using BackendMaker = std::function<std::shared_ptr<Backend>(const BackendChoice&, const ModelSpec&)>;

struct Environment {
  std::istream* in = &std::cin;
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
  std::function<std::optional<std::string>(const std::string&)> getenv = [](const std::string& name) {
    const char* v = std::getenv(name.c_str());
    return v ? std::optional<std::string>(v) : std::nullopt;
  };
  BackendMaker make_backend;  // empty: the real mock / http / replay backends
};

class MissingApiKey : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::string read_input(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw ConfigError("file not found: " + p.string());
  return text::read_file(p.string());
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  auto j = nlohmann::json::parse(read_input(p), nullptr, false);
  if (j.is_discarded()) throw SchemaError(p.string() + " is not valid JSON");
  return j;
}

// Fills unset choice fields from a config's "backend" object.
inline BackendChoice resolve_choice(BackendChoice choice, const experiment::ExperimentConfig* config) {
  if (config) {
    const auto& b = config->backend;
    if (choice.kind.empty()) choice.kind = b.value("kind", "mock");
    if (!choice.script && b.contains("script")) choice.script = config->resolve(b["script"].get<std::string>());
    if (!choice.cassettes && b.contains("cassettes")) choice.cassettes = config->resolve(b["cassettes"].get<std::string>());
    if (choice.base_url.empty()) choice.base_url = b.value("base_url", "");
    if (b.contains("api_key_env") && choice.api_key_env == "OPENAI_API_KEY") choice.api_key_env = b["api_key_env"].get<std::string>();
  }
  if (choice.kind.empty()) choice.kind = "mock";
  if (choice.kind != "mock" && choice.kind != "http" && choice.kind != "replay") {
    throw ConfigError("unknown backend kind '" + choice.kind + "'");
  }
  return choice;
}

// Checks everything a backend needs before any work starts.
inline void preflight(const BackendChoice& choice, const Environment& env) {
  if (choice.kind == "http") {
    auto key = env.getenv(choice.api_key_env);
    if (!key || key->empty()) throw MissingApiKey("environment variable " + choice.api_key_env + " is not set");
  } else if (choice.kind == "mock") {
    if (!choice.script) throw ConfigError("mock backend needs a script");
    if (!std::filesystem::exists(*choice.script)) throw ConfigError("file not found: " + choice.script->string());
  } else if (choice.kind == "replay") {
    if (!choice.cassettes) throw ConfigError("replay backend needs a cassette directory");
    if (!std::filesystem::is_directory(*choice.cassettes)) {
      throw ConfigError("cassette directory not found: " + choice.cassettes->string());
    }
  }
}

inline std::shared_ptr<Backend> default_backend(const BackendChoice& choice, const Environment& env) {
  if (choice.kind == "mock") return std::make_shared<MockBackend>(read_json(*choice.script));
  if (choice.kind == "replay") return CassetteBackend::replaying(*choice.cassettes);
  HttpBackendConfig http;
  if (!choice.base_url.empty()) http.base_url = choice.base_url;
  http.api_key = env.getenv(choice.api_key_env).value_or("");
  auto backend = std::make_unique<OpenAiHttpBackend>(http);
  if (choice.cassettes) return CassetteBackend::recording(std::move(backend), *choice.cassettes);
  return backend;
}

inline std::shared_ptr<Backend> make_backend(const BackendChoice& choice, const ModelSpec& model, const Environment& env) {
  if (env.make_backend) return env.make_backend(choice, model);
  return default_backend(choice, env);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands

inline int graph_validate(const std::filesystem::path& graph_path, const std::optional<std::filesystem::path>& known,
                          std::ostream& out) {
  std::vector<std::string> warnings;
  auto graph = load_graph(detail::read_input(graph_path), &warnings);
  auto report = validate_acyclic(graph);
  out << "graph: " << graph_path.string() << "\n";
  out << "nodes: " << graph.nodes().size() << ", edges: " << graph.edges().size() << "\n";
  out << "sources: " << text::join(graph.sources(), ", ") << "\n";
  out << "sinks: " << text::join(report.sinks, ", ") << "\n";
  for (const auto& w : warnings) out << "warning: " << w << "\n";
  for (const auto& cycle : report.cycles) out << "cycle: " << text::join(cycle, " -> ") << "\n";
  if (known) {
    auto known_set = KnownSet::from_json(detail::read_json(*known));
    auto missing = subtract_known(graph, known_set);
    out << "missing: " << missing.size() << " of " << graph.nodes().size() << "\n";
    if (report.ok && report.sinks.size() == 1) {
      std::vector<std::string> order;
      for (const auto& step : chain_order(missing)) order.push_back(step.node.id);
      out << "chain: " << text::join(order, " -> ") << "\n";
    }
  }
  out << (report.ok ? "ok" : "invalid: graph has cycles") << "\n";
  return report.ok ? kOk : kValidation;
}

inline void print_plan(const PromptPlan& plan, std::ostream& out) {
  out << "scm: " << to_string(plan.scm) << "\n";
  out << "turns: " << plan.turns.size() << "\n";
  out << "template_version: " << plan.template_version << "\n";
  for (const auto& w : plan.warnings) out << "warning: " << w << "\n";
  for (std::size_t i = 0; i < plan.turns.size(); ++i) {
    const auto& t = plan.turns[i];
    out << "\n--- turn " << i + 1 << "/" << plan.turns.size() << " [" << to_string(t.kind);
    if (t.concept_id) out << ": " << *t.concept_id;
    out << "] ---\n" << t.content << "\n";
  }
}

struct ChainOptions {
  std::string scm;
  std::optional<std::filesystem::path> graph;
  std::optional<std::filesystem::path> known;
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> template_dir;
  std::string query;
  bool json = false;
};

/// Renders a plan without contacting any backend. Without a graph or config
/// the bundled sibling puzzle is used.
inline PromptPlan chain_plan(const ChainOptions& o) {
  const auto scm = parse_scm(o.scm);
  PlanMaterials materials;
  std::optional<ConceptGraph> graph;
  std::optional<ConceptualProblem> cp;
  if (o.config) {
    auto config = experiment::ExperimentConfig::from_file(*o.config);
    auto ctx = experiment::RunContext::load(config);
    graph = ctx.graph;
    for (const auto& id : config.known_asserted) materials.known.add_asserted(id);
    materials.icl_exemplar = ctx.icl;
    materials.cot_pairs = ctx.cot;
    materials.cot_step_by_step = config.cot_step_by_step;
    materials.templates = ctx.templates;
    cp = ConceptualProblem::from_template(config.query_template, config.query_vars, config.domains.front());
  } else if (o.graph) {
    graph = load_graph(detail::read_input(*o.graph));
  } else {
    graph = aiw::graph();
    materials.known.add_asserted("counting");
    materials.icl_exemplar = aiw::icl_exemplar();
    materials.cot_pairs = aiw::cot_exemplars();
    cp = aiw::problem();
  }
  if (o.known) materials.known = KnownSet::from_json(detail::read_json(*o.known));
  if (o.template_dir) materials.templates = TemplateSet::from_directory(*o.template_dir);
  if (!o.query.empty()) cp = ConceptualProblem::make(o.query);
  if (!cp) throw PreconditionError("--query is required with --graph");
  materials.graph = &*graph;
  return build_plan(scm, *cp, materials);
}

struct RunCommand {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::size_t> parallel;
  std::optional<std::size_t> limit;
  BackendChoice backend;
};

inline std::filesystem::path run_directory(const experiment::ExperimentConfig& config,
                                           const std::optional<std::filesystem::path>& out) {
  if (out) return *out;
  if (config.output) return config.resolve(*config.output);
  return config.base_dir / "runs" / config.name;
}

inline int run(const RunCommand& c, const Environment& env) {
  auto config = experiment::ExperimentConfig::from_file(c.config);
  auto choice = detail::resolve_choice(c.backend, &config);
  detail::preflight(choice, env);
  experiment::RunnerOptions options;
  options.out_dir = run_directory(config, c.out);
  options.parallelism = c.parallel;
  options.limit = c.limit;
  auto factory = [&](const ModelSpec& m) { return detail::make_backend(choice, m, env); };
  auto summary = experiment::run_experiment(config, factory, options);
  *env.out << "run directory: " << options.out_dir.string() << "\n"
           << "records: " << summary.total << " total, " << summary.completed << " completed, " << summary.failed
           << " failed, " << summary.pending << " pending (" << summary.executed << " executed now)\n";
  return summary.failed > 0 ? kRecordsFailed : kOk;
}

inline std::filesystem::path config_of_run(const std::filesystem::path& run_dir,
                                           const std::optional<std::filesystem::path>& config) {
  if (config) return *config;
  auto meta = run_dir / "run.json";
  if (!std::filesystem::exists(meta)) throw ConfigError("no run.json in " + run_dir.string() + "; pass --config");
  return detail::read_json(meta).at("config_path").get<std::string>();
}

/// Recomputes theta_C1 to theta_C3 for every completed record and writes them
/// to the run's evaluation file.
inline int evaluate(const std::filesystem::path& run_dir, const std::optional<std::filesystem::path>& config_path,
                    std::ostream& out) {
  auto config = experiment::ExperimentConfig::from_file(config_of_run(run_dir, config_path));
  auto ctx = experiment::RunContext::load(config);
  auto records = experiment::read_journal(run_dir / experiment::kJournalFile);
  if (records.empty()) throw ConfigError("no records in " + (run_dir / experiment::kJournalFile).string());

  std::map<std::string, std::map<std::pair<std::string, std::string>, experiment::CellPlan>> plans;
  std::string lines;
  std::size_t evaluated = 0;
  for (const auto& r : records) {
    if (r.status != experiment::RecordStatus::completed) continue;
    const auto& p = r.provenance;
    if (!plans.count(p.model)) {
      const ModelSpec* spec = nullptr;
      for (const auto& m : config.models) spec = m.name == p.model ? &m : spec;
      if (!spec) throw ConfigError("journal names model '" + p.model + "' that the config lacks");
      plans[p.model] = experiment::cell_plans(ctx, *spec, experiment::recorded_known_set(ctx, *spec, run_dir));
    }
    auto transcript = transcript_from_json(detail::read_json(run_dir / r.transcript_file));
    auto e = experiment::evaluate_transcript(ctx, plans[p.model].at({p.scm, p.domain}), p, transcript);
    lines += pdm::to_json(e).dump() + "\n";
    ++evaluated;
  }
  write_file_atomic(run_dir / experiment::kEvaluationFile, lines);

  auto current = experiment::current_evaluations(records, run_dir);
  auto agg = experiment::aggregate(records, &current);
  out << "evaluated " << evaluated << " records\n";
  out << fmt::format("{:<20} {:<7} {:>8} {:>8} {:>8}\n", "model", "scm", "C1", "C2", "C3");
  for (const auto& model : agg.models) {
    for (const auto& scm : agg.scms) {
      const auto* cell = agg.cell(model, scm);
      if (!cell) continue;
      auto mean = [&](const char* key) {
        const auto& s = cell->metrics.at(key);
        return s.n ? fmt::format("{:.3f}", s.mean) : std::string("n/a");
      };
      out << fmt::format("{:<20} {:<7} {:>8} {:>8} {:>8}\n", model, scm, mean("theta_c1"), mean("theta_c2"),
                         mean("theta_c3"));
    }
  }
  return kOk;
}

/// Interactive KPI scoring of every sample with extracted JSON.
inline int annotate(const std::filesystem::path& run_dir, const std::string& annotator, const Environment& env) {
  auto records = experiment::read_journal(run_dir / experiment::kJournalFile);
  auto current = experiment::current_evaluations(records, run_dir);
  std::vector<pdm::PendingSample> pending;
  for (const auto& r : records) {
    if (r.status != experiment::RecordStatus::completed) continue;
    const auto& e = current.at(r.provenance.sample_id());
    if (e.theta_c1 != 1) continue;
    auto transcript = transcript_from_json(detail::read_json(run_dir / r.transcript_file));
    auto doc = pdm::extract_json(transcript.final_response());
    if (!doc) continue;
    pending.push_back({r.provenance.sample_id(), doc->value.dump(2)});
  }
  auto written = pdm::annotate_session(pending, run_dir / experiment::kAnnotationFile, annotator, *env.in, *env.out);
  // Surface malformed rows now rather than at report time.
  experiment::current_evaluations(records, run_dir);
  *env.out << written << " sample(s) annotated\n";
  return kOk;
}

inline int report(const std::filesystem::path& run_dir, const std::optional<std::filesystem::path>& out_dir,
                  std::ostream& out) {
  auto records = experiment::read_journal(run_dir / experiment::kJournalFile);
  if (records.empty()) throw ConfigError("no records in " + (run_dir / experiment::kJournalFile).string());
  std::vector<pdm::AuditEntry> audit;
  auto current = experiment::current_evaluations(records, run_dir, &audit);
  auto agg = experiment::aggregate(records, &current);
  const auto dir = out_dir.value_or(run_dir / "report");
  for (const auto& p : experiment::emit_report(agg, dir)) out << p.string() << "\n";
  if (!audit.empty()) out << audit.size() << " sample(s) re-annotated\n";
  return kOk;
}

inline int demo_aiw(const BackendChoice& requested, const Environment& env) {
  auto choice = requested;
  if (choice.kind.empty()) choice.kind = "mock";
  ModelSpec spec{"demo-model"};
  std::shared_ptr<Backend> backend;
  if (env.make_backend) {
    backend = env.make_backend(choice, spec);
  } else if (choice.kind == "mock" && !choice.script) {
    backend = std::make_shared<MockBackend>(aiw::mock_script());
  } else {
    choice = detail::resolve_choice(choice, nullptr);
    detail::preflight(choice, env);
    backend = detail::default_backend(choice, env);
  }
  auto rows = aiw::run_demo(*backend, spec);
  auto& out = *env.out;
  out << aiw::problem().query << "\n";
  out << "expected answer: " << aiw::answer(aiw::kDemoSisters, aiw::kDemoBrothers, aiw::Variant::brother).value()
      << "\n\n";
  out << fmt::format("{:<7} {:>5} {:>7} {:>3}  {}\n", "scm", "turns", "answer", "k", "response");
  for (const auto& row : rows) {
    auto last = AnswerMatcher::last_number(row.final_response);
    out << fmt::format("{:<7} {:>5} {:>7} {:>3}  {}\n", to_string(row.scm), row.turns,
                       last ? experiment::format_number(*last) : "-", row.k ? std::to_string(*row.k) : "-",
                       row.failure ? "failed: " + *row.failure : row.final_response);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// Dispatch

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const MissingApiKey*>(&e)) return kMissingApiKey;
  if (dynamic_cast<const ConfigError*>(&e)) return kMissingInput;
  if (dynamic_cast<const GraphError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const AnnotationError*>(&e) ||
      dynamic_cast<const PreconditionError*>(&e)) {
    return kValidation;
  }
  return kRuntime;
}

inline constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  run finished but some records failed\n"
    "  2  usage error\n"
    "  3  missing or invalid config / input file\n"
    "  4  API key variable not set for the http backend\n"
    "  5  validation failure (graph, schema, annotations, plan)\n"
    "  6  runtime error\n";

inline int dispatch(const std::vector<std::string>& args, const Environment& env = {}) {
  CLI::App app{"Concept-graph prompting experiments", "conceptlm"};
  app.footer(kExitCodeHelp);
  app.require_subcommand(1);

  BackendChoice backend;
  std::string backend_kind;
  std::optional<std::string> script, cassettes;
  auto add_backend_flags = [&](CLI::App* cmd) {
    cmd->add_option("--backend", backend_kind, "Backend: mock, http or replay")
        ->check(CLI::IsMember({"mock", "http", "replay"}));
    cmd->add_option("--script", script, "Mock script file");
    cmd->add_option("--cassettes", cassettes, "Cassette directory (recorded by http, read by replay)");
    cmd->add_option("--base-url", backend.base_url, "Base URL of an OpenAI-compatible API");
    cmd->add_option("--api-key-env", backend.api_key_env, "Environment variable holding the API key")
        ->capture_default_str();
  };

  auto* graph_cmd = app.add_subcommand("graph", "Concept graph checks");
  graph_cmd->require_subcommand(1);
  std::string graph_path;
  std::optional<std::string> known_path;
  auto* validate_cmd = graph_cmd->add_subcommand("validate", "Validate a concept graph file");
  validate_cmd->add_option("--graph", graph_path, "Graph file")->required();
  validate_cmd->add_option("--known", known_path, "Known-set file; also prints the chain order");

  auto* probe_cmd = graph_cmd->add_subcommand("probe", "Probe a model for base knowledge");
  std::string model_name = "demo-model";
  ProbeSettings probe_settings;
  std::optional<std::string> probe_out;
  probe_cmd->add_option("--graph", graph_path, "Graph file")->required();
  probe_cmd->add_option("--model", model_name, "Model name")->capture_default_str();
  probe_cmd->add_option("--trials", probe_settings.trials, "Trials per probe question")->capture_default_str();
  probe_cmd->add_option("--threshold", probe_settings.threshold, "Fraction correct to count as known")
      ->capture_default_str();
  probe_cmd->add_option("--out", probe_out, "Write the known set here");
  add_backend_flags(probe_cmd);

  auto* chain_cmd = app.add_subcommand("chain", "Prompt chains");
  chain_cmd->require_subcommand(1);
  ChainOptions chain;
  std::optional<std::string> chain_graph, chain_known, chain_config, template_dir;
  auto* build_cmd = chain_cmd->add_subcommand("build", "Print the prompt plan of one SCM (no model calls)");
  build_cmd->add_option("--scm", chain.scm, "simple, icl, cot, cicl or coc")->required();
  build_cmd->add_option("--graph", chain_graph, "Graph file (default: bundled sibling puzzle)");
  build_cmd->add_option("--known", chain_known, "Known-set file");
  build_cmd->add_option("--config", chain_config, "Experiment config; uses its first domain");
  build_cmd->add_option("--template-dir", template_dir, "Directory of prompt template overrides");
  build_cmd->add_option("--query", chain.query, "Conceptual problem text");
  build_cmd->add_flag("--json", chain.json, "Print the plan as JSON");

  auto* run_cmd = app.add_subcommand("run", "Run an experiment grid");
  RunCommand run_args;
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> parallel, limit;
  run_cmd->add_option("--config", config_path, "Experiment config file")->required();
  run_cmd->add_option("--out", out_dir, "Run directory");
  run_cmd->add_option("--parallel", parallel, "Concurrent records");
  run_cmd->add_option("--limit", limit, "Stop after this many new records");
  add_backend_flags(run_cmd);

  std::string run_dir;
  std::optional<std::string> opt_config;
  auto* eval_cmd = app.add_subcommand("evaluate", "Recompute theta_C1..C3 over a run");
  eval_cmd->add_option("--run", run_dir, "Run directory")->required();
  eval_cmd->add_option("--config", opt_config, "Experiment config (default: the one the run used)");

  std::string annotator;
  auto* annotate_cmd = app.add_subcommand("annotate", "Score quasi-semantic KPIs interactively");
  annotate_cmd->add_option("--run", run_dir, "Run directory")->required();
  annotate_cmd->add_option("--annotator", annotator, "Annotator name")->required();

  auto* report_cmd = app.add_subcommand("report", "Write metric CSVs and SVG charts");
  report_cmd->add_option("--run", run_dir, "Run directory")->required();
  report_cmd->add_option("--out", out_dir, "Report directory (default: <run>/report)");

  auto* demo_cmd = app.add_subcommand("demo-aiw", "Run the bundled sibling puzzle through all five SCMs");
  add_backend_flags(demo_cmd);

  auto& out = *env.out;
  auto& err = *env.err;
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  backend.kind = backend_kind;
  if (script) backend.script = *script;
  if (cassettes) backend.cassettes = *cassettes;

  try {
    if (*validate_cmd) return graph_validate(graph_path, known_path, out);
    if (*probe_cmd) {
      auto graph = load_graph(detail::read_input(graph_path));
      auto choice = detail::resolve_choice(backend, nullptr);
      detail::preflight(choice, env);
      ModelSpec spec{model_name};
      auto b = detail::make_backend(choice, spec, env);
      auto outcome = probe_known_set(graph, *b, spec, probe_settings);
      nlohmann::json j = {{"model", model_name}, {"known", outcome.known.ids()}, {"scores", outcome.scores},
                          {"skipped", outcome.skipped}};
      if (probe_out) write_file_atomic(*probe_out, j.dump(2) + "\n");
      out << j.dump(2) << "\n";
      return kOk;
    }
    if (*build_cmd) {
      if (chain_graph) chain.graph = *chain_graph;
      if (chain_known) chain.known = *chain_known;
      if (chain_config) chain.config = *chain_config;
      if (template_dir) chain.template_dir = *template_dir;
      auto plan = chain_plan(chain);
      if (chain.json) {
        out << to_json(plan).dump(2) << "\n";
      } else {
        print_plan(plan, out);
      }
      return kOk;
    }
    if (*run_cmd) {
      run_args.config = config_path;
      if (out_dir) run_args.out = *out_dir;
      run_args.parallel = parallel;
      run_args.limit = limit;
      run_args.backend = backend;
      return run(run_args, env);
    }
    if (*eval_cmd) {
      std::optional<std::filesystem::path> c;
      if (opt_config) c = *opt_config;
      return evaluate(run_dir, c, out);
    }
    if (*annotate_cmd) return annotate(run_dir, annotator, env);
    if (*report_cmd) {
      std::optional<std::filesystem::path> o;
      if (out_dir) o = *out_dir;
      return report(run_dir, o, out);
    }
    if (*demo_cmd) return demo_aiw(backend, env);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kUsage;
}

inline int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args);
}

}  // namespace conceptlm::cli
