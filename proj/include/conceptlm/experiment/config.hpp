#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptlm/digest.hpp"
#include "conceptlm/error.hpp"
#include "conceptlm/gateway.hpp"
#include "conceptlm/matcher.hpp"
#include "conceptlm/probe.hpp"
#include "conceptlm/strategies.hpp"
#include "conceptlm/text.hpp"

namespace conceptlm::experiment {

/// Experiment grid definition. Relative paths resolve against the directory
/// of the config file. See docs/experiment-config.md.
struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<ModelSpec> models;
  std::vector<Scm> scms;
  std::vector<std::string> domains;
  std::size_t samples_per_cell = 1;

  std::string query_template;                  // "{domain}" and `query_vars` are substituted
  std::map<std::string, std::string> query_vars;
  std::optional<AnswerMatcher> expected;

  std::filesystem::path graph;
  std::vector<std::string> known_asserted;
  std::optional<ProbeSettings> probe;

  std::optional<std::filesystem::path> icl_exemplar;
  std::optional<std::filesystem::path> cot_exemplars;
  bool cot_step_by_step = false;
  std::optional<std::filesystem::path> template_dir;

  std::optional<std::filesystem::path> schema;
  std::vector<std::string> exemplar_domains;
  double parroting_threshold = 0.8;

  nlohmann::json backend = {{"kind", "mock"}};
  std::size_t parallelism = 1;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> output;

  nlohmann::json raw;  // as written, for the digest and the run snapshot
  std::filesystem::path base_dir;
  std::filesystem::path source;  // config file, when loaded from one

  std::size_t grid_size() const { return models.size() * scms.size() * domains.size() * samples_per_cell; }

  std::string digest() const { return sha256_hex(raw.dump()); }

  std::filesystem::path resolve(const std::filesystem::path& p) const { return p.is_absolute() ? p : base_dir / p; }

  void validate() const {
    if (models.empty()) throw ConfigError("config needs at least one model");
    if (scms.empty()) throw ConfigError("config needs at least one SCM");
    if (domains.empty()) throw ConfigError("config needs at least one domain");
    if (samples_per_cell < 1) throw ConfigError("samples_per_cell must be >= 1");
    if (query_template.empty()) throw ConfigError("config needs problem.template");
    if (!schema) throw ConfigError("config needs a schema file");
    for (const auto& m : models) m.validate();
    for (auto scm : scms) {
      if (scm == Scm::icl && !icl_exemplar) throw ConfigError("SCM icl needs icl_exemplar");
      if (scm == Scm::cot && !cot_exemplars) throw ConfigError("SCM cot needs cot_exemplars");
    }
  }

  static ExperimentConfig from_json(const nlohmann::json& j, std::filesystem::path base_dir) {
    ExperimentConfig c;
    c.raw = j;
    c.base_dir = std::move(base_dir);
    try {
      c.name = j.value("name", c.name);
      for (const auto& m : j.at("models")) c.models.push_back(ModelSpec::from_json(m));
      for (const auto& s : j.at("scms")) c.scms.push_back(parse_scm(s.get<std::string>()));
      c.domains = j.at("domains").get<std::vector<std::string>>();
      c.samples_per_cell = j.at("samples_per_cell").get<std::size_t>();

      const auto& problem = j.at("problem");
      c.query_template = problem.at("template").get<std::string>();
      if (problem.contains("vars")) c.query_vars = problem["vars"].get<std::map<std::string, std::string>>();
      if (problem.contains("expected")) c.expected = AnswerMatcher::from_json(problem["expected"]);

      c.graph = j.at("graph").get<std::string>();
      if (j.contains("known")) {
        const auto& known = j["known"];
        if (known.contains("asserted")) c.known_asserted = known["asserted"].get<std::vector<std::string>>();
        if (known.contains("probe")) {
          ProbeSettings p;
          p.trials = known["probe"].value("trials", p.trials);
          p.threshold = known["probe"].value("threshold", p.threshold);
          c.probe = p;
        }
      }
      if (j.contains("icl_exemplar")) c.icl_exemplar = j["icl_exemplar"].get<std::string>();
      if (j.contains("cot_exemplars")) c.cot_exemplars = j["cot_exemplars"].get<std::string>();
      c.cot_step_by_step = j.value("cot_step_by_step", false);
      if (j.contains("template_dir")) c.template_dir = j["template_dir"].get<std::string>();
      if (j.contains("schema")) c.schema = j["schema"].get<std::string>();
      c.exemplar_domains = j.value("exemplar_domains", std::vector<std::string>{});
      c.parroting_threshold = j.value("parroting_threshold", c.parroting_threshold);
      if (j.contains("backend")) c.backend = j["backend"];
      c.parallelism = j.value("parallelism", c.parallelism);
      c.seed = j.value("seed", c.seed);
      if (j.contains("output")) c.output = j["output"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed experiment config: ") + e.what());
    } catch (const PreconditionError& e) {
      throw ConfigError(std::string("invalid experiment config: ") + e.what());
    }
    c.validate();
    return c;
  }

  static ExperimentConfig from_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    auto j = nlohmann::json::parse(text::read_file(path.string()), nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
    auto c = from_json(j, path.parent_path());
    c.source = path;
    return c;
  }
};

/// Reads `{"query", "response"}` or an array of them.
inline std::vector<ExemplarPair> load_exemplar_pairs(const std::filesystem::path& path) {
  auto j = nlohmann::json::parse(text::read_file(path.string()), nullptr, false);
  if (j.is_discarded()) throw ConfigError("exemplar file is not valid JSON: " + path.string());
  if (!j.is_array()) j = nlohmann::json::array({j});
  std::vector<ExemplarPair> out;
  for (const auto& e : j) out.push_back(ExemplarPair::make(e.at("query").get<std::string>(), e.at("response").get<std::string>()));
  return out;
}

}  // namespace conceptlm::experiment
