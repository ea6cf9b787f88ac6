// One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "conceptlm/aiw.hpp"
#include "conceptlm/concept_graph.hpp"
#include "conceptlm/metrics.hpp"
#include "conceptlm/mock_backend.hpp"
#include "conceptlm/pdm/evaluation.hpp"
#include "conceptlm/pdm/extract.hpp"
#include "conceptlm/pdm/parroting.hpp"
#include "experiment_helpers.hpp"
#include "support.hpp"

using namespace conceptlm;
using namespace conceptlm::experiment;
using namespace testing_support;
using nlohmann::json;

namespace {

// Tolerances and limits.
constexpr double kMockRuntimeLimitSeconds = 120.0;
constexpr double kConfidenceTolerance = 1e-12;
constexpr double kMarginTolerance = 1e-9;
constexpr double kMargin = 0.306;
constexpr double kRenamedSimilarityMin = 0.95;
constexpr double kDisjointSimilarityMax = 0.1;
constexpr double kParrotingThreshold = 0.8;
constexpr std::size_t kGridRecords = 495;
constexpr std::size_t kKillAfterRecords = 150;

struct Verdict {
  bool pass = false;
  std::string detail;
};

Verdict fail(std::string d) { return {false, std::move(d)}; }

std::optional<int> enumerate_family(int sisters, int brothers, aiw::Variant variant) {
  std::vector<bool> girls{true};
  for (int i = 0; i < sisters; ++i) girls.push_back(true);
  for (int i = 0; i < brothers; ++i) girls.push_back(false);
  const bool want_girl = variant == aiw::Variant::sister;
  for (std::size_t s = 1; s < girls.size(); ++s) {
    if (girls[s] != want_girl) continue;
    int count = 0;
    for (std::size_t o = 0; o < girls.size(); ++o)
      if (o != s && girls[o]) ++count;
    return count;
  }
  return std::nullopt;
}

bool cyclic_by_dfs(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::vector<std::size_t>> adj(n);
  for (auto [a, b] : edges) adj[a].push_back(b);
  std::vector<int> color(n, 0);
  std::function<bool(std::size_t)> visit = [&](std::size_t v) {
    color[v] = 1;
    for (auto w : adj[v]) {
      if (color[w] == 1) return true;
      if (color[w] == 0 && visit(w)) return true;
    }
    color[v] = 2;
    return false;
  };
  for (std::size_t v = 0; v < n; ++v)
    if (color[v] == 0 && visit(v)) return true;
  return false;
}

KnownSet random_known(std::mt19937& rng, const ConceptGraph& g) {
  std::bernoulli_distribution coin(0.35);
  KnownSet k;
  for (const auto& c : g.nodes())
    if (coin(rng)) k.add_asserted(c.id);
  return k;
}

std::set<std::string> journal_ids(const std::filesystem::path& path) {
  std::set<std::string> out;
  for (const auto& r : read_journal(path)) out.insert(r.provenance.sample_id());
  return out;
}

std::size_t newline_count(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return 0;
  std::ifstream in(path, std::ios::binary);
  return static_cast<std::size_t>(std::count(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>(), '\n'));
}

// ---------------------------------------------------------------------------

Verdict grid_cardinality() {
  TempDir dir("acc-grid");
  auto config = bundled_config();
  MockFactory mock(config);
  RunnerOptions opts;
  opts.out_dir = dir.path();
  const auto start = std::chrono::steady_clock::now();
  auto summary = run_experiment(config, mock.factory(), opts);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto records = read_journal(dir / kJournalFile);
  const bool ok = config.grid_size() == kGridRecords && records.size() == kGridRecords &&
                  summary.completed == kGridRecords && seconds < kMockRuntimeLimitSeconds;
  return {ok, fmt::format("{} models x {} SCMs x {} domains x {} samples: {} records in {:.2f} s", config.models.size(),
                          config.scms.size(), config.domains.size(), config.samples_per_cell, records.size(), seconds)};
}

Verdict sibling_demo() {
  MockBackend backend(aiw::mock_script());
  RetryPolicy retry;
  retry.sleep = [](std::chrono::milliseconds) {};
  auto rows = aiw::run_demo(backend, ModelSpec{"demo-model"}, retry);
  const std::map<Scm, int> expected = {{Scm::simple, 0}, {Scm::icl, 0}, {Scm::cot, 0}, {Scm::cicl, 1}, {Scm::coc, 1}};
  const auto answer = aiw::answer(aiw::kDemoSisters, aiw::kDemoBrothers, aiw::Variant::brother);
  bool ok = rows.size() == expected.size() && aiw::kDemoSisters == 4 && aiw::kDemoBrothers == 11 && answer == 5;
  std::string detail = fmt::format("answer {}:", answer ? *answer : -1);
  for (const auto& row : rows) {
    ok = ok && row.k && *row.k == expected.at(row.scm);
    detail += fmt::format(" {}={}", to_string(row.scm), row.k ? std::to_string(*row.k) : "-");
  }
  return {ok, detail};
}

Verdict sibling_oracle() {
  std::mt19937 rng(2024);
  std::uniform_int_distribution<int> d(0, 20);
  for (int trial = 0; trial < 100; ++trial) {
    const int x = d(rng), y = d(rng);
    const auto brother = aiw::answer(x, y, aiw::Variant::brother);
    const auto sister = aiw::answer(x, y, aiw::Variant::sister);
    if (brother != enumerate_family(x, y, aiw::Variant::brother) ||
        sister != enumerate_family(x, y, aiw::Variant::sister))
      return fail(fmt::format("enumeration disagrees at X={}, Y={}", x, y));
    if (y > 0 && brother != x + 1) return fail(fmt::format("brother variant at X={}, Y={}", x, y));
    if (x > 0 && sister != x) return fail(fmt::format("sister variant at X={}, Y={}", x, y));
  }
  return {true, "100 random instances agree with sibling enumeration"};
}

Verdict metric_oracles() {
  std::size_t cases = 0;
  for (unsigned len = 1; len <= 12; ++len) {
    for (unsigned bits = 0; bits < (1u << len); ++bits) {
      std::vector<int> seq(len);
      for (unsigned i = 0; i < len; ++i) seq[i] = (bits >> i) & 1u;
      if (response_correctness(seq) != static_cast<double>(std::popcount(bits)) / len)
        return fail(fmt::format("correctness mismatch len={} bits={}", len, bits));
      ++cases;
    }
  }
  if (cases != 8190) return fail("wrong case count");

  std::mt19937 rng(7);
  std::uniform_int_distribution<int> turns(1, 5), tokens(0, 40);
  std::uniform_real_distribution<double> prob(0.0, 1.0), secs(0.0, 30.0);
  double worst = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    Transcript t;
    const int n = turns(rng);
    for (int i = 0; i < n; ++i) {
      TurnRecord r;
      r.seconds = secs(rng);
      std::vector<double> p(static_cast<std::size_t>(tokens(rng)));
      for (auto& v : p) v = prob(rng);
      r.probabilities = std::move(p);
      t.turns.push_back(std::move(r));
    }
    t.turns[0].probabilities->push_back(prob(rng));
    t.complete = true;
    std::vector<double> all;
    double time = 0.0;
    for (const auto& turn : t.turns) {
      all.insert(all.end(), turn.probabilities->begin(), turn.probabilities->end());
      time += turn.seconds;
    }
    const double pooled = static_cast<double>(std::accumulate(all.begin(), all.end(), 0.0L) / all.size());
    const auto got = model_confidence(t);
    if (!got) return fail("confidence missing");
    worst = std::max(worst, std::abs(*got - pooled));
    if (time_consumption(t) != time) return fail("time is not the exact sum");
  }
  return {worst <= kConfidenceTolerance,
          fmt::format("8190 correctness cases exact; confidence max error {:.1e}; time exact", worst)};
}

Verdict chain_order_properties() {
  std::mt19937 rng(4242);
  for (int trial = 0; trial < 500; ++trial) {
    auto g = random_dag(rng, 12);
    auto known = random_known(rng, g);
    auto missing = subtract_known(g, known);
    auto steps = chain_order(missing);
    std::vector<std::string> order;
    for (const auto& s : steps) order.push_back(s.node.id);
    std::multiset<std::string> emitted(order.begin(), order.end()), expected;
    for (const auto& c : missing.nodes()) expected.insert(c.id);
    if (emitted != expected) return fail(fmt::format("trial {}: node emitted other than once", trial));
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
    for (const auto& e : missing.internal_edges())
      if (pos[e.from] >= pos[e.to]) return fail(fmt::format("trial {}: edge {}->{} violated", trial, e.from, e.to));
    auto again = chain_order(missing);
    for (std::size_t i = 0; i < steps.size(); ++i)
      if (again[i].node.id != steps[i].node.id) return fail(fmt::format("trial {}: nondeterministic", trial));
  }
  std::mt19937 rng2(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    auto [n, edges] = random_digraph(rng2, 12);
    if (validate_acyclic(to_graph(n, edges)).ok == cyclic_by_dfs(n, edges))
      return fail(fmt::format("digraph {}: cycle check disagrees with DFS", trial));
  }
  return {true, "500 DAGs ordered; 1000 digraphs agree with DFS"};
}

Verdict subtraction_identity() {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    auto g = random_dag(rng, 12);
    auto known = random_known(rng, g);
    auto missing = subtract_known(g, known);
    std::multiset<std::string> united, all;
    for (const auto& c : missing.nodes()) united.insert(c.id);
    for (const auto& id : known.ids()) united.insert(id);
    for (const auto& c : g.nodes()) all.insert(c.id);
    if (united != all) return fail(fmt::format("trial {}: missing and known do not partition", trial));
  }
  return {true, "500 random pairs partition exactly"};
}

Verdict evaluator_corpus() {
  const auto dir = data_dir() / "fixtures/evaluator";
  const auto labels = json::parse(text::read_file((dir / "labels.json").string()));
  const auto ex_response = json::parse(text::read_file((dir / labels["exemplar"].get<std::string>()).string()));
  const auto schema =
      pdm::PdmSchema::from_json(json::parse(text::read_file((dir / labels["schema"].get<std::string>()).string())));
  std::vector<pdm::ExemplarDocument> exemplars;
  for (const auto& doc : pdm::fenced_documents(ex_response["response"].get<std::string>()))
    exemplars.push_back({doc, labels["exemplar_domains"].get<std::vector<std::string>>(), "icl"});
  auto opt = [](const json& j) { return j.is_null() ? std::optional<int>() : std::optional<int>(j.get<int>()); };
  std::size_t disagreements = 0, cascade = 0;
  for (const auto& c : labels["cases"]) {
    const auto text = text::read_file((dir / c["file"].get<std::string>()).string());
    const auto domain = c["domain"].get<std::string>();
    pdm::EvaluationSettings s{&schema, exemplars, {domain}, labels["threshold"].get<double>()};
    auto rec = pdm::evaluate_response(text, {"m", "x", domain, 0}, s);
    if (rec.theta_c1 != c["c1"].get<int>() || rec.theta_c2 != opt(c["c2"]) || rec.theta_c3 != opt(c["c3"]))
      ++disagreements;
    if (rec.theta_c1 == 0 && (rec.theta_c2 || rec.theta_c3 || rec.c4())) ++cascade;
  }
  const auto n = labels["cases"].size();
  return {n == 30 && disagreements == 0 && cascade == 0,
          fmt::format("{} cases, {} disagreements, {} cascade violations", n, disagreements, cascade)};
}

Verdict parroting_detector() {
  const auto response = json::parse(text::read_file((data_dir() / "pdm/exemplars/icl.json").string()));
  const auto ex = pdm::fenced_documents(response["response"].get<std::string>()).at(0);
  auto s = ex.dump();
  for (auto [from, to] : std::vector<std::pair<const char*, const char*>>{{"water pumps", "wind turbines"},
                                                                         {"WaterPump", "WindTurbine"},
                                                                         {"water_pump", "wind_turbine"},
                                                                         {"Pump", "Turbine"},
                                                                         {"pump", "turbine"}})
    s = text::replace_all(s, from, to);
  const auto copy = json::parse(s);
  const json disjoint = json::parse(R"({"recipe": {"title": "Espresso", "steps": ["grind", "tamp", "extract"],
    "yield_ml": 30, "tags": {"strength": "strong"}}})");
  auto renamed = pdm::check_parroting(copy, {{ex, {"water pumps"}, "icl"}}, {"wind turbines"}, kParrotingThreshold);
  auto other = pdm::check_parroting(disjoint, {{ex, {"water pumps"}, "icl"}}, {"coffee making"}, kParrotingThreshold);
  const bool ok = copy != ex && renamed.similarity >= kRenamedSimilarityMin && renamed.parroting &&
                  other.similarity <= kDisjointSimilarityMax && !other.parroting;
  return {ok, fmt::format("renamed {:.4f} (flagged {}), disjoint {:.4f} (flagged {})", renamed.similarity,
                          renamed.parroting, other.similarity, other.parroting)};
}

Verdict aggregation_margin() {
  // baseline products {0.25, 0.75, 0.5, 0.5}: mean 0.5
  // improved products {0.9, 0.406, 0, 1.0, 0.959}: mean 0.653
  std::vector<RunRecord> records;
  const std::vector<std::pair<double, int>> base = {{0.25, 1}, {0.75, 1}, {0.5, 1}, {0.5, 1}};
  const std::vector<std::pair<double, int>> better = {{0.9, 1}, {0.406, 1}, {1.0, 0}, {1.0, 1}, {0.959, 1}};
  for (std::size_t i = 0; i < base.size(); ++i) records.push_back(scored_record("m", "cicl", i, base[i].first, base[i].second));
  for (std::size_t i = 0; i < better.size(); ++i)
    records.push_back(scored_record("m", "coc", i, better[i].first, better[i].second));
  auto invalid = scored_record("m", "coc", 50, 0.0, 0);
  invalid.evaluation.theta_c1 = 0;
  invalid.evaluation.theta_c2.reset();
  invalid.evaluation.theta_c3.reset();
  invalid.evaluation.c4_state = pdm::C4State::not_applicable;
  records.push_back(invalid);
  auto failed = scored_record("m", "coc", 99, 0, 0);
  failed.status = RecordStatus::failed;
  records.push_back(failed);

  TempDir dir("acc-margin");
  emit_report(aggregate(records), dir.path());
  auto report = json::parse(text::read_file((dir / "aggregates.json").string()));
  auto coc = reported_mean(report, "m", "coc", kCombinedMetric);
  auto cicl = reported_mean(report, "m", "cicl", kCombinedMetric);
  if (!coc || !cicl) return fail("combined metric missing from the report");
  const double margin = relative_margin(*coc, *cicl);
  return {std::abs(margin - kMargin) <= kMarginTolerance,
          fmt::format("coc {:.6f} vs cicl {:.6f}: margin {:.12f}", *coc, *cicl, margin)};
}

// Mock backend that sleeps before each reply so a child run can be killed midway.
class SlowBackend : public Backend {
 public:
  explicit SlowBackend(std::shared_ptr<Backend> inner) : inner_(std::move(inner)) {}
  std::string id() const override { return inner_->id(); }
  BackendReply send(const CompletionRequest& r) override {
    std::this_thread::sleep_for(std::chrono::milliseconds(4));
    return inner_->send(r);
  }

 private:
  std::shared_ptr<Backend> inner_;
};

Verdict resume_after_kill() {
  TempDir dir("acc-kill");
  auto config = bundled_config();
  const auto journal = dir / kJournalFile;
  std::fflush(nullptr);
  const pid_t child = fork();
  if (child < 0) return fail("fork failed");
  if (child == 0) {
    MockFactory mock(config);
    auto slow = std::make_shared<SlowBackend>(mock.mock);
    auto opts = quiet_options(dir.path());
    try {
      run_experiment(config, [&](const ModelSpec&) { return std::static_pointer_cast<Backend>(slow); }, opts);
    } catch (...) {
      _exit(3);
    }
    _exit(0);
  }
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(60);
  bool killed = false;
  while (std::chrono::steady_clock::now() < deadline) {
    int status = 0;
    if (waitpid(child, &status, WNOHANG) == child) break;
    if (newline_count(journal) >= kKillAfterRecords) {
      kill(child, SIGKILL);
      waitpid(child, &status, 0);
      killed = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  if (!killed) {
    kill(child, SIGKILL);
    waitpid(child, nullptr, 0);
    return fail("child run did not reach the kill point");
  }
  const auto before = journal_ids(journal);
  if (before.size() >= kGridRecords) return fail("run finished before the kill");

  MockFactory resume(config);
  auto summary = run_experiment(config, resume.factory(), quiet_options(dir.path()));
  std::size_t repeats = 0;
  for (const auto& [model, scm, domain, sample] : resume.contacted())
    repeats += before.count(pdm::SampleProvenance{model, scm, domain, sample}.sample_id());
  const auto records = read_journal(journal);
  const auto ids = journal_ids(journal);
  const std::size_t duplicates = records.size() - ids.size();
  const bool ok = ids.size() == kGridRecords && duplicates == 0 && repeats == 0 &&
                  summary.completed + summary.failed == kGridRecords;
  return {ok, fmt::format("killed with {} records; resume ran {}; {} records, {} duplicates, {} re-executed requests",
                          before.size(), summary.executed, records.size(), duplicates, repeats)};
}

Verdict determinism() {
  TempDir a("acc-det-a"), b("acc-det-b");
  auto config = bundled_config();
  MockFactory ma(config), mb(config);
  RunnerOptions oa, ob;
  oa.out_dir = a.path();
  ob.out_dir = b.path();
  run_experiment(config, ma.factory(), oa);
  run_experiment(config, mb.factory(), ob);
  const bool journals = journal_without_timing(a / kJournalFile) == journal_without_timing(b / kJournalFile);
  const bool transcripts = directory_bytes(a / "transcripts") == directory_bytes(b / "transcripts");
  emit_report(aggregate(read_journal(a / kJournalFile)), a / "report");
  emit_report(aggregate(read_journal(b / kJournalFile)), b / "report");
  const auto ra = directory_bytes(a / "report");
  const bool reports = ra == directory_bytes(b / "report") && !ra.empty();
  return {journals && transcripts && reports,
          fmt::format("journals {}, transcripts {}, {} report files {}", journals ? "equal" : "differ",
                      transcripts ? "equal" : "differ", ra.size(), reports ? "equal" : "differ")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"grid cardinality and mock runtime", grid_cardinality},
      {"sibling puzzle demo", sibling_demo},
      {"sibling puzzle oracle", sibling_oracle},
      {"metric oracles", metric_oracles},
      {"chain order and cycle check", chain_order_properties},
      {"known-set subtraction", subtraction_identity},
      {"evaluator fixture corpus", evaluator_corpus},
      {"parroting detector", parroting_detector},
      {"aggregation margin", aggregation_margin},
      {"resume after kill", resume_after_kill},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = fail(std::string("exception: ") + e.what());
    }
    failures += v.pass ? 0 : 1;
    std::cout << (v.pass ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << ": " << v.detail << std::endl;
  }
  std::cout << (failures ? fmt::format("{} criteria failed", failures) : std::string("all criteria passed")) << std::endl;
  return failures ? 1 : 0;
}
