#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "experiment_helpers.hpp"

using namespace conceptlm;
using namespace conceptlm::experiment;
using namespace testing_support;
using nlohmann::json;

namespace {

json bundled_json() { return json::parse(text::read_file((data_dir() / "pdm/experiment.json").string())); }

ExperimentConfig small_config(std::function<void(json&)> edit = {}) {
  auto j = bundled_json();
  j["models"] = json::array({"m1"});
  j["scms"] = json::array({"simple"});
  j["domains"] = json::array({"coffee making"});
  j["samples_per_cell"] = 1;
  j["parallelism"] = 1;
  if (edit) edit(j);
  return ExperimentConfig::from_json(j, data_dir() / "pdm");
}

std::set<std::string> journal_ids(const std::filesystem::path& path) {
  std::set<std::string> out;
  for (const auto& r : read_journal(path)) out.insert(r.provenance.sample_id());
  return out;
}

}  // namespace

TEST(Config, ValidatesAndResolvesPaths) {
  auto c = bundled_config();
  EXPECT_EQ(c.grid_size(), 495u);
  EXPECT_EQ(c.resolve("graph.json"), data_dir() / "pdm" / "graph.json");
  EXPECT_EQ(c.digest(), sha256_hex(c.raw.dump()));
  EXPECT_THROW(small_config([](json& j) { j.erase("schema"); }), ConfigError);
  EXPECT_THROW(small_config([](json& j) { j["scms"] = json::array({"few-shot"}); }), ConfigError);
  EXPECT_THROW(small_config([](json& j) { j["models"] = json::array(); }), ConfigError);
  EXPECT_THROW(small_config([](json& j) { j.erase("icl_exemplar"); j["scms"] = json::array({"icl"}); }), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_file("/nonexistent/config.json"), ConfigError);
}

TEST(Grid, EnumerationIsTheFullCartesianProduct) {
  auto c = bundled_config();
  auto grid = enumerate_grid(c);
  EXPECT_EQ(grid.size(), c.models.size() * c.scms.size() * c.domains.size() * c.samples_per_cell);
  std::set<pdm::SampleProvenance> unique(grid.begin(), grid.end());
  EXPECT_EQ(unique.size(), grid.size());
  EXPECT_EQ(grid.front().model, "gpt-3.5-turbo-16k");
  EXPECT_EQ(grid.back().sample, 10u);
}

TEST(Runner, SingleCellRun) {
  TempDir dir("one");
  auto config = small_config();
  MockFactory mock(config);
  auto summary = run_experiment(config, mock.factory(), quiet_options(dir.path()));
  EXPECT_EQ(summary.total, 1u);
  EXPECT_EQ(summary.completed, 1u);
  EXPECT_EQ(summary.executed, 1u);
  auto records = read_journal(dir / kJournalFile);
  ASSERT_EQ(records.size(), 1u);
  const auto& r = records[0];
  EXPECT_EQ(r.status, RecordStatus::completed);
  EXPECT_EQ(r.config_digest, config.digest());
  EXPECT_TRUE(std::filesystem::exists(dir / r.transcript_file));
  auto t = transcript_from_json(json::parse(text::read_file((dir / r.transcript_file).string())));
  EXPECT_TRUE(t.complete);
  EXPECT_EQ(t.model, "m1");
  EXPECT_TRUE(std::filesystem::exists(dir / "config.json"));
  EXPECT_GT(r.metrics.theta_cost, 0u);
}

TEST(Runner, RefusesADifferentConfigInTheSameDirectory) {
  TempDir dir("diff");
  auto a = small_config();
  MockFactory mock(a);
  run_experiment(a, mock.factory(), quiet_options(dir.path()));
  auto b = small_config([](json& j) { j["samples_per_cell"] = 2; });
  EXPECT_THROW(run_experiment(b, mock.factory(), quiet_options(dir.path())), ConfigError);
}

TEST(Runner, LimitThenResumeCompletesWithoutDuplicatesOrRepeats) {
  TempDir dir("resume");
  auto config = bundled_config();
  MockFactory first(config);
  auto opts = quiet_options(dir.path());
  opts.limit = 200;
  auto s1 = run_experiment(config, first.factory(), opts);
  EXPECT_EQ(s1.executed, 200u);
  EXPECT_EQ(s1.pending, 295u);
  const auto done_before = journal_ids(dir / kJournalFile);

  MockFactory second(config);
  auto s2 = run_experiment(config, second.factory(), quiet_options(dir.path()));
  EXPECT_EQ(s2.executed, 295u);
  EXPECT_EQ(s2.completed + s2.failed, 495u);
  for (const auto& [model, scm, domain, sample] : second.contacted()) {
    ASSERT_FALSE(done_before.count(pdm::SampleProvenance{model, scm, domain, sample}.sample_id()));
  }
  auto records = read_journal(dir / kJournalFile);
  EXPECT_EQ(records.size(), 495u);
  EXPECT_EQ(journal_ids(dir / kJournalFile).size(), 495u);

  MockFactory third(config);
  auto s3 = run_experiment(config, third.factory(), quiet_options(dir.path()));
  EXPECT_EQ(s3.executed, 0u);
  EXPECT_EQ(third.factory_calls, 0u);
  EXPECT_EQ(third.mock->calls(), 0u);
}

TEST(Runner, TornFinalLineIsRepairedOnResume) {
  TempDir dir("torn");
  auto config = small_config([](json& j) { j["samples_per_cell"] = 3; });
  MockFactory mock(config);
  auto opts = quiet_options(dir.path());
  opts.limit = 2;
  run_experiment(config, mock.factory(), opts);
  {
    std::ofstream f(dir / kJournalFile, std::ios::app | std::ios::binary);
    f << R"({"sample_id":"m1/simple/coffee making/2","provenance":{"model":"m1")";
  }
  EXPECT_EQ(read_journal(dir / kJournalFile, false).size(), 2u);
  auto s = run_experiment(config, mock.factory(), quiet_options(dir.path()));
  EXPECT_EQ(s.executed, 1u);
  auto records = read_journal(dir / kJournalFile);
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[2].provenance.sample, 2u);
}

TEST(Runner, CorruptMiddleLineIsAnError) {
  TempDir dir("corrupt");
  { std::ofstream(dir / kJournalFile) << "not json\n{}\n"; }
  EXPECT_THROW(read_journal(dir / kJournalFile), SchemaError);
}

TEST(Runner, FailedCellsAreRecordedAndReported) {
  TempDir dir("fail");
  const auto script = dir / "script.json";
  {
    std::ofstream(script) << R"({"rules":[{"scm":"simple","response":"```json\n{}\n```"},{"scm":"cicl","fail":"backend"}]})";
  }
  auto config = small_config([&](json& j) {
    j["scms"] = json::array({"simple", "cicl"});
    j["samples_per_cell"] = 2;
    j["backend"] = {{"kind", "mock"}, {"script", script.string()}};
  });
  MockFactory mock(config);
  auto s = run_experiment(config, mock.factory(), quiet_options(dir / "run"));
  EXPECT_EQ(s.completed, 2u);
  EXPECT_EQ(s.failed, 2u);
  auto records = read_journal(dir / "run" / kJournalFile);
  for (const auto& r : records) {
    if (r.provenance.scm == "cicl") {
      EXPECT_EQ(r.status, RecordStatus::failed);
      ASSERT_TRUE(r.error.has_value());
      EXPECT_NE(r.error->find("scripted backend refusal"), std::string::npos);
    }
  }
  auto agg = aggregate(records);
  EXPECT_EQ(agg.cell("m1", "cicl")->failed, 2u);
  EXPECT_EQ(agg.cell("m1", "cicl")->metrics.at("theta_c1").n, 0u);
  EXPECT_EQ(agg.cell("m1", "simple")->metrics.at("theta_c1").n, 2u);
}

TEST(Runner, ProbedKnownSetIsCachedAcrossResumes) {
  TempDir dir("probe");
  auto config = small_config([](json& j) {
    j["known"] = {{"probe", {{"trials", 2}, {"threshold", 0.5}}}};
    j["samples_per_cell"] = 2;
  });
  MockFactory first(config);
  auto opts = quiet_options(dir.path());
  opts.limit = 1;
  run_experiment(config, first.factory(), opts);
  std::size_t probes = 0;
  for (const auto& [m, scm, d, s] : first.contacted()) probes += scm == "probe" ? 1 : 0;
  EXPECT_EQ(probes, 6u);  // three probed concepts, two trials each
  bool cached = false;
  for (const auto& e : std::filesystem::directory_iterator(dir.path()))
    cached = cached || e.path().filename().string().starts_with("known-");
  EXPECT_TRUE(cached);

  MockFactory second(config);
  run_experiment(config, second.factory(), quiet_options(dir.path()));
  for (const auto& [m, scm, d, s] : second.contacted()) EXPECT_NE(scm, "probe");
  auto ctx = RunContext::load(config);
  auto known = recorded_known_set(ctx, config.models[0], dir.path());
  EXPECT_EQ(known.size(), 3u);
}

TEST(Runner, SerialAndParallelRunsWriteTheSameJournal) {
  TempDir a("serial"), b("parallel");
  auto config = bundled_config();
  MockFactory ma(config), mb(config);
  auto oa = quiet_options(a.path());
  oa.parallelism = 1;
  auto ob = quiet_options(b.path());
  ob.parallelism = 4;
  run_experiment(config, ma.factory(), oa);
  run_experiment(config, mb.factory(), ob);
  EXPECT_EQ(journal_without_timing(a / kJournalFile), journal_without_timing(b / kJournalFile));
  EXPECT_EQ(directory_bytes(a / "transcripts"), directory_bytes(b / "transcripts"));
}

TEST(Aggregate, StatisticsMatchDirectComputation) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<RunRecord> records;
  std::map<std::string, std::vector<double>> by_scm;
  for (const char* scm : {"coc", "simple", "cicl"}) {
    for (std::size_t i = 0; i < 9; ++i) {
      const double c4 = u(rng);
      const int c3 = u(rng) < 0.7 ? 1 : 0;
      records.push_back(scored_record("m", scm, i, c4, c3));
      by_scm[scm].push_back(c4 * c3);
    }
  }
  auto agg = aggregate(records);
  EXPECT_EQ(agg.scms, (std::vector<std::string>{"simple", "cicl", "coc"}));
  for (const auto& [scm, values] : by_scm) {
    const auto& s = agg.cell("m", scm)->metrics.at(kCombinedMetric);
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= values.size();
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    EXPECT_EQ(s.n, values.size());
    EXPECT_NEAR(s.mean, mean, 1e-12);
    EXPECT_NEAR(s.variance, ss / (values.size() - 1), 1e-12);
    EXPECT_NEAR(s.stddev, std::sqrt(ss / (values.size() - 1)), 1e-12);
    EXPECT_LE(s.min, s.mean);
    EXPECT_LE(s.mean, s.max);
  }
}

TEST(Aggregate, FirstRecordWinsAndNotApplicableIsExcluded) {
  std::vector<RunRecord> records = {scored_record("m", "simple", 0, 0.2, 1), scored_record("m", "simple", 0, 0.9, 1)};
  auto invalid = scored_record("m", "simple", 1, 0.0, 1);
  invalid.evaluation.theta_c1 = 0;
  invalid.evaluation.theta_c2.reset();
  invalid.evaluation.theta_c3.reset();
  invalid.evaluation.c4_state = pdm::C4State::not_applicable;
  records.push_back(invalid);
  auto agg = aggregate(records);
  const auto* cell = agg.cell("m", "simple");
  EXPECT_EQ(cell->records, 2u);
  EXPECT_DOUBLE_EQ(cell->metrics.at("theta_c4").mean, 0.2);
  EXPECT_EQ(cell->metrics.at("theta_c4").excluded, 1u);
  EXPECT_DOUBLE_EQ(cell->metrics.at("theta_c1").mean, 0.5);
  EXPECT_THROW(aggregate({}), PreconditionError);
  EXPECT_THROW(relative_margin(1.0, 0.0), PreconditionError);

  EvaluationOverrides overrides;
  auto changed = records[0].evaluation;
  changed.theta_c4 = 0.6;
  overrides[records[0].provenance.sample_id()] = changed;
  EXPECT_DOUBLE_EQ(aggregate(records, &overrides).cell("m", "simple")->metrics.at("theta_c4").mean, 0.6);
}

TEST(Report, CombinedMarginSurvivesAggregationAndReport) {
  // baseline products {0.25, 0.75, 0.5, 0.5}: mean 0.5
  // improved products {0.9, 0.406, 0, 1.0, 0.959}: mean 0.653
  std::vector<RunRecord> records;
  const std::vector<std::pair<double, int>> base = {{0.25, 1}, {0.75, 1}, {0.5, 1}, {0.5, 1}};
  const std::vector<std::pair<double, int>> better = {{0.9, 1}, {0.406, 1}, {1.0, 0}, {1.0, 1}, {0.959, 1}};
  for (std::size_t i = 0; i < base.size(); ++i) records.push_back(scored_record("m", "cicl", i, base[i].first, base[i].second));
  for (std::size_t i = 0; i < better.size(); ++i) records.push_back(scored_record("m", "coc", i, better[i].first, better[i].second));
  auto failed = scored_record("m", "coc", 99, 0, 0);
  failed.status = RecordStatus::failed;
  records.push_back(failed);

  TempDir dir("margin");
  emit_report(aggregate(records), dir.path());
  auto report = json::parse(text::read_file((dir / "aggregates.json").string()));
  auto coc = reported_mean(report, "m", "coc", kCombinedMetric);
  auto cicl = reported_mean(report, "m", "cicl", kCombinedMetric);
  ASSERT_TRUE(coc && cicl);
  EXPECT_NEAR(relative_margin(*coc, *cicl), 0.306, 1e-9);
}

TEST(Report, FilesAreCompleteAndWellFormed) {
  std::vector<RunRecord> records = {scored_record("m,1", "simple", 0, 0.5, 1), scored_record("m,1", "simple", 1, 1.0, 1),
                                    scored_record("m,1", "coc", 0, 1.0, 1)};
  TempDir dir("files");
  auto written = emit_report(aggregate(records), dir.path());
  EXPECT_EQ(written.size(), 15u);
  const auto csv = text::read_file((dir / "theta_c4.csv").string());
  EXPECT_TRUE(csv.starts_with("model,simple.mean,simple.sd,simple.n,simple.excluded,simple.failed,coc.mean"));
  EXPECT_NE(csv.find("\"m,1\",0.75,"), std::string::npos);
  EXPECT_NE(csv.find("\r\n"), std::string::npos);
  const auto svg = text::read_file((dir / "theta_c4.svg").string());
  EXPECT_TRUE(svg.find("<svg") != std::string::npos && svg.find("</svg>") != std::string::npos);
  EXPECT_NE(svg.find("sample sd"), std::string::npos);
}

TEST(Report, TwoEqualRunsGiveIdenticalBytes) {
  TempDir a("det-a"), b("det-b");
  auto config = bundled_config();
  MockFactory ma(config), mb(config);
  run_experiment(config, ma.factory(), quiet_options(a.path()));
  run_experiment(config, mb.factory(), quiet_options(b.path()));
  EXPECT_EQ(journal_without_timing(a / kJournalFile), journal_without_timing(b / kJournalFile));
  emit_report(aggregate(read_journal(a / kJournalFile)), a / "report");
  emit_report(aggregate(read_journal(b / kJournalFile)), b / "report");
  auto ra = directory_bytes(a / "report"), rb = directory_bytes(b / "report");
  EXPECT_EQ(ra.size(), 15u);
  EXPECT_EQ(ra, rb);
}

TEST(Report, BundledMockGridShowsTheExpectedPattern) {
  TempDir dir("pattern");
  auto config = bundled_config();
  MockFactory mock(config);
  run_experiment(config, mock.factory(), quiet_options(dir.path()));
  auto agg = aggregate(read_journal(dir / kJournalFile));
  for (const auto& model : agg.models) {
    EXPECT_DOUBLE_EQ(agg.cell(model, "icl")->metrics.at("theta_c3").mean, 0.0);
    EXPECT_DOUBLE_EQ(agg.cell(model, "coc")->metrics.at("theta_c1").mean, 1.0);
    EXPECT_DOUBLE_EQ(agg.cell(model, "coc")->metrics.at("theta_c2").mean, 1.0);
    EXPECT_DOUBLE_EQ(agg.cell(model, "coc")->metrics.at("theta_c3").mean, 1.0);
    EXPECT_LT(agg.cell(model, "simple")->metrics.at("theta_c1").mean, 0.5);
    EXPECT_GT(agg.cell(model, "coc")->metrics.at("theta_cost").mean,
              agg.cell(model, "simple")->metrics.at("theta_cost").mean);
  }
}
