#include <gtest/gtest.h>

#include <cstdio>
#include <sys/wait.h>

#include "support.hpp"

using namespace memtrace;
namespace mt = memtrace::testing;

namespace {

nlohmann::json base_config(const fs::path& dir) {
  const auto tok = mt::fixture_dir() / "tokenizer";
  return {
      {"corpus", (dir / "corpus").string()},
      {"tokenizers",
       {{{"name", "fixture-bpe"},
         {"vocab", (tok / "fixture-vocab.json").string()},
         {"merges", (tok / "fixture-merges.txt").string()}}}},
      {"mining", {{"mode", "file_dup"}, {"seed", 21}}},
      {"builder", "builder"},
      {"generators",
       {{{"name", "builder"}, {"kind", "mock_memoriser"}, {"training", "candidates.jsonl"}, {"capacity", 200},
         {"seed", 4}, {"parameter_count_millions", 350}},
        {{"name", "partial"}, {"kind", "mock_memoriser"}, {"training", "benchmark.jsonl"}, {"capacity", 60},
         {"seed", 5}, {"parameter_count_millions", 2000}}}},
      {"build", {{"target_size", 150}, {"seed", 8}}},
      {"output_dir", dir.string()},
      {"workers", 2}};
}

fs::path write_config(const fs::path& dir, const nlohmann::json& cfg) {
  const auto path = dir / "run.json";
  std::ofstream(path) << cfg.dump(2);
  return path;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MEMTRACE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Pipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = mt::scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    mt::write_corpus_dir(mt::synthetic_corpus(100, 5, 13), dir_ / "corpus");
    config_ = write_config(dir_, base_config(dir_));
  }

  fs::path dir_;
  fs::path config_;
};

}  // namespace

TEST_F(Pipeline, MineMatchesOffsetOracleAndIsByteStable) {
  const auto cfg = load_config(config_);
  const auto summary = cmd_mine(cfg);
  EXPECT_EQ(summary.ingested, 500u);
  EXPECT_EQ(summary.kept_files, 500u);

  // Oracle: one offset per file from its path-derived stream; spans that
  // coincide across copies of one content collapse to one candidate.
  const auto tok = mt::fixture_tokenizer();
  const auto files = ingest(dir_ / "corpus").files;
  std::set<std::pair<std::uint64_t, std::size_t>> distinct;
  for (const auto& f : files) {
    SplitMix64 rng(21 ^ fnv1a64(f.path));
    const auto n = tok->encode_ids(f.content).size();
    for (auto off : sample_offsets(n, 150, 1, rng)) distinct.insert({f.content_hash, off});
  }
  EXPECT_EQ(summary.candidates, distinct.size());
  EXPECT_GT(summary.candidates, 450u);

  const auto first = read_file(summary.candidates_path);
  cmd_mine(cfg);
  EXPECT_EQ(read_file(summary.candidates_path), first);
  const auto bench = read_benchmark_file(summary.candidates_path);
  EXPECT_TRUE(bench.manifest.unprobed);
  EXPECT_EQ(bench.manifest.config_digest, cfg.digest());
  for (const auto& s : bench.samples) {
    EXPECT_EQ(s.file_duplicates, 5u);
    EXPECT_GE(s.span_duplicates, 1u);
    EXPECT_NE(s.category, Category::kUnknown);
  }
  EXPECT_TRUE(fs::exists(dir_ / "candidates.skipped.jsonl"));
}

TEST_F(Pipeline, MineWithoutDuplicatesFails) {
  fs::remove_all(dir_ / "corpus");
  mt::write_corpus_dir(mt::synthetic_corpus(20, 4, 13), dir_ / "corpus");
  EXPECT_THROW(cmd_mine(load_config(config_)), DataError);
  EXPECT_EQ(run_cli("-c " + config_.string() + " mine"), 2);
}

TEST_F(Pipeline, SpanDuplicateMining) {
  auto cfg_json = base_config(dir_);
  cfg_json["mining"] = {{"mode", "span_dup"}, {"min_file_duplicates", 1}, {"min_span_duplicates", 5}, {"seed", 3}};
  const auto cfg = config_from_json(cfg_json);
  const auto summary = cmd_mine(cfg);
  EXPECT_GT(summary.candidates, 0u);
  for (const auto& s : read_benchmark_file(summary.candidates_path).samples) EXPECT_GE(s.span_duplicates, 5u);
}

TEST_F(Pipeline, EndToEndPlantedRecovery) {
  const auto cfg = load_config(config_);
  cmd_mine(cfg);
  const auto bench = cmd_build(cfg, dir_ / "candidates.jsonl");
  ASSERT_EQ(bench.samples.size(), 150u);
  const auto bench_path = dir_ / "benchmark.jsonl";
  EXPECT_EQ(read_benchmark_file(bench_path).digest(), bench.digest());

  const auto full = cmd_attack(cfg, bench_path, "builder");
  EXPECT_EQ(full.judged, 150u);
  const auto partial = cmd_attack(cfg, bench_path, "partial");
  EXPECT_DOUBLE_EQ(exact_match_rate(read_results_file(full.results_path).results), 1.0);
  EXPECT_DOUBLE_EQ(exact_match_rate(read_results_file(partial.results_path).results), 0.4);

  const auto report = cmd_report(cfg, {full.results_path, partial.results_path}, {bench_path, {}, {}, 3});
  ASSERT_TRUE(report.overlap);
  EXPECT_EQ(report.overlap->at("builder", "partial"), 1.0);
  EXPECT_EQ(report.overlap->at("partial", "builder"), 0.4);
  EXPECT_EQ(*report.histogram, (std::vector<std::size_t>{0, 90, 60}));
  const auto summary = read_file(dir_ / "report" / "summary.tsv");
  EXPECT_NE(summary.find("builder\t350\t1.000\t1.000\n"), std::string::npos);
  EXPECT_NE(summary.find("# config_digest: " + cfg.digest()), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "report" / "categories.tsv"));
  EXPECT_TRUE(fs::exists(dir_ / "report" / "overlap.tsv"));
}

TEST_F(Pipeline, CliRunsEveryStage) {
  const auto c = "-c " + config_.string();
  ASSERT_EQ(run_cli(c + " mine"), 0);
  ASSERT_EQ(run_cli(c + " build --candidates " + (dir_ / "candidates.jsonl").string()), 0);
  ASSERT_EQ(run_cli(c + " attack --benchmark " + (dir_ / "benchmark.jsonl").string() + " -g partial"), 0);
  ASSERT_EQ(run_cli(c + " report " + (dir_ / "results.partial.jsonl").string()), 0);
  const auto summary = read_file(dir_ / "report" / "summary.tsv");
  EXPECT_NE(summary.find("partial\t2000\t0.400\t"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir_ / "report" / "overlap.tsv"));

  // --set overrides change the recorded config digest.
  ASSERT_EQ(run_cli(c + " --set game.attack_prefix_tokens=30 attack --benchmark " +
                    (dir_ / "benchmark.jsonl").string() + " -g partial -o " + (dir_ / "k30.jsonl").string()),
            0);
  const auto k30 = read_results_file(dir_ / "k30.jsonl");
  EXPECT_EQ(k30.manifest.at("game").at("attack_prefix_tokens"), 30);
  EXPECT_NE(k30.manifest.at("config_digest"), read_results_file(dir_ / "results.partial.jsonl").manifest.at("config_digest"));
}

TEST_F(Pipeline, CliExitCodes) {
  EXPECT_EQ(run_cli("mine"), 1);
  EXPECT_EQ(run_cli("-c " + config_.string()), 1);
  EXPECT_EQ(run_cli("-c " + (dir_ / "absent.json").string() + " mine"), 1);
  EXPECT_EQ(run_cli("-c " + config_.string() + " build --candidates " + (dir_ / "absent.jsonl").string()), 2);

  // An unreachable endpoint exits 3 and leaves a resumable run behind.
  auto cfg_json = base_config(dir_);
  cfg_json["generators"].push_back({{"name", "remote"},
                                    {"kind", "remote_endpoint"},
                                    {"url", "http://127.0.0.1:1/v1/completions"},
                                    {"retries", 0},
                                    {"timeout_s", 2}});
  const auto cfg_path = write_config(dir_, cfg_json);
  const auto cfg = load_config(cfg_path);
  cmd_mine(cfg);
  cmd_build(cfg, dir_ / "candidates.jsonl");
  EXPECT_EQ(run_cli("-c " + cfg_path.string() + " attack --benchmark " + (dir_ / "benchmark.jsonl").string() +
                    " -g remote"),
            3);
  EXPECT_FALSE(fs::exists(dir_ / "results.remote.jsonl"));
  EXPECT_EQ(run_cli("-c " + cfg_path.string() + " attack --benchmark " + (dir_ / "benchmark.jsonl").string() +
                    " -g nobody"),
            1);
}

TEST_F(Pipeline, AttackResumesFromPartialFile) {
  const auto cfg = load_config(config_);
  cmd_mine(cfg);
  const auto bench = cmd_build(cfg, dir_ / "candidates.jsonl");
  const auto bench_path = dir_ / "benchmark.jsonl";
  const auto reference = read_results_file(cmd_attack(cfg, bench_path, "partial").results_path);

  // Simulate an interrupted run: 40 finished lines and a torn last line.
  const auto out = dir_ / "resumed.jsonl";
  {
    std::ofstream partial(dir_ / "resumed.jsonl.partial");
    for (std::size_t i = 0; i < 40; ++i) partial << dump_json(to_json(reference.results[i])) << "\n";
    partial << R"({"sample_id":"tor)";
  }
  const auto resumed = cmd_attack(cfg, bench_path, "partial", out);
  EXPECT_EQ(resumed.resumed, 40u);
  EXPECT_EQ(resumed.judged, 110u);
  EXPECT_FALSE(fs::exists(dir_ / "resumed.jsonl.partial"));
  const auto after = read_results_file(out);
  ASSERT_EQ(after.results.size(), reference.results.size());
  for (std::size_t i = 0; i < after.results.size(); ++i) {
    EXPECT_EQ(dump_json(to_json(after.results[i])), dump_json(to_json(reference.results[i])));
  }
  // A finished run resumes to a no-op.
  EXPECT_EQ(cmd_attack(cfg, bench_path, "partial", out).judged, 0u);
}

TEST_F(Pipeline, DigestMismatchesAreRefused) {
  const auto cfg = load_config(config_);
  cmd_mine(cfg);
  cmd_build(cfg, dir_ / "candidates.jsonl");
  const auto bench_path = dir_ / "benchmark.jsonl";
  const auto a = cmd_attack(cfg, bench_path, "partial").results_path;

  auto other = read_benchmark_file(bench_path);
  other.samples.pop_back();
  const auto other_path = dir_ / "other.jsonl";
  write_file_atomic(other_path, write_benchmark(other));
  const auto b = cmd_attack(cfg, other_path, "partial", dir_ / "other_results.jsonl").results_path;

  EXPECT_THROW(cmd_report(cfg, {a, b}), DataError);
  EXPECT_EQ(run_cli("-c " + config_.string() + " report " + a.string() + " " + b.string()), 2);
  EXPECT_THROW(cmd_report(cfg, {b}, {bench_path, {}, {}, 3}), DataError);
  // Resuming into a results file from another benchmark is refused too.
  EXPECT_THROW(cmd_attack(cfg, other_path, "partial", a), DataError);
  EXPECT_THROW(cmd_attack(cfg, dir_ / "candidates.jsonl", "partial"), DataError);
}

TEST_F(Pipeline, ReportAppliesCategoryOverrides) {
  const auto cfg = load_config(config_);
  cmd_mine(cfg);
  const auto bench = cmd_build(cfg, dir_ / "candidates.jsonl");
  const auto bench_path = dir_ / "benchmark.jsonl";
  const auto results = cmd_attack(cfg, bench_path, "builder").results_path;
  {
    std::ofstream o(dir_ / "labels.jsonl");
    for (std::size_t i = 0; i < 15; ++i) o << R"({"sample_id":")" << bench.samples[i].id << R"(","category":"License"})" << "\n";
  }
  const auto report = cmd_report(cfg, {results}, {bench_path, dir_ / "labels.jsonl", {}, 3});
  EXPECT_EQ(report.categories.at("builder").at(Category::kLicense).total, 15u);
  const auto cats = read_file(dir_ / "report" / "categories.tsv");
  EXPECT_NE(cats.find("# override_fraction: 0.100000"), std::string::npos);
}

TEST_F(Pipeline, ImportProducesAttackOnlyBenchmark) {
  const auto cfg = load_config(config_);
  {
    std::ofstream o(dir_ / "records.jsonl");
    o << R"({"id":"x1","prefix":"def value(a):\n    return","suffix":" a + 1\n"})" << "\n";
  }
  EXPECT_EQ(run_cli("-c " + config_.string() + " import --records " + (dir_ / "records.jsonl").string() + " -o " +
                    (dir_ / "imported.jsonl").string()),
            0);
  const auto b = read_benchmark_file(dir_ / "imported.jsonl");
  ASSERT_EQ(b.samples.size(), 1u);
  EXPECT_TRUE(b.manifest.attack_only);
  EXPECT_EQ(b.samples[0].suffix.text, " a + 1\n");
}

TEST_F(Pipeline, ConfigValidation) {
  auto j = base_config(dir_);
  j["mining"]["span_len"] = 100;
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = base_config(dir_);
  j["generators"][0]["tokenizer"] = "missing";
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = base_config(dir_);
  j["generators"][1]["name"] = "builder";
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = base_config(dir_);
  apply_config_override(j, "build.target_size=7");
  apply_config_override(j, "game.victory.kind=fuzzy");
  apply_config_override(j, "game.victory.threshold=0.5");
  const auto cfg = config_from_json(j);
  EXPECT_EQ(cfg.target_size, 7u);
  EXPECT_EQ(cfg.game.victory.kind, VictoryKind::kFuzzy);
  EXPECT_THROW(apply_config_override(j, "novalue"), ConfigError);
}
