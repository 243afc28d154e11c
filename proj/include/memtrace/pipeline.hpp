#pragma once

// Pipeline stages behind the command-line tool: mine -> build -> attack -> report.
// Every output embeds the digest of the run configuration it came from.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "memtrace/categorize.hpp"
#include "memtrace/corpus.hpp"
#include "memtrace/extraction_game.hpp"
#include "memtrace/metrics.hpp"
#include "memtrace/model_client.hpp"
#include "memtrace/tokenization.hpp"
#include "memtrace/util.hpp"

namespace memtrace {

namespace fs = std::filesystem;

enum class MiningMode { kFileDup, kSpanDup };

struct MiningConfig {
  MiningMode mode = MiningMode::kFileDup;
  std::size_t min_tokens = 150;
  std::size_t min_file_duplicates = 5;
  std::size_t min_span_duplicates = 5;
  std::size_t span_len = 150;
  std::size_t per_file = 1;
  std::uint64_t seed = 0;
};

struct TokenizerSpec {
  std::string name;
  fs::path vocab;
  fs::path merges;
  Pretokenizer pretokenizer = Pretokenizer::kGpt2;
};

struct GeneratorSpec {
  GeneratorRef ref;
  RemoteConfig remote;
  // mock_memoriser only
  fs::path training;
  std::size_t capacity = 0;
  std::size_t match_length = 32;
  std::uint64_t seed = 0;
  std::string fallback_token = std::string(MockMemoriser::kDefaultFallback);
};

struct RunConfig {
  fs::path corpus_source;
  std::vector<TokenizerSpec> tokenizers;
  std::string benchmark_tokenizer;
  MiningConfig mining;
  GameConfig game;
  std::string builder;
  std::vector<GeneratorSpec> generators;
  std::size_t target_size = 1000;
  std::uint64_t build_seed = 0;
  fs::path output_dir = "out";
  std::size_t workers = 4;
  CategoryRules categories;
  nlohmann::json raw;

  std::string digest() const { return digest_hex(raw.dump()); }

  const GeneratorSpec& generator(const std::string& name) const {
    for (const auto& g : generators) {
      if (g.ref.name == name) return g;
    }
    throw ConfigError("no generator named '" + name + "' in the run config");
  }
};

namespace detail {

inline fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace detail

/// Applies "a.b.c=value" overrides; values parse as JSON when they can and
/// are taken as strings otherwise.
inline void apply_config_override(nlohmann::json& raw, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::json* cur = &raw;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("bad override key " + key);
    if (!cur->is_object()) *cur = nlohmann::json::object();
    if (dot == std::string::npos) {
      (*cur)[part] = value;
      return;
    }
    cur = &(*cur)[part];
    start = dot + 1;
  }
}

inline RunConfig config_from_json(const nlohmann::json& raw, const fs::path& base_dir = {}) {
  RunConfig c;
  c.raw = raw;
  try {
    if (raw.contains("corpus")) c.corpus_source = detail::resolve(base_dir, raw["corpus"].get<std::string>());
    for (const auto& t : raw.value("tokenizers", nlohmann::json::array())) {
      TokenizerSpec spec;
      spec.name = t.at("name").get<std::string>();
      spec.vocab = detail::resolve(base_dir, t.at("vocab").get<std::string>());
      spec.merges = detail::resolve(base_dir, t.at("merges").get<std::string>());
      const auto pre = t.value("pretokenizer", std::string("gpt2"));
      if (pre == "gpt2") {
        spec.pretokenizer = Pretokenizer::kGpt2;
      } else if (pre == "none") {
        spec.pretokenizer = Pretokenizer::kNone;
      } else {
        throw ConfigError("unknown pretokenizer '" + pre + "'");
      }
      c.tokenizers.push_back(std::move(spec));
    }
    c.benchmark_tokenizer = raw.value("benchmark_tokenizer",
                                      c.tokenizers.empty() ? std::string() : c.tokenizers.front().name);
    if (raw.contains("mining")) {
      const auto& m = raw["mining"];
      const auto mode = m.value("mode", std::string("file_dup"));
      if (mode == "file_dup") {
        c.mining.mode = MiningMode::kFileDup;
      } else if (mode == "span_dup") {
        c.mining.mode = MiningMode::kSpanDup;
      } else {
        throw ConfigError("unknown mining mode '" + mode + "'");
      }
      c.mining.min_tokens = m.value("min_tokens", c.mining.min_tokens);
      c.mining.min_file_duplicates = m.value("min_file_duplicates", c.mining.min_file_duplicates);
      c.mining.min_span_duplicates = m.value("min_span_duplicates", c.mining.min_span_duplicates);
      c.mining.span_len = m.value("span_len", c.mining.span_len);
      c.mining.per_file = m.value("per_file", c.mining.per_file);
      c.mining.seed = m.value("seed", c.mining.seed);
    }
    c.game = game_config_from_json(raw.value("game", nlohmann::json::object()));
    c.builder = raw.value("builder", std::string());
    std::set<std::string> names;
    for (const auto& g : raw.value("generators", nlohmann::json::array())) {
      GeneratorSpec spec;
      spec.ref = generator_ref_from_json(g);
      if (spec.ref.tokenizer_name.empty()) spec.ref.tokenizer_name = c.benchmark_tokenizer;
      if (!names.insert(spec.ref.name).second) throw ConfigError("duplicate generator name " + spec.ref.name);
      if (spec.ref.kind == GeneratorKind::kRemoteEndpoint) {
        spec.remote.url = g.at("url").get<std::string>();
        spec.remote.response_field = g.value("response_field", spec.remote.response_field);
        spec.remote.auth_env = g.value("auth_env", std::string());
        spec.remote.max_in_flight = g.value("max_in_flight", spec.remote.max_in_flight);
        spec.remote.retries = g.value("retries", spec.remote.retries);
        spec.remote.backoff = std::chrono::milliseconds(g.value("backoff_ms", std::int64_t{500}));
        spec.remote.timeout = std::chrono::seconds(g.value("timeout_s", std::int64_t{120}));
        if (g.contains("context_limit")) spec.remote.context_limit = g["context_limit"].get<std::size_t>();
      } else {
        spec.training = detail::resolve(base_dir, g.at("training").get<std::string>());
        spec.capacity = g.at("capacity").get<std::size_t>();
        spec.match_length = g.value("match_length", spec.match_length);
        spec.seed = g.value("seed", spec.seed);
        spec.fallback_token = g.value("fallback_token", spec.fallback_token);
      }
      c.generators.push_back(std::move(spec));
    }
    if (raw.contains("build")) {
      c.target_size = raw["build"].value("target_size", c.target_size);
      c.build_seed = raw["build"].value("seed", c.build_seed);
    }
    c.output_dir = detail::resolve(base_dir, raw.value("output_dir", std::string("out")));
    c.workers = raw.value("workers", c.workers);
    if (raw.contains("categories")) c.categories = category_rules_from_json(raw["categories"]);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  if (c.mining.span_len == 0 || c.mining.span_len % 3 != 0) {
    throw ConfigError("mining.span_len must split into three equal parts");
  }
  for (const auto& g : c.generators) {
    bool known = false;
    for (const auto& t : c.tokenizers) known |= t.name == g.ref.tokenizer_name;
    if (!known) throw ConfigError("generator " + g.ref.name + " names unknown tokenizer " + g.ref.tokenizer_name);
  }
  return c;
}

inline RunConfig load_config(const fs::path& path, const std::vector<std::string>& overrides = {}) {
  nlohmann::json raw;
  try {
    raw = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  for (const auto& o : overrides) apply_config_override(raw, o);
  return config_from_json(raw, path.parent_path());
}

inline TokenizerRegistry load_tokenizers(const RunConfig& cfg) {
  TokenizerRegistry reg;
  for (const auto& t : cfg.tokenizers) {
    reg.add(std::make_shared<const Tokenizer>(Tokenizer::load_files(t.vocab, t.merges, t.name, t.pretokenizer)));
  }
  if (!reg.contains(cfg.benchmark_tokenizer)) {
    throw ConfigError("benchmark tokenizer '" + cfg.benchmark_tokenizer + "' is not configured");
  }
  return reg;
}

inline std::unique_ptr<Generator> make_generator(const GeneratorSpec& spec, const TokenizerRegistry& tokenizers) {
  auto tok = tokenizers.get(spec.ref.tokenizer_name);
  if (spec.ref.kind == GeneratorKind::kRemoteEndpoint) {
    return std::make_unique<RemoteGenerator>(spec.ref, spec.remote, tok);
  }
  const auto training = read_benchmark_file(spec.training);
  return build_mock(training.samples, spec.capacity, spec.match_length, spec.seed, spec.ref, tok,
                    spec.fallback_token);
}

inline std::string corpus_digest(std::span<const CorpusFile> files) {
  std::uint64_t h = kFnvOffset;
  for (const auto& f : files) {
    h = fnv1a64(f.path, h);
    h = fnv1a64(hex64(f.content_hash), h);
  }
  return hex64(h);
}

struct MineSummary {
  fs::path candidates_path;
  std::size_t ingested = 0;
  std::size_t skipped_files = 0;
  std::size_t kept_files = 0;
  std::size_t candidates = 0;
};

/// ingest -> filter -> (span counts) -> sample -> split -> dedupe -> categorise.
/// The output is in benchmark format with an "unprobed" manifest.
inline MineSummary cmd_mine(const RunConfig& cfg, std::optional<fs::path> out = std::nullopt) {
  const auto tokenizers = load_tokenizers(cfg);
  const auto tok = tokenizers.get(cfg.benchmark_tokenizer);
  const auto& m = cfg.mining;
  const fs::path out_path = out.value_or(cfg.output_dir / "candidates.jsonl");

  auto ingested = ingest(cfg.corpus_source);
  auto skipped = std::move(ingested.skipped);
  const auto files = filter_files(ingested.files, *tok, m.min_tokens, m.min_file_duplicates);

  std::vector<CandidateSample> candidates;
  if (m.mode == MiningMode::kSpanDup) {
    const auto counts = count_span_duplicates(files, *tok, m.span_len);
    candidates = sample_duplicated_spans(files, *tok, counts, m.min_span_duplicates, m.per_file, m.seed, &skipped);
  } else {
    candidates = sample_spans(files, *tok, m.per_file, m.seed, m.span_len, &skipped);
  }
  candidates = dedupe_spans(std::move(candidates));
  if (candidates.empty()) {
    throw DataError("no candidate spans: no file passed the length and duplicate filters");
  }
  annotate_span_duplicates(candidates, count_span_duplicates(ingested.files, *tok, m.span_len));
  assign_categories(candidates, cfg.categories);

  Benchmark b;
  b.samples = std::move(candidates);
  b.manifest.tokenizer_name = tok->name();
  b.manifest.seed = m.seed;
  b.manifest.config = cfg.game;
  b.manifest.builder_generator = nullptr;
  b.manifest.corpus_digest = corpus_digest(ingested.files);
  b.manifest.config_digest = cfg.digest();
  b.manifest.unprobed = true;
  write_file_atomic(out_path, write_benchmark(b));
  auto skip_path = out_path;
  skip_path.replace_extension(".skipped.jsonl");
  write_file_atomic(skip_path, skip_report_jsonl(skipped));

  return {out_path, ingested.files.size() + ingested.skipped.size(), ingested.skipped.size(), files.size(),
          b.samples.size()};
}

inline Benchmark cmd_build(const RunConfig& cfg, const fs::path& candidates_path,
                           std::optional<fs::path> out = std::nullopt) {
  if (cfg.builder.empty()) throw ConfigError("run config names no builder generator");
  const auto tokenizers = load_tokenizers(cfg);
  const auto candidates = read_benchmark_file(candidates_path);
  const auto tok = tokenizers.get(candidates.manifest.tokenizer_name);
  auto gen = make_generator(cfg.generator(cfg.builder), tokenizers);
  auto bench = build_benchmark(candidates.samples, *gen, cfg.target_size, cfg.build_seed, cfg.game, *tok,
                               {cfg.workers, candidates.manifest.corpus_digest, cfg.digest()});
  write_file_atomic(out.value_or(cfg.output_dir / "benchmark.jsonl"), write_benchmark(bench));
  return bench;
}

/// Converts prefix/suffix-only records into an attack-only benchmark file.
inline Benchmark cmd_import(const RunConfig& cfg, const fs::path& records, const fs::path& out) {
  const auto tokenizers = load_tokenizers(cfg);
  std::ifstream in(records, std::ios::binary);
  if (!in) throw DataError("cannot open " + records.string());
  auto bench = import_prefix_suffix(in, *tokenizers.get(cfg.benchmark_tokenizer), cfg.game);
  bench.manifest.config_digest = cfg.digest();
  bench.manifest.created = utc_timestamp();
  write_file_atomic(out, write_benchmark(bench));
  return bench;
}

struct ResultsFile {
  nlohmann::json manifest;
  std::vector<AttackResult> results;

  std::string benchmark_digest() const { return manifest.value("benchmark_digest", std::string()); }
  GeneratorRef generator() const { return generator_ref_from_json(manifest.at("generator")); }
};

inline std::string write_results(const ResultsFile& f) {
  std::string out = dump_json({{"manifest", f.manifest}});
  out += '\n';
  for (const auto& r : f.results) {
    out += dump_json(to_json(r));
    out += '\n';
  }
  return out;
}

inline ResultsFile read_results_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open results " + path.string());
  ResultsFile f;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (line_no == 1 && j.contains("manifest")) {
      f.manifest = j["manifest"];
      continue;
    }
    f.results.push_back(attack_result_from_json(j));
  }
  if (!f.manifest.is_object()) throw DataError(path.string() + ": missing manifest record");
  return f;
}

struct AttackSummary {
  fs::path results_path;
  std::size_t resumed = 0;
  std::size_t judged = 0;
  std::size_t skipped = 0;
  std::size_t failures = 0;
};

/// Runs one generator over a benchmark. Finished samples are appended to
/// `<out>.partial` as they complete so an interrupted run resumes by id; the
/// final file (manifest + results in benchmark order) is written once every
/// sample has a verdict.
inline AttackSummary cmd_attack(const RunConfig& cfg, const fs::path& benchmark_path,
                                const std::string& generator_name, std::optional<fs::path> out = std::nullopt) {
  const auto tokenizers = load_tokenizers(cfg);
  const auto bench = read_benchmark_file(benchmark_path);
  if (bench.manifest.unprobed) throw DataError("refusing to attack an unprobed candidates file");
  const auto& spec = cfg.generator(generator_name);
  auto gen = make_generator(spec, tokenizers);
  const fs::path out_path = out.value_or(cfg.output_dir / ("results." + generator_name + ".jsonl"));
  auto partial_path = out_path;
  partial_path += ".partial";

  std::unordered_map<std::string, AttackResult> done;
  auto absorb = [&](const fs::path& p, bool with_manifest) {
    if (!fs::exists(p)) return;
    std::ifstream in(p, std::ios::binary);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) continue;  // torn final line of an interrupted run
      if (first && with_manifest && j.contains("manifest")) {
        if (j["manifest"].value("benchmark_digest", std::string()) != bench.digest()) {
          throw DataError(p.string() + " was produced from a different benchmark");
        }
        first = false;
        continue;
      }
      first = false;
      auto r = attack_result_from_json(j);
      done.insert_or_assign(r.sample_id, std::move(r));
    }
  };
  absorb(out_path, true);
  absorb(partial_path, false);

  AttackSummary summary;
  summary.results_path = out_path;
  summary.resumed = done.size();

  AttackOptions opts;
  opts.workers = cfg.workers;
  for (const auto& [id, r] : done) opts.skip_ids.insert(id);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  std::ofstream partial(partial_path, std::ios::binary | std::ios::app);
  opts.on_result = [&](const AttackResult& r) {
    if (r.retryable) return;
    partial << dump_json(to_json(r)) << '\n';
    partial.flush();
  };
  for (auto& r : run_attack(bench, *gen, cfg.game, tokenizers, opts)) {
    if (r.retryable) {
      ++summary.failures;
      continue;
    }
    ++summary.judged;
    done.insert_or_assign(r.sample_id, std::move(r));
  }
  partial.close();
  if (summary.failures > 0) {
    throw EndpointError(std::to_string(summary.failures) + " samples failed against " + generator_name +
                        "; rerun the same command to resume");
  }

  ResultsFile file;
  file.manifest = {{"generator", to_json(spec.ref)},
                   {"request", gen->describe()},
                   {"benchmark", benchmark_path.filename().string()},
                   {"benchmark_digest", bench.digest()},
                   {"benchmark_tokenizer", bench.manifest.tokenizer_name},
                   {"config_digest", cfg.digest()},
                   {"game", to_json(cfg.game)},
                   {"victory_basis", std::string(kVictoryBasis)}};
  for (const auto& s : bench.samples) {
    auto it = done.find(s.id);
    if (it == done.end()) continue;
    summary.skipped += it->second.skipped;
    file.results.push_back(it->second);
  }
  write_file_atomic(out_path, write_results(file));
  fs::remove(partial_path);
  return summary;
}

struct ReportOptions {
  std::optional<fs::path> benchmark;
  std::optional<fs::path> overrides;
  std::optional<fs::path> out_dir;
  int precision = 3;
};

struct ReportOutput {
  std::vector<RunReport> runs;
  std::optional<OverlapMatrix> overlap;
  std::optional<std::vector<std::size_t>> histogram;
  std::optional<double> em_bleu_pearson;
  std::optional<double> em_log_params_pearson;
  std::map<std::string, std::map<Category, CategoryTally>> categories;  // per model
  std::vector<fs::path> written;
};

namespace detail {

inline std::string fixed(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

}  // namespace detail

/// Emits summary.tsv ({model, parameters_millions, em, bleu4}), runs.tsv, and,
/// when two or more results files are given, overlap.tsv and
/// memorisation_counts.tsv. categories.tsv needs the benchmark file.
inline ReportOutput cmd_report(const RunConfig& cfg, const std::vector<fs::path>& results_paths,
                               const ReportOptions& opts = {}) {
  if (results_paths.empty()) throw ConfigError("report needs at least one results file");
  std::vector<ResultsFile> files;
  for (const auto& p : results_paths) files.push_back(read_results_file(p));
  const auto digest = files.front().benchmark_digest();
  for (std::size_t i = 1; i < files.size(); ++i) {
    if (files[i].benchmark_digest() != digest) {
      throw DataError("results " + results_paths[i].string() + " come from a different benchmark (" +
                      files[i].benchmark_digest() + " vs " + digest + ")");
    }
  }

  std::vector<CandidateSample> samples;
  std::string bench_manifest = "null";
  if (opts.benchmark) {
    auto bench = read_benchmark_file(*opts.benchmark);
    if (bench.digest() != digest) throw DataError("results do not belong to benchmark " + opts.benchmark->string());
    samples = std::move(bench.samples);
    bench_manifest = dump_json(to_json(bench.manifest));
    if (opts.overrides) {
      std::ifstream in(*opts.overrides, std::ios::binary);
      if (!in) throw DataError("cannot open overrides " + opts.overrides->string());
      samples = apply_overrides(std::move(samples), read_overrides(in));
    }
  }

  ReportOutput out;
  MemorisationSets mem_sets;
  for (const auto& f : files) {
    auto ref = f.generator();
    if (!ref.parameter_count_millions) {
      for (const auto& g : cfg.generators) {
        if (g.ref.name == ref.name) ref.parameter_count_millions = g.ref.parameter_count_millions;
      }
    }
    out.runs.push_back(summarize(ref, f.results, samples));
    mem_sets.emplace_back(ref.name, memorised_ids(f.results));
    if (!samples.empty()) out.categories[ref.name] = category_breakdown(f.results, samples);
  }

  const fs::path dir = opts.out_dir.value_or(cfg.output_dir / "report");
  std::string header = "# config_digest: " + cfg.digest() + "\n# benchmark_digest: " + digest +
                       "\n# benchmark_manifest: " + bench_manifest + "\n# results:";
  for (const auto& p : results_paths) header += " " + p.filename().string();
  header += "\n";
  auto emit = [&](const std::string& name, const std::string& body) {
    write_file_atomic(dir / name, header + body);
    out.written.push_back(dir / name);
  };

  std::string summary = "model\tparameters_millions\tem\tbleu4\n";
  std::string runs = "model\tcounted\tskipped\tvictory_rate\n";
  for (const auto& r : out.runs) {
    summary += r.generator.name + "\t" +
               (r.generator.parameter_count_millions ? std::to_string(*r.generator.parameter_count_millions) : "") +
               "\t" + detail::fixed(r.em_rate, opts.precision) + "\t" + detail::fixed(r.mean_bleu4, opts.precision) +
               "\n";
    runs += r.generator.name + "\t" + std::to_string(r.counted) + "\t" + std::to_string(r.skipped) + "\t" +
            detail::fixed(r.victory_rate, opts.precision) + "\n";
  }
  emit("summary.tsv", summary);
  emit("runs.tsv", runs);

  std::vector<double> em, bleu, log_params;
  for (const auto& r : out.runs) {
    em.push_back(r.em_rate);
    bleu.push_back(r.mean_bleu4);
    if (r.generator.parameter_count_millions) {
      log_params.push_back(std::log(static_cast<double>(*r.generator.parameter_count_millions)));
    }
  }
  std::string corr = "pair\tpearson\n";
  auto try_pearson = [](const std::vector<double>& xs, const std::vector<double>& ys) -> std::optional<double> {
    if (xs.size() < 2 || xs.size() != ys.size()) return std::nullopt;
    try {
      return pearson(xs, ys);
    } catch (const std::domain_error&) {
      return std::nullopt;
    }
  };
  out.em_bleu_pearson = try_pearson(em, bleu);
  out.em_log_params_pearson = try_pearson(em, log_params);
  if (out.em_bleu_pearson) corr += "em~bleu4\t" + detail::fixed(*out.em_bleu_pearson, 6) + "\n";
  if (out.em_log_params_pearson) corr += "em~log_parameters\t" + detail::fixed(*out.em_log_params_pearson, 6) + "\n";
  emit("correlations.tsv", corr);

  if (files.size() >= 2) {
    out.overlap = overlap_matrix(mem_sets);
    std::string body = "model";
    for (const auto& n : out.overlap->model_names) body += "\t" + n;
    body += "\n";
    for (std::size_t a = 0; a < out.overlap->model_names.size(); ++a) {
      body += out.overlap->model_names[a];
      for (double v : out.overlap->cells[a]) body += "\t" + detail::fixed(v, 6);
      body += "\n";
    }
    emit("overlap.tsv", body);

    std::vector<std::string> ids;
    if (!samples.empty()) {
      for (const auto& s : samples) ids.push_back(s.id);
    } else {
      std::set<std::string> all;
      for (const auto& f : files) {
        for (const auto& r : f.results) all.insert(r.sample_id);
      }
      ids.assign(all.begin(), all.end());
    }
    out.histogram = memorisation_counts(mem_sets, ids);
    std::string hist = "models_memorising\tsamples\n";
    for (std::size_t c = 0; c < out.histogram->size(); ++c) {
      hist += std::to_string(c) + "\t" + std::to_string((*out.histogram)[c]) + "\n";
    }
    emit("memorisation_counts.tsv", hist);
  }

  if (!samples.empty()) {
    std::string cats = "# override_fraction: " + detail::fixed(override_fraction(samples), 6) +
                       "\nmodel\tcategory\tmemorised\ttotal\trate\n";
    for (const auto& r : out.runs) {
      for (const auto& [cat, tally] : out.categories[r.generator.name]) {
        cats += r.generator.name + "\t" + std::string(to_string(cat)) + "\t" + std::to_string(tally.memorised) +
                "\t" + std::to_string(tally.total) + "\t" + detail::fixed(tally.rate(), 6) + "\n";
      }
    }
    emit("categories.tsv", cats);
  }
  return out;
}

}  // namespace memtrace
