#pragma once

// The extraction game: certify which candidate spans a builder model
// reproduces from a 100-token context, freeze those into a benchmark, then
// challenge other models to reproduce each suffix from the prefix alone.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <istream>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "memtrace/bleu.hpp"
#include "memtrace/model_client.hpp"
#include "memtrace/sample.hpp"
#include "memtrace/tokenization.hpp"
#include "memtrace/util.hpp"

namespace memtrace {

enum class VictoryKind { kExact, kFuzzy };

struct Victory {
  VictoryKind kind = VictoryKind::kExact;
  double threshold = 1.0;  // BLEU-4 threshold, fuzzy only

  static Victory exact() { return {}; }
  static Victory fuzzy(double threshold) { return {VictoryKind::kFuzzy, threshold}; }
};

struct GameConfig {
  std::size_t probe_prompt_tokens = 100;
  std::size_t attack_prefix_tokens = 50;  // k
  std::size_t suffix_tokens = 50;
  Victory victory;

  void validate() const {
    if (attack_prefix_tokens == 0 || attack_prefix_tokens > probe_prompt_tokens) {
      throw ConfigError("attack prefix length must be in (0, probe prompt length]");
    }
    if (suffix_tokens == 0) throw ConfigError("suffix length must be positive");
    if (victory.kind == VictoryKind::kFuzzy && !(victory.threshold > 0.0 && victory.threshold <= 1.0)) {
      throw ConfigError("fuzzy victory threshold must be in (0, 1]");
    }
  }
};

inline nlohmann::json to_json(const GameConfig& c) {
  nlohmann::json v = {{"kind", c.victory.kind == VictoryKind::kExact ? "exact" : "fuzzy"}};
  if (c.victory.kind == VictoryKind::kFuzzy) v["threshold"] = c.victory.threshold;
  return {{"probe_prompt_tokens", c.probe_prompt_tokens},
          {"attack_prefix_tokens", c.attack_prefix_tokens},
          {"suffix_tokens", c.suffix_tokens},
          {"victory", v}};
}

inline GameConfig game_config_from_json(const nlohmann::json& j) {
  GameConfig c;
  c.probe_prompt_tokens = j.value("probe_prompt_tokens", c.probe_prompt_tokens);
  c.attack_prefix_tokens = j.value("attack_prefix_tokens", c.attack_prefix_tokens);
  c.suffix_tokens = j.value("suffix_tokens", c.suffix_tokens);
  if (j.contains("victory")) {
    const auto& v = j["victory"];
    const auto kind = v.is_string() ? v.get<std::string>() : v.value("kind", std::string("exact"));
    if (kind == "exact") {
      c.victory = Victory::exact();
    } else if (kind == "fuzzy") {
      c.victory = Victory::fuzzy(v.value("threshold", 0.0));
    } else {
      throw ConfigError("unknown victory condition '" + kind + "'");
    }
  }
  c.validate();
  return c;
}

// Recorded in every manifest so results are self-describing.
inline constexpr std::string_view kVictoryBasis =
    "decoded text; generation truncated to the reference suffix byte length";

struct BenchmarkManifest {
  nlohmann::json builder_generator;  // GeneratorRef, or null for imported sets
  std::string tokenizer_name;
  std::uint64_t seed = 0;
  GameConfig config;
  std::string corpus_digest;
  std::string created;
  std::string config_digest;
  bool unprobed = false;       // candidates file, not yet certified
  bool attack_only = false;    // imported prefix/suffix-only set
  bool under_target = false;
  std::size_t target_size = 0;
  std::size_t probed = 0;
  std::size_t probe_failures = 0;
  nlohmann::json builder_request;
};

inline nlohmann::json to_json(const BenchmarkManifest& m) {
  return {{"builder_generator", m.builder_generator},
          {"tokenizer", m.tokenizer_name},
          {"seed", m.seed},
          {"prng", std::string(SplitMix64::kName)},
          {"config", to_json(m.config)},
          {"corpus_digest", m.corpus_digest},
          {"created", m.created},
          {"config_digest", m.config_digest},
          {"unprobed", m.unprobed},
          {"attack_only", m.attack_only},
          {"under_target", m.under_target},
          {"target_size", m.target_size},
          {"probed", m.probed},
          {"probe_failures", m.probe_failures},
          {"builder_request", m.builder_request},
          {"victory_basis", std::string(kVictoryBasis)}};
}

inline BenchmarkManifest manifest_from_json(const nlohmann::json& j) {
  BenchmarkManifest m;
  m.builder_generator = j.value("builder_generator", nlohmann::json(nullptr));
  m.tokenizer_name = j.at("tokenizer").get<std::string>();
  m.seed = j.value("seed", std::uint64_t{0});
  m.config = game_config_from_json(j.value("config", nlohmann::json::object()));
  m.corpus_digest = j.value("corpus_digest", std::string());
  m.created = j.value("created", std::string());
  m.config_digest = j.value("config_digest", std::string());
  m.unprobed = j.value("unprobed", false);
  m.attack_only = j.value("attack_only", false);
  m.under_target = j.value("under_target", false);
  m.target_size = j.value("target_size", std::size_t{0});
  m.probed = j.value("probed", std::size_t{0});
  m.probe_failures = j.value("probe_failures", std::size_t{0});
  m.builder_request = j.value("builder_request", nlohmann::json(nullptr));
  return m;
}

struct Benchmark {
  std::vector<CandidateSample> samples;
  BenchmarkManifest manifest;

  /// Content digest over the sample records (manifest excluded), used to tie
  /// result files to the benchmark they were produced from.
  std::string digest() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& s : samples) {
      h = fnv1a64(dump_json(to_json(s)), h);
      h = fnv1a64("\n", h);
    }
    return hex64(h);
  }
};

/// Line 1 is {"manifest": {...}}, then one sample per line.
inline std::string write_benchmark(const Benchmark& b) {
  std::string out = dump_json({{"manifest", to_json(b.manifest)}});
  out += '\n';
  for (const auto& s : b.samples) {
    out += dump_json(to_json(s));
    out += '\n';
  }
  return out;
}

inline Benchmark read_benchmark(std::istream& in) {
  Benchmark b;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("benchmark line " + std::to_string(line_no) + ": " + e.what());
    }
    if (line_no == 1) {
      if (!j.contains("manifest")) throw DataError("benchmark file must start with a manifest record");
      try {
        b.manifest = manifest_from_json(j["manifest"]);
      } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
      }
      continue;
    }
    auto s = sample_from_json(j, b.manifest.tokenizer_name);
    if (!ids.insert(s.id).second) throw DataError("duplicate sample id " + s.id);
    b.samples.push_back(std::move(s));
  }
  if (line_no == 0) throw DataError("empty benchmark file");
  return b;
}

inline Benchmark read_benchmark_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open benchmark " + path.string());
  return read_benchmark(in);
}

/// Converts prefix/suffix-only records ({"prefix", "suffix"} as text, or
/// {"prefix_ids", "suffix_ids"}; optional "id") into an attack-only benchmark.
inline Benchmark import_prefix_suffix(std::istream& in, const Tokenizer& tok, const GameConfig& cfg = {}) {
  Benchmark b;
  b.manifest.tokenizer_name = tok.name();
  b.manifest.builder_generator = nullptr;
  b.manifest.attack_only = true;
  b.manifest.config = cfg;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> ids;
  auto part = [&](const nlohmann::json& j, const char* text_key, const char* ids_key) {
    if (j.contains(ids_key)) return tok.slice(j.at(ids_key).get<std::vector<TokenId>>());
    if (j.contains(text_key)) return tok.encode(j.at(text_key).get<std::string>());
    throw DataError(std::string("import record without ") + text_key);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CandidateSample s;
      s.id = j.contains("id") ? j["id"].get<std::string>() : sample_id("import", line_no);
      s.source_path = j.value("source_path", std::string("import"));
      s.pre_prefix.tokenizer_name = tok.name();
      s.prefix = part(j, "prefix", "prefix_ids");
      s.suffix = part(j, "suffix", "suffix_ids");
      if (s.prefix.empty() || s.suffix.empty()) throw DataError("import record with empty prefix or suffix");
      if (!ids.insert(s.id).second) throw DataError("duplicate sample id " + s.id);
      b.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("import line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (b.samples.empty()) throw DataError("no records to import");
  return b;
}

struct Judgement {
  bool exact_match = false;
  double bleu4 = 0.0;
  bool victory = false;
};

/// Exact match compares the generation, truncated to the reference byte
/// length, with the reference text. BLEU-4 is taken over `tok` encodings of
/// the same two strings.
inline Judgement judge(std::string_view generated_text, std::string_view reference_suffix,
                       const Victory& victory, const Tokenizer& tok) {
  if (reference_suffix.empty()) throw std::invalid_argument("judge: empty reference suffix");
  const auto truncated = generated_text.substr(0, reference_suffix.size());
  Judgement j;
  j.exact_match = truncated == reference_suffix;
  if (j.exact_match) {
    j.bleu4 = 1.0;
  } else {
    const auto cand = tok.encode_ids(truncated);
    const auto ref = tok.encode_ids(reference_suffix);
    j.bleu4 = bleu4(cand, ref);
  }
  j.victory = victory.kind == VictoryKind::kExact ? j.exact_match : j.bleu4 >= victory.threshold;
  return j;
}

/// True iff `gen` reproduces the suffix from pre_prefix + prefix. Always judged
/// by exact match, whatever victory condition the attack uses. Generator
/// errors propagate: the sample is then neither accepted nor rejected.
inline bool probe_extractability(const CandidateSample& sample, Generator& gen, const GameConfig& cfg,
                                 const Tokenizer& tok) {
  if (sample.attack_only()) throw DataError("sample " + sample.id + " has no pre-prefix and cannot be probed");
  if (sample.pre_prefix.size() + sample.prefix.size() != cfg.probe_prompt_tokens) {
    throw DataError("sample " + sample.id + " probe context is not " + std::to_string(cfg.probe_prompt_tokens) +
                    " tokens");
  }
  if (sample.suffix.size() != cfg.suffix_tokens) {
    throw DataError("sample " + sample.id + " suffix is not " + std::to_string(cfg.suffix_tokens) + " tokens");
  }
  const auto out = gen.complete({sample.probe_prompt(), sample.suffix.size()});
  return judge(out, sample.suffix.text, Victory::exact(), tok).exact_match;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct BuildOptions {
  std::size_t workers = 4;
  std::string corpus_digest;
  std::string config_digest;
};

/// Probes candidates in seeded random order until `target_size` are
/// extractable. Probing runs in rounds of `workers` parallel requests; within
/// a round, acceptance follows the shuffled order, so the result does not
/// depend on scheduling.
inline Benchmark build_benchmark(std::span<const CandidateSample> candidates, Generator& gen,
                                 std::size_t target_size, std::uint64_t seed, const GameConfig& cfg,
                                 const Tokenizer& tok, const BuildOptions& opts = {}) {
  cfg.validate();
  if (target_size == 0) throw ConfigError("benchmark target size must be positive");
  {
    std::unordered_set<std::string> ids;
    for (const auto& c : candidates) {
      if (!ids.insert(c.id).second) throw DataError("duplicate candidate id " + c.id);
    }
  }
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  seeded_shuffle(order, seed);

  Benchmark b;
  b.manifest.builder_generator = to_json(gen.ref());
  b.manifest.builder_request = gen.describe();
  b.manifest.tokenizer_name = tok.name();
  b.manifest.seed = seed;
  b.manifest.config = cfg;
  b.manifest.corpus_digest = opts.corpus_digest;
  b.manifest.config_digest = opts.config_digest;
  b.manifest.target_size = target_size;
  b.manifest.created = utc_timestamp();

  const std::size_t round = std::max<std::size_t>(1, opts.workers);
  std::size_t next = 0;
  while (next < order.size() && b.samples.size() < target_size) {
    const std::size_t batch = std::min(round, order.size() - next);
    std::vector<int> verdict(batch, 0);  // 1 extractable, 0 not, -1 generator failure
    parallel_for(batch, round, [&](std::size_t i) {
      try {
        verdict[i] = probe_extractability(candidates[order[next + i]], gen, cfg, tok) ? 1 : 0;
      } catch (const EndpointError&) {
        verdict[i] = -1;
      }
    });
    for (std::size_t i = 0; i < batch && b.samples.size() < target_size; ++i) {
      ++b.manifest.probed;
      if (verdict[i] < 0) ++b.manifest.probe_failures;
      if (verdict[i] == 1) b.samples.push_back(candidates[order[next + i]]);
    }
    next += batch;
  }
  if (b.samples.empty()) throw DataError("no extractable candidates: benchmark would be empty");
  b.manifest.under_target = b.samples.size() < target_size;
  return b;
}

struct AttackResult {
  std::string sample_id;
  std::string generated_text;
  bool exact_match = false;
  double bleu4 = 0.0;
  bool victory = false;
  bool skipped = false;
  std::string skip_reason;
  // Generator failures are skipped now but should be retried on resume.
  bool retryable = false;
};

inline nlohmann::json to_json(const AttackResult& r) {
  return {{"sample_id", r.sample_id}, {"generated_text", r.generated_text},
          {"exact_match", r.exact_match}, {"bleu4", r.bleu4},
          {"victory", r.victory},     {"skipped", r.skipped},
          {"skip_reason", r.skip_reason}};
}

inline AttackResult attack_result_from_json(const nlohmann::json& j) {
  try {
    AttackResult r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.generated_text = j.value("generated_text", std::string());
    r.exact_match = j.value("exact_match", false);
    r.bleu4 = j.value("bleu4", 0.0);
    r.victory = j.value("victory", r.exact_match);
    r.skipped = j.value("skipped", false);
    r.skip_reason = j.value("skip_reason", std::string());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed result record: ") + e.what());
  }
}

struct AttackOptions {
  std::size_t workers = 4;
  // Already-judged sample ids (resume).
  std::unordered_set<std::string> skip_ids;
  // Called once per finished sample, serialised.
  std::function<void(const AttackResult&)> on_result;
};

struct AttackPlan {
  std::string prompt;
  std::size_t max_new_tokens = 0;
  std::optional<std::string> skip_reason;
};

/// Builds the prefix-only prompt for one sample. With a foreign tokenizer the
/// prefix and suffix are re-encoded under it and the budget becomes
/// ceil(1.25 * suffix tokens) to cover tokenizer drift.
inline AttackPlan plan_attack(const CandidateSample& s, const GameConfig& cfg, const Tokenizer& bench_tok,
                              const Tokenizer& model_tok, std::optional<std::size_t> context_limit) {
  AttackPlan plan;
  const bool same = bench_tok.name() == model_tok.name();
  std::vector<TokenId> prefix_ids;
  std::size_t budget;
  if (same) {
    prefix_ids = s.prefix.ids.empty() ? bench_tok.encode_ids(s.prefix.text) : s.prefix.ids;
    budget = s.suffix.ids.empty() ? bench_tok.encode_ids(s.suffix.text).size() : s.suffix.ids.size();
  } else {
    prefix_ids = model_tok.encode_ids(s.prefix.text);
    const auto suffix_tokens = model_tok.encode_ids(s.suffix.text).size();
    budget = static_cast<std::size_t>(std::ceil(1.25 * static_cast<double>(suffix_tokens)));
  }
  if (prefix_ids.empty()) {
    plan.skip_reason = "prefix empty under tokenizer " + model_tok.name();
    return plan;
  }
  if (budget == 0) {
    plan.skip_reason = "suffix empty under tokenizer " + model_tok.name();
    return plan;
  }
  const std::size_t k = std::min(cfg.attack_prefix_tokens, prefix_ids.size());
  const auto tail = std::span<const TokenId>(prefix_ids).last(k);
  if (context_limit && k + budget > *context_limit) {
    plan.skip_reason = "prompt exceeds context limit";
    return plan;
  }
  plan.prompt = model_tok.decode(tail);
  plan.max_new_tokens = budget;
  return plan;
}

/// Challenges `gen` on every benchmark sample with the last k prefix tokens.
/// Results come back in benchmark order, minus resumed ids.
inline std::vector<AttackResult> run_attack(const Benchmark& bench, Generator& gen, const GameConfig& cfg,
                                            const TokenizerRegistry& tokenizers, const AttackOptions& opts = {}) {
  cfg.validate();
  if (bench.samples.empty()) throw DataError("cannot attack an empty benchmark");
  const auto bench_tok = tokenizers.get(bench.manifest.tokenizer_name);
  const auto model_tok = tokenizers.get(gen.ref().tokenizer_name);

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < bench.samples.size(); ++i) {
    if (!opts.skip_ids.contains(bench.samples[i].id)) todo.push_back(i);
  }
  std::vector<AttackResult> results(todo.size());
  std::mutex report_mu;
  parallel_for(todo.size(), opts.workers, [&](std::size_t t) {
    const auto& s = bench.samples[todo[t]];
    AttackResult r;
    r.sample_id = s.id;
    const auto plan = plan_attack(s, cfg, *bench_tok, *model_tok, gen.context_limit());
    if (plan.skip_reason) {
      r.skipped = true;
      r.skip_reason = *plan.skip_reason;
    } else {
      try {
        r.generated_text = gen.complete({plan.prompt, plan.max_new_tokens});
        const auto j = judge(r.generated_text, s.suffix.text, cfg.victory, *bench_tok);
        r.exact_match = j.exact_match;
        r.bleu4 = j.bleu4;
        r.victory = j.victory;
      } catch (const ContextLengthError& e) {
        r.skipped = true;
        r.skip_reason = std::string("context length rejected: ") + e.what();
      } catch (const EndpointError& e) {
        r.skipped = true;
        r.retryable = true;
        r.skip_reason = std::string("generator failure: ") + e.what();
      }
    }
    if (opts.on_result) {
      std::lock_guard lock(report_mu);
      opts.on_result(r);
    }
    results[t] = std::move(r);
  });
  return results;
}

}  // namespace memtrace
