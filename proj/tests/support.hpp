#pragma once

// Shared fixtures for the test suites: the reference tokenizer, a synthetic
// duplicated corpus, and planted benchmarks.

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "memtrace/memtrace.hpp"

namespace memtrace::testing {

inline std::filesystem::path fixture_dir() { return MEMTRACE_FIXTURE_DIR; }

inline std::shared_ptr<const Tokenizer> fixture_tokenizer(const std::string& name = "fixture-bpe") {
  const auto dir = fixture_dir() / "tokenizer";
  return std::make_shared<const Tokenizer>(
      Tokenizer::load_files(dir / "fixture-vocab.json", dir / "fixture-merges.txt", name));
}

inline TokenizerRegistry registry_with(std::initializer_list<TokenizerPtr> toks) {
  TokenizerRegistry reg;
  for (const auto& t : toks) reg.add(t);
  return reg;
}

/// Python-flavoured text that is unique per (seed, index) with overwhelming
/// probability: identifiers and literals are drawn from a large space.
inline std::string synthetic_source(SplitMix64& rng, std::size_t min_lines) {
  static const std::vector<std::string> words = {
      "value", "result", "config", "data", "items", "name", "path", "token", "model", "sample",
      "prefix", "suffix", "memory", "buffer", "record", "index", "count", "state", "cache", "entry"};
  auto word = [&] { return words[rng.uniform(words.size())]; };
  std::string out;
  for (std::size_t line = 0; line < min_lines; ++line) {
    switch (rng.uniform(4)) {
      case 0:
        out += "def " + word() + "_" + std::to_string(rng.uniform(100000)) + "(" + word() + "):\n";
        break;
      case 1:
        out += "    " + word() + " = " + word() + " + " + std::to_string(rng.uniform(1000000)) + "\n";
        break;
      case 2:
        out += "    return " + word() + "." + word() + "(" + std::to_string(rng.uniform(100000)) + ")\n";
        break;
      default:
        out += "# " + word() + " " + word() + " " + std::to_string(rng.uniform(100000)) + "\n";
        break;
    }
  }
  return out;
}

/// `groups` distinct contents, each copied `group_size` times under distinct paths.
inline std::vector<CorpusFile> synthetic_corpus(std::size_t groups, std::size_t group_size, std::uint64_t seed,
                                                std::size_t lines = 40) {
  SplitMix64 rng(seed);
  std::vector<CorpusFile> files;
  for (std::size_t g = 0; g < groups; ++g) {
    const auto content = synthetic_source(rng, lines);
    for (std::size_t c = 0; c < group_size; ++c) {
      CorpusFile f;
      f.path = "repo" + std::to_string(c) + "/group" + std::to_string(g) + ".py";
      f.content = content;
      f.content_hash = fnv1a64(content);
      files.push_back(std::move(f));
    }
  }
  assign_duplicate_counts(files);
  return files;
}

inline void write_corpus_dir(const std::vector<CorpusFile>& files, const std::filesystem::path& root) {
  for (const auto& f : files) {
    const auto p = root / f.path;
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << f.content;
  }
}

/// Distinct candidates mined from a synthetic corpus of `n` unique files.
inline std::vector<CandidateSample> planted_candidates(std::size_t n, std::uint64_t seed, const Tokenizer& tok) {
  const auto files = synthetic_corpus(n, 1, seed);
  auto filtered = filter_files(files, tok, 150, 1);
  return dedupe_spans(sample_spans(filtered, tok, 1, seed));
}

inline GeneratorRef mock_ref(const std::string& name, const std::string& tokenizer, std::int64_t params = 0) {
  GeneratorRef r{name, GeneratorKind::kMockMemoriser, std::nullopt, tokenizer};
  if (params > 0) r.parameter_count_millions = params;
  return r;
}

/// A benchmark holding `samples` as-is, as if certified by some builder.
inline Benchmark frozen_benchmark(std::vector<CandidateSample> samples, const std::string& tokenizer) {
  Benchmark b;
  b.samples = std::move(samples);
  b.manifest.tokenizer_name = tokenizer;
  b.manifest.builder_generator = to_json(mock_ref("builder", tokenizer));
  return b;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("memtrace_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace memtrace::testing
