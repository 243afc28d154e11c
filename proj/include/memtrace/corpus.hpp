#pragma once

// Corpus ingestion, duplicate counting and 150-token span mining.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "memtrace/sample.hpp"
#include "memtrace/tokenization.hpp"
#include "memtrace/util.hpp"

namespace memtrace {

struct CorpusFile {
  std::string path;
  std::string content;
  std::uint64_t content_hash = 0;
  std::size_t duplicate_count = 1;
};

struct SkipEntry {
  std::string path;
  std::string reason;
};

struct IngestResult {
  std::vector<CorpusFile> files;
  std::vector<SkipEntry> skipped;
};

inline constexpr std::size_t kBinarySniffBytes = 8 * 1024;

/// A file is binary if its first 8 KiB hold a NUL byte or it is not valid UTF-8.
inline bool is_binary(std::string_view content) {
  if (content.substr(0, kBinarySniffBytes).find('\0') != std::string_view::npos) return true;
  return !is_valid_utf8(content);
}

/// Sets duplicate_count by grouping on content_hash and confirming byte
/// equality inside each hash bucket.
inline void assign_duplicate_counts(std::vector<CorpusFile>& files) {
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < files.size(); ++i) buckets[files[i].content_hash].push_back(i);
  for (auto& [hash, members] : buckets) {
    // Partition the bucket into classes of identical content.
    std::vector<std::vector<std::size_t>> classes;
    for (auto idx : members) {
      auto it = std::find_if(classes.begin(), classes.end(), [&](const auto& cls) {
        return files[cls.front()].content == files[idx].content;
      });
      if (it == classes.end()) {
        classes.push_back({idx});
      } else {
        it->push_back(idx);
      }
    }
    for (const auto& cls : classes) {
      for (auto idx : cls) files[idx].duplicate_count = cls.size();
    }
  }
}

namespace detail {

inline void admit(IngestResult& result, std::string path, std::string content) {
  if (is_binary(content)) {
    result.skipped.push_back({std::move(path), "binary or invalid UTF-8"});
    return;
  }
  CorpusFile f;
  f.path = std::move(path);
  f.content_hash = fnv1a64(content);
  f.content = std::move(content);
  result.files.push_back(std::move(f));
}

inline void finish_ingest(IngestResult& result, const std::string& source) {
  if (result.files.empty()) throw DataError("no usable files in corpus " + source);
  assign_duplicate_counts(result.files);
}

}  // namespace detail

/// Walks a directory tree in sorted path order. Paths are stored relative to root.
inline IngestResult ingest_directory(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DataError("corpus directory not readable: " + root.string());
  std::vector<fs::path> paths;
  for (auto it = fs::recursive_directory_iterator(root, ec); !ec && it != fs::recursive_directory_iterator();
       it.increment(ec)) {
    if (it->is_regular_file()) paths.push_back(it->path());
  }
  if (ec) throw DataError("cannot walk corpus directory " + root.string() + ": " + ec.message());
  std::sort(paths.begin(), paths.end());

  IngestResult result;
  for (const auto& p : paths) {
    const auto rel = fs::relative(p, root).generic_string();
    std::ifstream in(p, std::ios::binary);
    if (!in) {
      result.skipped.push_back({rel, "unreadable"});
      continue;
    }
    detail::admit(result, rel, read_stream(in));
  }
  detail::finish_ingest(result, root.string());
  return result;
}

/// Line-delimited records, one {"path": ..., "content": ...} object per line.
inline IngestResult ingest_records(std::istream& in, const std::string& source_name = "<records>") {
  IngestResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = source_name + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      result.skipped.push_back({where, "malformed record"});
      continue;
    }
    if (!j.is_object() || !j.contains("content") || !j["content"].is_string()) {
      result.skipped.push_back({where, "record without string content"});
      continue;
    }
    std::string path = j.contains("path") && j["path"].is_string() ? j["path"].get<std::string>() : where;
    detail::admit(result, std::move(path), j["content"].get<std::string>());
  }
  detail::finish_ingest(result, source_name);
  return result;
}

inline IngestResult ingest(const std::filesystem::path& source) {
  if (std::filesystem::is_directory(source)) return ingest_directory(source);
  std::ifstream in(source, std::ios::binary);
  if (!in) throw DataError("corpus source not readable: " + source.string());
  return ingest_records(in, source.string());
}

inline std::string skip_report_jsonl(std::span<const SkipEntry> skipped) {
  std::string out;
  for (const auto& s : skipped) {
    out += dump_json({{"path", s.path}, {"reason", s.reason}});
    out += '\n';
  }
  return out;
}

inline std::vector<std::vector<TokenId>> tokenize_files(std::span<const CorpusFile> files,
                                                        const Tokenizer& tok,
                                                        std::size_t workers = default_workers()) {
  std::vector<std::vector<TokenId>> ids(files.size());
  parallel_for(files.size(), workers, [&](std::size_t i) { ids[i] = tok.encode_ids(files[i].content); });
  return ids;
}

/// Keeps files with more than `min_tokens` tokens and at least
/// `min_file_duplicates` byte-identical copies in the corpus.
inline std::vector<CorpusFile> filter_files(std::span<const CorpusFile> files, const Tokenizer& tok,
                                            std::size_t min_tokens = 150,
                                            std::size_t min_file_duplicates = 5) {
  std::vector<char> keep(files.size(), 0);
  parallel_for(files.size(), default_workers(), [&](std::size_t i) {
    if (files[i].duplicate_count < min_file_duplicates) return;
    keep[i] = tok.encode_ids(files[i].content).size() > min_tokens;
  });
  std::vector<CorpusFile> out;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (keep[i]) out.push_back(files[i]);
  }
  return out;
}

struct RollingHashParams {
  std::uint64_t base = 0x100000001b3ULL;
  // Narrowing the mask forces collisions; tests use it to exercise verification.
  std::uint64_t mask = ~0ULL;
};

/// Occurrence counts for every token window of a fixed length.
class SpanCounts {
 public:
  struct Entry {
    std::uint64_t digest;
    std::size_t file_index;
    std::size_t offset;
    std::size_t count;
  };

  SpanCounts(std::vector<std::vector<TokenId>> corpus, std::size_t span_len, RollingHashParams params)
      : corpus_(std::move(corpus)), span_len_(span_len), params_(params) {
    if (span_len_ == 0) throw std::invalid_argument("span length must be positive");
    base_pow_ = 1;
    for (std::size_t i = 0; i < span_len_; ++i) base_pow_ *= params_.base;
    build();
  }

  std::size_t span_len() const { return span_len_; }
  std::size_t total_windows() const { return total_windows_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t distinct() const { return entries_.size(); }
  std::size_t file_count() const { return corpus_.size(); }
  std::span<const TokenId> file_ids(std::size_t f) const { return corpus_[f]; }

  std::uint64_t digest(std::span<const TokenId> window) const {
    std::uint64_t h = 0;
    for (TokenId t : window) h = h * params_.base + (static_cast<std::uint64_t>(t) + 1);
    return h & params_.mask;
  }

  std::size_t count(std::span<const TokenId> window) const {
    if (window.size() != span_len_) return 0;
    auto it = by_digest_.find(digest(window));
    if (it == by_digest_.end()) return 0;
    for (auto e : it->second) {
      if (same(entries_[e], window)) return entries_[e].count;
    }
    return 0;
  }

 private:
  std::span<const TokenId> window_of(const Entry& e) const {
    return std::span<const TokenId>(corpus_[e.file_index]).subspan(e.offset, span_len_);
  }

  bool same(const Entry& e, std::span<const TokenId> window) const {
    auto w = window_of(e);
    if (w.size() != window.size()) return false;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] != window[i]) return false;
    }
    return true;
  }

  std::vector<std::uint64_t> rolling_digests(const std::vector<TokenId>& ids) const {
    std::vector<std::uint64_t> out;
    if (ids.size() < span_len_) return out;
    out.reserve(ids.size() - span_len_ + 1);
    std::uint64_t h = 0;
    for (std::size_t j = 0; j < ids.size(); ++j) {
      h = h * params_.base + (static_cast<std::uint64_t>(ids[j]) + 1);
      if (j >= span_len_) h -= (static_cast<std::uint64_t>(ids[j - span_len_]) + 1) * base_pow_;
      if (j + 1 >= span_len_) out.push_back(h & params_.mask);
    }
    return out;
  }

  void build() {
    std::vector<std::vector<std::uint64_t>> per_file(corpus_.size());
    parallel_for(corpus_.size(), default_workers(),
                 [&](std::size_t f) { per_file[f] = rolling_digests(corpus_[f]); });
    for (std::size_t f = 0; f < corpus_.size(); ++f) {
      const auto& digests = per_file[f];
      for (std::size_t off = 0; off < digests.size(); ++off) {
        ++total_windows_;
        auto window = std::span<const TokenId>(corpus_[f]).subspan(off, span_len_);
        auto& group = by_digest_[digests[off]];
        bool found = false;
        for (auto e : group) {
          if (same(entries_[e], window)) {
            ++entries_[e].count;
            found = true;
            break;
          }
        }
        if (!found) {
          group.push_back(entries_.size());
          entries_.push_back({digests[off], f, off, 1});
        }
      }
    }
  }

  std::vector<std::vector<TokenId>> corpus_;
  std::size_t span_len_;
  RollingHashParams params_;
  std::uint64_t base_pow_ = 1;
  std::size_t total_windows_ = 0;
  std::vector<Entry> entries_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> by_digest_;
};

inline SpanCounts count_span_duplicates(std::span<const CorpusFile> files, const Tokenizer& tok,
                                        std::size_t span_len = 150, RollingHashParams params = {}) {
  return SpanCounts(tokenize_files(files, tok), span_len, params);
}

/// `count` distinct offsets drawn uniformly from [0, token_count - span_len]
/// (Floyd's algorithm), in ascending order.
inline std::vector<std::size_t> sample_offsets(std::size_t token_count, std::size_t span_len,
                                               std::size_t count, SplitMix64& rng) {
  if (token_count < span_len) return {};
  const std::size_t range = token_count - span_len + 1;
  count = std::min(count, range);
  std::set<std::size_t> chosen;
  for (std::size_t j = range - count; j < range; ++j) {
    const auto t = static_cast<std::size_t>(rng.uniform(j + 1));
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  return {chosen.begin(), chosen.end()};
}

struct SplitSpan {
  TokenSequence pre_prefix;
  TokenSequence prefix;
  TokenSequence suffix;
};

/// Splits a span of 3 * part_len tokens at part_len and 2 * part_len.
inline SplitSpan split_sample(const TokenSequence& span, const Tokenizer& tok,
                              std::size_t part_len = 50) {
  if (span.size() != 3 * part_len) {
    throw DataError("split_sample: expected a span of " + std::to_string(3 * part_len) +
                    " tokens, got " + std::to_string(span.size()));
  }
  std::span<const TokenId> ids(span.ids);
  return {tok.slice(ids.subspan(0, part_len)), tok.slice(ids.subspan(part_len, part_len)),
          tok.slice(ids.subspan(2 * part_len, part_len))};
}

namespace detail {

inline void emit_candidate(std::vector<CandidateSample>& out, const CorpusFile& file,
                           std::span<const TokenId> file_ids, std::size_t off, std::size_t span_len,
                           const Tokenizer& tok, std::vector<SkipEntry>* dropped) {
  auto parts = split_sample(tok.slice(file_ids.subspan(off, span_len)), tok, span_len / 3);
  if (!is_valid_utf8(parts.pre_prefix.text) || !is_valid_utf8(parts.prefix.text) ||
      !is_valid_utf8(parts.suffix.text)) {
    if (dropped) {
      dropped->push_back(
          {file.path + "@" + std::to_string(off), "span boundary splits a multi-byte character"});
    }
    return;
  }
  CandidateSample s;
  s.id = sample_id(file.path, off);
  s.source_path = file.path;
  s.token_offset = off;
  s.pre_prefix = std::move(parts.pre_prefix);
  s.prefix = std::move(parts.prefix);
  s.suffix = std::move(parts.suffix);
  s.file_duplicates = file.duplicate_count;
  out.push_back(std::move(s));
}

inline void check_span_len(std::size_t span_len) {
  if (span_len == 0 || span_len % 3 != 0) {
    throw ConfigError("span length must split into three equal non-empty parts");
  }
}

}  // namespace detail

/// For each file, up to `per_file` uniformly random spans, split into three
/// parts. Spans whose part boundaries fall inside a multi-byte character are
/// dropped (and reported) since their parts are not text on their own.
inline std::vector<CandidateSample> sample_spans(std::span<const CorpusFile> files, const Tokenizer& tok,
                                                 std::size_t per_file, std::uint64_t seed,
                                                 std::size_t span_len = 150,
                                                 std::vector<SkipEntry>* dropped = nullptr) {
  detail::check_span_len(span_len);
  const auto ids = tokenize_files(files, tok);
  std::vector<CandidateSample> out;
  for (std::size_t f = 0; f < files.size(); ++f) {
    SplitMix64 rng(seed ^ fnv1a64(files[f].path));
    for (auto off : sample_offsets(ids[f].size(), span_len, per_file, rng)) {
      detail::emit_candidate(out, files[f], ids[f], off, span_len, tok, dropped);
    }
  }
  return out;
}

/// Span-duplicate mining: like sample_spans, but offsets are drawn only among
/// windows occurring at least `min_span_duplicates` times. `counts` must have
/// been built over `files` (same order).
inline std::vector<CandidateSample> sample_duplicated_spans(std::span<const CorpusFile> files,
                                                            const Tokenizer& tok, const SpanCounts& counts,
                                                            std::size_t min_span_duplicates,
                                                            std::size_t per_file, std::uint64_t seed,
                                                            std::vector<SkipEntry>* dropped = nullptr) {
  const std::size_t span_len = counts.span_len();
  detail::check_span_len(span_len);
  if (counts.file_count() != files.size()) throw std::invalid_argument("span counts built over other files");
  std::vector<CandidateSample> out;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const auto ids = counts.file_ids(f);
    std::vector<std::size_t> eligible;
    for (std::size_t off = 0; off + span_len <= ids.size(); ++off) {
      if (counts.count(ids.subspan(off, span_len)) >= min_span_duplicates) eligible.push_back(off);
    }
    SplitMix64 rng(seed ^ fnv1a64(files[f].path));
    for (auto pick : sample_offsets(eligible.size(), 1, per_file, rng)) {
      detail::emit_candidate(out, files[f], ids, eligible[pick], span_len, tok, dropped);
    }
  }
  return out;
}

inline std::vector<TokenId> span_ids(const CandidateSample& s) {
  std::vector<TokenId> ids = s.pre_prefix.ids;
  ids.insert(ids.end(), s.prefix.ids.begin(), s.prefix.ids.end());
  ids.insert(ids.end(), s.suffix.ids.begin(), s.suffix.ids.end());
  return ids;
}

/// Identical spans drawn from duplicate files are one training string; keep
/// the first occurrence.
inline std::vector<CandidateSample> dedupe_spans(std::vector<CandidateSample> samples) {
  std::set<std::vector<TokenId>> seen;
  std::vector<CandidateSample> out;
  for (auto& s : samples) {
    if (seen.insert(span_ids(s)).second) out.push_back(std::move(s));
  }
  return out;
}

inline void annotate_span_duplicates(std::vector<CandidateSample>& samples, const SpanCounts& counts) {
  for (auto& s : samples) {
    const auto ids = span_ids(s);
    s.span_duplicates = std::max<std::size_t>(1, counts.count(ids));
  }
}

}  // namespace memtrace
