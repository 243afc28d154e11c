#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "memtrace/tokenization.hpp"

namespace memtrace {

// Closed taxonomy of memorised-sample kinds, plus Unknown.
enum class Category { kCode, kTesting, kLicense, kDocs, kDicts, kUnknown };

inline constexpr std::array<Category, 6> kAllCategories = {
    Category::kCode, Category::kTesting, Category::kLicense,
    Category::kDocs, Category::kDicts,   Category::kUnknown};

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::kCode: return "Code";
    case Category::kTesting: return "Testing";
    case Category::kLicense: return "License";
    case Category::kDocs: return "Docs";
    case Category::kDicts: return "Dicts";
    case Category::kUnknown: return "Unknown";
  }
  return "Unknown";
}

inline std::optional<Category> parse_category(std::string_view s) {
  for (auto c : kAllCategories) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

/// One 150-token training span, split into three equal parts. Probing
/// prompts with pre_prefix + prefix; attacking prompts with prefix only.
struct CandidateSample {
  std::string id;
  std::string source_path;
  std::size_t token_offset = 0;
  TokenSequence pre_prefix;
  TokenSequence prefix;
  TokenSequence suffix;
  std::size_t file_duplicates = 1;
  std::size_t span_duplicates = 1;
  Category category = Category::kUnknown;
  bool category_overridden = false;

  std::string text() const { return pre_prefix.text + prefix.text + suffix.text; }
  std::string probe_prompt() const { return pre_prefix.text + prefix.text; }
  // Samples imported from prefix/suffix-only sets carry no pre-prefix.
  bool attack_only() const { return pre_prefix.empty(); }
};

inline std::string sample_id(std::string_view source_path, std::size_t token_offset) {
  std::string key(source_path);
  key += '#';
  key += std::to_string(token_offset);
  return digest_hex(key);
}

// Strings that may hold arbitrary bytes (truncated generations) are written
// with invalid sequences replaced rather than throwing.
inline std::string dump_json(const nlohmann::json& j) {
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

inline nlohmann::json to_json(const CandidateSample& s) {
  return {
      {"id", s.id},
      {"source_path", s.source_path},
      {"token_offset", s.token_offset},
      {"pre_prefix_text", s.pre_prefix.text},
      {"prefix_text", s.prefix.text},
      {"suffix_text", s.suffix.text},
      {"pre_prefix_ids", s.pre_prefix.ids},
      {"prefix_ids", s.prefix.ids},
      {"suffix_ids", s.suffix.ids},
      {"file_duplicates", s.file_duplicates},
      {"span_duplicates", s.span_duplicates},
      {"category", std::string(to_string(s.category))},
      {"category_overridden", s.category_overridden},
  };
}

inline CandidateSample sample_from_json(const nlohmann::json& j, const std::string& tokenizer_name) {
  try {
    CandidateSample s;
    s.id = j.at("id").get<std::string>();
    s.source_path = j.value("source_path", std::string());
    s.token_offset = j.value("token_offset", std::size_t{0});
    auto part = [&](const char* text_key, const char* ids_key) {
      TokenSequence seq;
      seq.tokenizer_name = tokenizer_name;
      seq.text = j.value(text_key, std::string());
      if (j.contains(ids_key)) seq.ids = j.at(ids_key).get<std::vector<TokenId>>();
      return seq;
    };
    s.pre_prefix = part("pre_prefix_text", "pre_prefix_ids");
    s.prefix = part("prefix_text", "prefix_ids");
    s.suffix = part("suffix_text", "suffix_ids");
    s.file_duplicates = j.value("file_duplicates", std::size_t{1});
    s.span_duplicates = j.value("span_duplicates", std::size_t{1});
    const auto cat = j.value("category", std::string("Unknown"));
    const auto parsed = parse_category(cat);
    if (!parsed) throw DataError("unknown category '" + cat + "' in sample " + s.id);
    s.category = *parsed;
    s.category_overridden = j.value("category_overridden", false);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed sample record: ") + e.what());
  }
}

}  // namespace memtrace
