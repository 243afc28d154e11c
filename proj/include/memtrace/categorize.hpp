#pragma once

// Heuristic pre-tagging of samples into Code / Testing / License / Docs /
// Dicts, plus manual overrides, which always win.

#include <algorithm>
#include <array>
#include <cctype>
#include <istream>
#include <map>
#include <regex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "memtrace/sample.hpp"
#include "memtrace/util.hpp"

namespace memtrace {

struct CategoryRules {
  std::vector<std::string> license_keywords = {
      "license",        "licence",         "copyright",     "permission is hereby granted",
      "warranty",       "merchantability", "redistribute",  "redistribution",
      "gnu general public", "apache",      "spdx",          "all rights reserved",
      "free software",  "liability",       "licensed under", "provided \"as is\""};
  std::vector<std::string> test_markers = {
      "def test", "assert", "unittest", "pytest", "setup(", "teardown(", "mock", "fixture", "expected"};
  std::vector<std::string> test_path_markers = {"test_", "_test.", "/tests/", "/test/", "tests/", "conftest"};
  double data_literal_density_threshold = 0.6;
  double doc_comment_ratio_threshold = 0.5;

  void validate() const {
    auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!in_unit(data_literal_density_threshold) || !in_unit(doc_comment_ratio_threshold)) {
      throw ConfigError("category thresholds must lie in (0, 1)");
    }
  }
};

inline CategoryRules category_rules_from_json(const nlohmann::json& j) {
  CategoryRules r;
  r.license_keywords = j.value("license_keywords", r.license_keywords);
  r.test_markers = j.value("test_markers", r.test_markers);
  r.test_path_markers = j.value("test_path_markers", r.test_path_markers);
  r.data_literal_density_threshold = j.value("data_literal_density_threshold", r.data_literal_density_threshold);
  r.doc_comment_ratio_threshold = j.value("doc_comment_ratio_threshold", r.doc_comment_ratio_threshold);
  r.validate();
  return r;
}

struct CategorySuggestion {
  Category category = Category::kUnknown;
  double confidence = 0.0;
  std::map<Category, double> scores;
};

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

inline std::size_t non_space(std::string_view s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](unsigned char c) { return !std::isspace(c); }));
}

inline double license_score(const std::string& text_lc, const CategoryRules& rules) {
  std::size_t hits = 0;
  for (const auto& kw : rules.license_keywords) hits += text_lc.find(lower(kw)) != std::string::npos;
  return std::min(1.0, static_cast<double>(hits) / 3.0);
}

inline double testing_score(const std::string& text_lc, const std::string& path_lc, const CategoryRules& rules) {
  double path_hit = 0.0;
  for (const auto& m : rules.test_path_markers) {
    if (path_lc.find(lower(m)) != std::string::npos) path_hit = 0.5;
  }
  std::size_t lines = 0, marked = 0;
  for (const auto& line : split_lines(text_lc)) {
    if (non_space(line) == 0) continue;
    ++lines;
    for (const auto& m : rules.test_markers) {
      if (line.find(lower(m)) != std::string::npos) {
        ++marked;
        break;
      }
    }
  }
  const double frac = lines == 0 ? 0.0 : static_cast<double>(marked) / static_cast<double>(lines);
  return std::min(1.0, path_hit + 2.0 * frac);
}

// Share of non-space characters that sit inside {...} / [...] literals or on
// NAME = <number|string> constant lines.
inline double data_density(std::string_view text) {
  static const std::regex constant_line(
      R"(^\s*[A-Za-z_][A-Za-z0-9_]*\s*=\s*(-?(0[xX][0-9A-Fa-f]+|[0-9][0-9_.eE+-]*)|'[^']*'|"[^"]*")[\s,]*(#.*)?$)");
  std::size_t total = 0, data = 0;
  int depth = 0;
  for (const auto& line : split_lines(text)) {
    const std::size_t chars = non_space(line);
    total += chars;
    const int depth_at_start = depth;
    std::size_t inside = 0;
    for (char c : line) {
      if (c == '{' || c == '[') ++depth;
      if (c == '}' || c == ']') depth = std::max(0, depth - 1);
      if (!std::isspace(static_cast<unsigned char>(c)) && (depth > 0 || c == '}' || c == ']')) ++inside;
    }
    if (std::regex_match(line, constant_line)) {
      data += chars;
    } else if (depth_at_start > 0 && depth > 0) {
      data += chars;  // a line fully inside an open literal
    } else {
      data += inside;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(data) / static_cast<double>(total);
}

// Share of non-space characters in # comments or triple-quoted strings.
inline double doc_ratio(std::string_view text) {
  std::size_t total = 0, doc = 0;
  bool in_doc = false;
  for (const auto& line : split_lines(text)) {
    bool in_comment = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (!in_comment && (line.compare(i, 3, "\"\"\"") == 0 || line.compare(i, 3, "'''") == 0)) {
        in_doc = !in_doc;
        doc += 3;
        total += 3;
        i += 2;
        continue;
      }
      if (!in_doc && c == '#') in_comment = true;
      if (std::isspace(static_cast<unsigned char>(c))) continue;
      ++total;
      if (in_doc || in_comment) ++doc;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(doc) / static_cast<double>(total);
}

}  // namespace detail

inline constexpr std::array<Category, 5> kCategoryPrecedence = {
    Category::kLicense, Category::kTesting, Category::kDicts, Category::kDocs, Category::kCode};

/// Scores each category and returns the highest; ties go to the earlier
/// entry of kCategoryPrecedence. Code scores 1 minus the strongest other signal.
inline CategorySuggestion suggest_category(const CandidateSample& sample, const CategoryRules& rules) {
  const auto text = sample.text();
  CategorySuggestion out;
  if (detail::non_space(text) == 0) return out;
  const auto text_lc = detail::lower(text);
  const auto path_lc = detail::lower(sample.source_path);

  const double dicts = detail::data_density(text);
  const double docs = detail::doc_ratio(text);
  auto& s = out.scores;
  s[Category::kLicense] = detail::license_score(text_lc, rules);
  s[Category::kTesting] = detail::testing_score(text_lc, path_lc, rules);
  s[Category::kDicts] = dicts >= rules.data_literal_density_threshold ? dicts : 0.0;
  s[Category::kDocs] = docs >= rules.doc_comment_ratio_threshold ? docs : 0.0;
  s[Category::kCode] =
      1.0 - std::max({s[Category::kLicense], s[Category::kTesting], s[Category::kDicts], s[Category::kDocs]});

  out.category = kCategoryPrecedence.front();
  out.confidence = -1.0;
  for (auto c : kCategoryPrecedence) {
    if (s[c] > out.confidence) {
      out.category = c;
      out.confidence = s[c];
    }
  }
  return out;
}

inline void assign_categories(std::span<CandidateSample> samples, const CategoryRules& rules) {
  for (auto& s : samples) {
    if (!s.category_overridden) s.category = suggest_category(s, rules).category;
  }
}

struct CategoryOverride {
  std::string sample_id;
  Category category;
};

inline std::vector<CategoryOverride> read_overrides(std::istream& in) {
  std::vector<CategoryOverride> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto name = j.at("category").get<std::string>();
      const auto cat = parse_category(name);
      if (!cat) throw DataError("override line " + std::to_string(line_no) + ": unknown category " + name);
      out.push_back({j.at("sample_id").get<std::string>(), *cat});
    } catch (const nlohmann::json::exception& e) {
      throw DataError("override line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

/// Replaces categories with manual labels and marks them overridden.
inline std::vector<CandidateSample> apply_overrides(std::vector<CandidateSample> samples,
                                                    std::span<const CategoryOverride> overrides) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < samples.size(); ++i) index.emplace(samples[i].id, i);
  for (const auto& o : overrides) {
    auto it = index.find(o.sample_id);
    if (it == index.end()) throw DataError("override for unknown sample " + o.sample_id);
    samples[it->second].category = o.category;
    samples[it->second].category_overridden = true;
  }
  return samples;
}

inline double override_fraction(std::span<const CandidateSample> samples) {
  if (samples.empty()) return 0.0;
  const auto n = std::count_if(samples.begin(), samples.end(), [](const auto& s) { return s.category_overridden; });
  return static_cast<double>(n) / static_cast<double>(samples.size());
}

}  // namespace memtrace
