#pragma once

// Byte-level byte-pair encoding compatible with the GPT-2 family of
// tokenizer files (vocab.json + merges.txt).

#include <unicode/uchar.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "memtrace/util.hpp"

namespace memtrace {

using TokenId = std::uint32_t;

class TokenizerError : public DataError {
 public:
  using DataError::DataError;
};

struct TokenSequence {
  std::string tokenizer_name;
  std::vector<TokenId> ids;
  std::string text;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  bool operator==(const TokenSequence&) const = default;
};

// How text is split into words before merges are applied.
enum class Pretokenizer {
  kGpt2,  // the GPT-2 contraction/letter/number/punctuation/whitespace split
  kNone,  // merges run over the whole text as one word
};

namespace detail {

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

// Decodes one code point at s[i]. Invalid sequences decode as a single byte
// with nullopt so that callers can still make progress.
inline std::pair<std::optional<char32_t>, std::size_t> next_code_point(std::string_view s,
                                                                       std::size_t i) {
  const auto c = static_cast<unsigned char>(s[i]);
  if (c < 0x80) return {c, 1};
  std::size_t len = 0;
  char32_t cp = 0;
  if ((c & 0xE0) == 0xC0) {
    len = 2;
    cp = c & 0x1F;
  } else if ((c & 0xF0) == 0xE0) {
    len = 3;
    cp = c & 0x0F;
  } else if ((c & 0xF8) == 0xF0) {
    len = 4;
    cp = c & 0x07;
  } else {
    return {std::nullopt, 1};
  }
  if (i + len > s.size()) return {std::nullopt, 1};
  for (std::size_t k = 1; k < len; ++k) {
    const auto cc = static_cast<unsigned char>(s[i + k]);
    if ((cc & 0xC0) != 0x80) return {std::nullopt, 1};
    cp = (cp << 6) | (cc & 0x3F);
  }
  if (!is_valid_utf8(s.substr(i, len))) return {std::nullopt, 1};
  return {cp, len};
}

/// The GPT-2 byte encoder: printable Latin-1 bytes map to themselves, the
/// remaining 68 bytes map to U+0100 onwards in byte order.
struct ByteEncoder {
  std::array<std::string, 256> to_surrogate;
  std::unordered_map<char32_t, unsigned char> from_surrogate;

  ByteEncoder() {
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    char32_t extra = 0;
    for (int b = 0; b < 256; ++b) {
      const char32_t cp = direct[b] ? static_cast<char32_t>(b) : 256 + extra++;
      append_utf8(to_surrogate[b], cp);
      from_surrogate.emplace(cp, static_cast<unsigned char>(b));
    }
  }

  static const ByteEncoder& instance() {
    static const ByteEncoder enc;
    return enc;
  }
};

enum class CharClass { kLetter, kNumber, kSpace, kOther };

struct CodePoint {
  std::size_t offset;
  std::size_t length;
  std::optional<char32_t> value;
  CharClass cls;
};

inline CharClass classify(std::optional<char32_t> cp) {
  if (!cp) return CharClass::kOther;
  const auto c = static_cast<UChar32>(*cp);
  if (u_isUWhiteSpace(c)) return CharClass::kSpace;
  if (u_isalpha(c)) return CharClass::kLetter;
  switch (u_charType(c)) {
    case U_DECIMAL_DIGIT_NUMBER:
    case U_LETTER_NUMBER:
    case U_OTHER_NUMBER:
      return CharClass::kNumber;
    default:
      return CharClass::kOther;
  }
}

inline std::vector<CodePoint> code_points(std::string_view text) {
  std::vector<CodePoint> cps;
  cps.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    auto [cp, len] = next_code_point(text, i);
    cps.push_back({i, len, cp, classify(cp)});
    i += len;
  }
  return cps;
}

/// Hand-rolled equivalent of the GPT-2 split pattern
///   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
/// returning byte ranges into `text`.
inline std::vector<std::string_view> gpt2_split(std::string_view text) {
  const auto cps = code_points(text);
  const std::size_t n = cps.size();
  std::vector<std::string_view> pieces;
  auto is_ascii = [&](std::size_t i, char c) {
    return i < n && cps[i].value && *cps[i].value == static_cast<char32_t>(c);
  };
  auto emit = [&](std::size_t from, std::size_t to) {
    const std::size_t begin = cps[from].offset;
    const std::size_t end = to < n ? cps[to].offset : text.size();
    pieces.push_back(text.substr(begin, end - begin));
  };
  auto run_end = [&](std::size_t i, CharClass cls) {
    while (i < n && cps[i].cls == cls) ++i;
    return i;
  };

  std::size_t i = 0;
  while (i < n) {
    if (is_ascii(i, '\'')) {
      if (is_ascii(i + 1, 's') || is_ascii(i + 1, 't') || is_ascii(i + 1, 'm') ||
          is_ascii(i + 1, 'd')) {
        emit(i, i + 2);
        i += 2;
        continue;
      }
      if ((is_ascii(i + 1, 'r') && is_ascii(i + 2, 'e')) ||
          (is_ascii(i + 1, 'v') && is_ascii(i + 2, 'e')) ||
          (is_ascii(i + 1, 'l') && is_ascii(i + 2, 'l'))) {
        emit(i, i + 3);
        i += 3;
        continue;
      }
    }
    // Optional single leading ' ' before a letter, number or symbol run.
    const std::size_t body = is_ascii(i, ' ') && i + 1 < n && cps[i + 1].cls != CharClass::kSpace
                                 ? i + 1
                                 : i;
    const CharClass cls = cps[body].cls;
    if (cls != CharClass::kSpace) {
      const std::size_t end = run_end(body, cls);
      emit(i, end);
      i = end;
      continue;
    }
    // Whitespace: leave the last space for the next word unless at the end.
    const std::size_t end = run_end(i, CharClass::kSpace);
    if (end == n || end - i == 1) {
      emit(i, end);
      i = end;
    } else {
      emit(i, end - 1);
      i = end - 1;
    }
  }
  return pieces;
}

}  // namespace detail

class Tokenizer {
 public:
  /// Parses a token->id JSON mapping and a merges file (one "left right" pair
  /// per line; a first line starting with '#' is a version header). Merge rank
  /// is line order.
  static Tokenizer load(std::istream& vocab_source, std::istream& merges_source, std::string name,
                        Pretokenizer pretokenizer = Pretokenizer::kGpt2) {
    Tokenizer tok;
    tok.name_ = std::move(name);
    tok.pretokenizer_ = pretokenizer;
    tok.parse_vocab(read_stream(vocab_source));
    tok.parse_merges(read_stream(merges_source));
    return tok;
  }

  static Tokenizer load_files(const std::filesystem::path& vocab_path,
                              const std::filesystem::path& merges_path, std::string name,
                              Pretokenizer pretokenizer = Pretokenizer::kGpt2) {
    std::ifstream vocab(vocab_path, std::ios::binary);
    if (!vocab) throw TokenizerError("cannot open vocab file " + vocab_path.string());
    std::ifstream merges(merges_path, std::ios::binary);
    if (!merges) throw TokenizerError("cannot open merges file " + merges_path.string());
    return load(vocab, merges, std::move(name), pretokenizer);
  }

  const std::string& name() const { return name_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  std::size_t merge_count() const { return merges_.size(); }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  Pretokenizer pretokenizer() const { return pretokenizer_; }

  std::optional<TokenId> token_id(std::string_view token) const {
    auto it = vocab_.find(std::string(token));
    if (it == vocab_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<TokenId> encode_ids(std::string_view text) const {
    std::vector<TokenId> ids;
    if (pretokenizer_ == Pretokenizer::kNone) {
      if (!text.empty()) encode_word(text, ids);
    } else {
      for (auto piece : detail::gpt2_split(text)) encode_word(piece, ids);
    }
    return ids;
  }

  TokenSequence encode(std::string_view text) const {
    return {name_, encode_ids(text), std::string(text)};
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (id >= id_bytes_.size() || !id_present_[id]) {
        throw TokenizerError("unknown token id " + std::to_string(id) + " for tokenizer " + name_);
      }
      out += id_bytes_[id];
    }
    return out;
  }

  // Builds a TokenSequence from a sub-range of already-encoded ids.
  TokenSequence slice(std::span<const TokenId> ids) const {
    return {name_, std::vector<TokenId>(ids.begin(), ids.end()), decode(ids)};
  }

 private:
  Tokenizer() = default;

  void parse_vocab(const std::string& raw) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception& e) {
      throw TokenizerError("malformed vocab: " + std::string(e.what()));
    }
    if (!j.is_object()) throw TokenizerError("malformed vocab: expected a token->id object");
    const auto& enc = detail::ByteEncoder::instance();
    std::map<TokenId, std::string> by_id;
    for (auto& [token, value] : j.items()) {
      if (!value.is_number_unsigned()) {
        throw TokenizerError("malformed vocab: id for '" + token + "' is not a non-negative integer");
      }
      const auto id64 = value.get<std::uint64_t>();
      if (id64 >= (1u << 24)) throw TokenizerError("malformed vocab: id too large for '" + token + "'");
      const auto id = static_cast<TokenId>(id64);
      if (!by_id.emplace(id, token).second) {
        throw TokenizerError("duplicate token id " + std::to_string(id) + " ('" + by_id[id] +
                             "' and '" + token + "')");
      }
      vocab_.emplace(token, id);
    }
    const std::size_t table = by_id.empty() ? 0 : by_id.rbegin()->first + 1;
    id_bytes_.assign(table, {});
    id_present_.assign(table, false);
    for (auto& [id, token] : by_id) {
      std::string bytes;
      for (std::size_t i = 0; i < token.size();) {
        auto [cp, len] = detail::next_code_point(token, i);
        auto it = cp ? enc.from_surrogate.find(*cp) : enc.from_surrogate.end();
        if (it == enc.from_surrogate.end()) {
          throw TokenizerError("malformed vocab: token '" + token +
                               "' contains a character outside the byte alphabet");
        }
        bytes += static_cast<char>(it->second);
        i += len;
      }
      id_bytes_[id] = std::move(bytes);
      id_present_[id] = true;
    }
  }

  void parse_merges(const std::string& raw) {
    const auto lines = split_lines(raw);
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
      const auto& line = lines[ln];
      if (ln == 0 && line.starts_with('#')) continue;
      if (line.empty()) continue;
      const auto sep = line.find(' ');
      if (sep == std::string::npos || sep == 0 || sep + 1 >= line.size() ||
          line.find(' ', sep + 1) != std::string::npos) {
        throw TokenizerError("malformed merge on line " + std::to_string(ln + 1) + ": '" + line + "'");
      }
      std::string left = line.substr(0, sep);
      std::string right = line.substr(sep + 1);
      if (!vocab_.contains(left) || !vocab_.contains(right) || !vocab_.contains(left + right)) {
        throw TokenizerError("merge on line " + std::to_string(ln + 1) + " references unknown token: '" +
                             line + "'");
      }
      const auto rank = static_cast<int>(merges_.size());
      ranks_.emplace(left + ' ' + right, rank);
      merges_.emplace_back(std::move(left), std::move(right));
    }
  }

  int rank_of(const std::string& a, const std::string& b) const {
    std::string key;
    key.reserve(a.size() + b.size() + 1);
    key.append(a).append(1, ' ').append(b);
    auto it = ranks_.find(key);
    return it == ranks_.end() ? std::numeric_limits<int>::max() : it->second;
  }

  // Repeatedly merges every occurrence of the lowest-rank adjacent pair,
  // scanning left to right, until no pair has a rank.
  void encode_word(std::string_view word, std::vector<TokenId>& out) const {
    const auto& enc = detail::ByteEncoder::instance();
    std::vector<std::string> symbols;
    symbols.reserve(word.size());
    for (char c : word) symbols.push_back(enc.to_surrogate[static_cast<unsigned char>(c)]);

    while (symbols.size() > 1) {
      int best = std::numeric_limits<int>::max();
      std::size_t best_at = 0;
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        const int r = rank_of(symbols[i], symbols[i + 1]);
        if (r < best) {
          best = r;
          best_at = i;
        }
      }
      if (best == std::numeric_limits<int>::max()) break;
      const auto& [left, right] = merges_[static_cast<std::size_t>(best)];
      std::vector<std::string> merged;
      merged.reserve(symbols.size());
      for (std::size_t i = 0; i < symbols.size();) {
        if (i >= best_at && i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
          merged.push_back(left + right);
          i += 2;
        } else {
          merged.push_back(std::move(symbols[i]));
          ++i;
        }
      }
      symbols = std::move(merged);
    }

    for (const auto& sym : symbols) {
      auto it = vocab_.find(sym);
      if (it == vocab_.end()) {
        throw TokenizerError("tokenizer " + name_ + " has no vocab entry for symbol '" + sym + "'");
      }
      out.push_back(it->second);
    }
  }

  std::string name_;
  Pretokenizer pretokenizer_ = Pretokenizer::kGpt2;
  std::unordered_map<std::string, TokenId> vocab_;
  std::vector<std::string> id_bytes_;
  std::vector<bool> id_present_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, int> ranks_;
};

inline Tokenizer load_tokenizer(std::istream& vocab_source, std::istream& merges_source,
                                std::string name, Pretokenizer pretokenizer = Pretokenizer::kGpt2) {
  return Tokenizer::load(vocab_source, merges_source, std::move(name), pretokenizer);
}

using TokenizerPtr = std::shared_ptr<const Tokenizer>;

/// Named tokenizers available to a run.
class TokenizerRegistry {
 public:
  void add(TokenizerPtr tok) {
    const std::string name = tok->name();
    if (!tokenizers_.emplace(name, std::move(tok)).second) {
      throw ConfigError("tokenizer '" + name + "' registered twice");
    }
  }

  bool contains(const std::string& name) const { return tokenizers_.contains(name); }

  TokenizerPtr get(const std::string& name) const {
    auto it = tokenizers_.find(name);
    if (it == tokenizers_.end()) throw ConfigError("unknown tokenizer '" + name + "'");
    return it->second;
  }

 private:
  std::unordered_map<std::string, TokenizerPtr> tokenizers_;
};

}  // namespace memtrace
