#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>

#include "memtrace/tokenization.hpp"

namespace memtrace {

inline constexpr int kBleuOrder = 4;
inline constexpr double kBleuPrecisionFloor = 1e-9;

namespace detail {

using NGram = std::array<TokenId, kBleuOrder>;

inline std::map<NGram, std::size_t> ngram_counts(std::span<const TokenId> ids, std::size_t n) {
  std::map<NGram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= ids.size(); ++i) {
    NGram g;
    g.fill(std::numeric_limits<TokenId>::max());
    std::copy_n(ids.begin() + static_cast<std::ptrdiff_t>(i), n, g.begin());
    ++counts[g];
  }
  return counts;
}

}  // namespace detail

/// Sentence BLEU-4 over token ids: geometric mean of clipped 1..4-gram
/// precisions, each floored at 1e-9, times the brevity penalty.
///
/// An order for which neither side has any n-gram (both shorter than n)
/// scores precision 1, so bleu4(x, x) == 1 for every non-empty x. An empty
/// candidate scores 0.
inline double bleu4(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
  if (reference.empty()) throw std::invalid_argument("bleu4: empty reference");
  const std::size_t c = candidate.size();
  const std::size_t r = reference.size();
  if (c == 0) return 0.0;

  double log_sum = 0.0;
  double max_precision = 0.0;
  for (std::size_t n = 1; n <= kBleuOrder; ++n) {
    const std::size_t cand_total = c >= n ? c - n + 1 : 0;
    const std::size_t ref_total = r >= n ? r - n + 1 : 0;
    double precision;
    if (cand_total == 0) {
      precision = ref_total == 0 ? 1.0 : 0.0;
    } else {
      const auto cand = detail::ngram_counts(candidate, n);
      const auto ref = detail::ngram_counts(reference, n);
      std::size_t matched = 0;
      for (const auto& [g, count] : cand) {
        auto it = ref.find(g);
        if (it != ref.end()) matched += std::min(count, it->second);
      }
      precision = static_cast<double>(matched) / static_cast<double>(cand_total);
    }
    precision = std::max(precision, kBleuPrecisionFloor);
    max_precision = std::max(max_precision, precision);
    log_sum += std::log(precision);
  }
  const double brevity =
      c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  // A geometric mean never exceeds its largest term; the bound absorbs exp/log rounding.
  return std::clamp(brevity * std::exp(log_sum / kBleuOrder), 0.0, std::min(1.0, max_precision));
}

}  // namespace memtrace
