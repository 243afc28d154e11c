#pragma once

// Aggregate memorisation metrics over attack results.

#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "memtrace/bleu.hpp"
#include "memtrace/extraction_game.hpp"
#include "memtrace/sample.hpp"

namespace memtrace {

inline std::size_t counted_results(std::span<const AttackResult> results) {
  std::size_t n = 0;
  for (const auto& r : results) n += !r.skipped;
  return n;
}

/// Exact matches over non-skipped results.
inline double exact_match_rate(std::span<const AttackResult> results) {
  std::size_t counted = 0, matched = 0;
  for (const auto& r : results) {
    if (r.skipped) continue;
    ++counted;
    matched += r.exact_match;
  }
  if (counted == 0) throw DataError("exact match rate undefined: every result was skipped");
  return static_cast<double>(matched) / static_cast<double>(counted);
}

inline double mean_bleu4(std::span<const AttackResult> results) {
  std::size_t counted = 0;
  double sum = 0.0;
  for (const auto& r : results) {
    if (r.skipped) continue;
    ++counted;
    sum += r.bleu4;
  }
  if (counted == 0) throw DataError("mean BLEU-4 undefined: every result was skipped");
  return sum / static_cast<double>(counted);
}

inline double victory_rate(std::span<const AttackResult> results) {
  std::size_t counted = 0, won = 0;
  for (const auto& r : results) {
    if (r.skipped) continue;
    ++counted;
    won += r.victory;
  }
  if (counted == 0) throw DataError("victory rate undefined: every result was skipped");
  return static_cast<double>(won) / static_cast<double>(counted);
}

/// Sample Pearson correlation coefficient.
inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("pearson: inputs differ in length");
  if (xs.size() < 2) throw std::invalid_argument("pearson: need at least two points");
  const auto n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw std::domain_error("pearson: zero variance input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Model name -> ids of the samples it reproduced exactly, in a fixed model order.
using MemorisationSets = std::vector<std::pair<std::string, std::set<std::string>>>;

inline std::set<std::string> memorised_ids(std::span<const AttackResult> results) {
  std::set<std::string> ids;
  for (const auto& r : results) {
    if (!r.skipped && r.exact_match) ids.insert(r.sample_id);
  }
  return ids;
}

/// cells[a][b] = |mem(a) ∩ mem(b)| / |mem(b)|: the share of b's memorised
/// samples that a also memorised. An empty mem(b) gives 1 on the diagonal, 0 elsewhere.
struct OverlapMatrix {
  std::vector<std::string> model_names;
  std::vector<std::vector<double>> cells;

  double at(const std::string& a, const std::string& b) const {
    auto idx = [&](const std::string& name) {
      auto it = std::find(model_names.begin(), model_names.end(), name);
      if (it == model_names.end()) throw std::out_of_range("no model " + name);
      return static_cast<std::size_t>(it - model_names.begin());
    };
    return cells[idx(a)][idx(b)];
  }
};

inline OverlapMatrix overlap_matrix(const MemorisationSets& mem_sets) {
  if (mem_sets.empty()) throw std::invalid_argument("overlap matrix needs at least one model");
  OverlapMatrix m;
  const std::size_t n = mem_sets.size();
  m.cells.assign(n, std::vector<double>(n, 0.0));
  for (const auto& [name, ids] : mem_sets) m.model_names.push_back(name);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      const auto& A = mem_sets[a].second;
      const auto& B = mem_sets[b].second;
      if (B.empty()) {
        m.cells[a][b] = a == b ? 1.0 : 0.0;
        continue;
      }
      std::size_t shared = 0;
      for (const auto& id : B) shared += A.contains(id);
      m.cells[a][b] = static_cast<double>(shared) / static_cast<double>(B.size());
    }
  }
  return m;
}

/// histogram[c] = number of benchmark samples memorised by exactly c models.
inline std::vector<std::size_t> memorisation_counts(const MemorisationSets& mem_sets,
                                                    std::span<const std::string> benchmark_ids) {
  std::unordered_map<std::string, std::size_t> per_sample;
  for (const auto& id : benchmark_ids) per_sample.emplace(id, 0);
  for (const auto& [name, ids] : mem_sets) {
    for (const auto& id : ids) {
      auto it = per_sample.find(id);
      if (it == per_sample.end()) throw DataError("model " + name + " memorised unknown sample " + id);
      ++it->second;
    }
  }
  std::vector<std::size_t> histogram(mem_sets.size() + 1, 0);
  for (const auto& [id, count] : per_sample) ++histogram[count];
  return histogram;
}

struct CategoryTally {
  std::size_t memorised = 0;
  std::size_t total = 0;

  double rate() const { return total == 0 ? 0.0 : static_cast<double>(memorised) / static_cast<double>(total); }
  bool operator==(const CategoryTally&) const = default;
};

/// Per category: exact matches and non-skipped totals.
inline std::map<Category, CategoryTally> category_breakdown(std::span<const AttackResult> results,
                                                            std::span<const CandidateSample> samples) {
  std::unordered_map<std::string, Category> category_of;
  for (const auto& s : samples) category_of.emplace(s.id, s.category);
  std::map<Category, CategoryTally> out;
  for (const auto& r : results) {
    if (r.skipped) continue;
    auto it = category_of.find(r.sample_id);
    if (it == category_of.end()) throw DataError("result for unknown sample " + r.sample_id);
    auto& tally = out[it->second];
    ++tally.total;
    tally.memorised += r.exact_match;
  }
  return out;
}

struct RunReport {
  GeneratorRef generator;
  double em_rate = 0.0;
  double mean_bleu4 = 0.0;
  double victory_rate = 0.0;
  std::size_t counted = 0;
  std::size_t skipped = 0;
  std::map<Category, double> per_category_em;
};

/// `samples` may be empty, in which case per-category rates are left out.
inline RunReport summarize(const GeneratorRef& generator, std::span<const AttackResult> results,
                           std::span<const CandidateSample> samples = {}) {
  RunReport r;
  r.generator = generator;
  r.counted = counted_results(results);
  r.skipped = results.size() - r.counted;
  r.em_rate = exact_match_rate(results);
  r.mean_bleu4 = mean_bleu4(results);
  r.victory_rate = memtrace::victory_rate(results);
  if (!samples.empty()) {
    for (const auto& [cat, tally] : category_breakdown(results, samples)) r.per_category_em[cat] = tally.rate();
  }
  return r;
}

}  // namespace memtrace
