#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "zengram/corpus.hpp"

namespace zengram {

class LexiconError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Counts of every contiguous n-gram of length 1..n_max, never crossing
/// sentence boundaries. `total_chars` is N in P(x) = count(x) / N.
struct NgramCounts {
  std::unordered_map<std::u32string, std::uint64_t> counts;
  std::uint64_t total_chars = 0;
  std::size_t n_max = 0;

  std::uint64_t count(std::u32string_view g) const;
  /// Associative merge used to combine counts from corpus shards.
  void merge(const NgramCounts& other);
};

NgramCounts count_ngrams(std::span<const Sentence> sentences, std::size_t n_max);

/// Minimum over all binary split points of ln(P(g) / (P(left) P(right))).
double pmi_score(std::u32string_view g, const NgramCounts& counts);

struct LexiconEntry {
  std::u32string ngram;
  std::uint64_t freq = 0;
  double pmi = 0.0;

  bool operator==(const LexiconEntry&) const = default;
};

using NgramId = std::int32_t;

class NgramLexicon {
 public:
  static constexpr std::size_t kMinLen = 2;
  static constexpr std::size_t kMaxLen = 8;

  NgramLexicon() = default;
  /// Entries are re-sorted into id order: descending freq, then by code points.
  NgramLexicon(std::vector<LexiconEntry> entries, std::size_t n_max, double pmi_threshold,
               std::uint64_t freq_threshold);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const LexiconEntry& entry(NgramId id) const { return entries_.at(static_cast<std::size_t>(id)); }
  std::span<const LexiconEntry> entries() const { return entries_; }
  std::optional<NgramId> find(std::u32string_view ngram) const;

  std::size_t n_min() const { return kMinLen; }
  std::size_t n_max() const { return n_max_; }
  double pmi_threshold() const { return pmi_threshold_; }
  std::uint64_t freq_threshold() const { return freq_threshold_; }

  /// Copy with every frequency multiplied by `factor`; ids are unchanged.
  NgramLexicon with_scaled_frequencies(std::uint64_t factor) const;

  void save(const std::filesystem::path& path) const;
  static NgramLexicon load(const std::filesystem::path& path);
  void write(std::ostream& out) const;
  static NgramLexicon read(std::istream& in, const std::string& source);

  bool operator==(const NgramLexicon& o) const {
    return entries_ == o.entries_ && n_max_ == o.n_max_ && freq_threshold_ == o.freq_threshold_ &&
           (pmi_threshold_ == o.pmi_threshold_);
  }

 private:
  std::vector<LexiconEntry> entries_;
  std::unordered_map<std::u32string, NgramId> index_;
  std::size_t n_max_ = kMaxLen;
  double pmi_threshold_ = 0.0;
  std::uint64_t freq_threshold_ = 0;
};

/// Keeps n-grams with length in [2, min(n_max, 8)], freq >= freq_threshold
/// and pmi >= pmi_threshold.
NgramLexicon extract_lexicon(const NgramCounts& counts, double pmi_threshold,
                             std::uint64_t freq_threshold);

/// Threshold presets reported for the Chinese and Arabic lexicons.
struct LexiconPreset {
  double pmi_threshold;
  std::uint64_t freq_threshold;
};
inline constexpr LexiconPreset kChinesePreset{3.0, 15};
inline constexpr LexiconPreset kArabicPreset{10.0, 20};

}  // namespace zengram
