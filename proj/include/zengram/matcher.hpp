#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <string_view>
#include <vector>

#include "zengram/lexicon.hpp"

namespace zengram {

struct NgramMatch {
  NgramId ngram_id = 0;
  std::uint32_t start = 0;
  std::uint32_t len = 0;

  bool operator==(const NgramMatch&) const = default;
};

/// (start ascending, len descending)
bool canonical_less(const NgramMatch& a, const NgramMatch& b);

/// Aho-Corasick automaton over the lexicon entries. Immutable once built.
class Matcher {
 public:
  explicit Matcher(const NgramLexicon& lexicon);

  /// Every occurrence of every entry, in canonical order.
  std::vector<NgramMatch> find_all(std::u32string_view text) const;

  /// Longest entry starting at `pos`, or nullopt. Walks goto edges only.
  std::optional<NgramMatch> longest_at(std::u32string_view text, std::size_t pos) const;

  std::uint64_t frequency(NgramId id) const { return freqs_.at(static_cast<std::size_t>(id)); }
  std::size_t n_max() const { return n_max_; }
  std::size_t num_patterns() const { return lengths_.size(); }

 private:
  static std::uint64_t edge_key(std::uint32_t node, char32_t c) {
    return (static_cast<std::uint64_t>(node) << 21) | static_cast<std::uint64_t>(c);
  }
  std::int64_t child(std::uint32_t node, char32_t c) const;

  struct Node {
    std::uint32_t fail = 0;
    std::int32_t pattern = -1;       // entry ending exactly here
    std::int32_t dict_link = -1;     // nearest terminal node on the fail chain
  };
  std::vector<Node> nodes_;
  std::unordered_map<std::uint64_t, std::uint32_t> edges_;
  std::vector<std::uint32_t> lengths_;
  std::vector<std::uint64_t> freqs_;
  std::size_t n_max_ = 0;
};

/// Keeps at most `max_matches` matches: highest lexicon frequency first,
/// ties by earlier start then longer length. Result is in canonical order.
std::vector<NgramMatch> select_top_matches(std::vector<NgramMatch> matches, const Matcher& matcher,
                                           std::size_t max_matches);

/// All occurrences; when there are more than `max_matches`, keeps those with
/// highest lexicon frequency (ties: earlier start, then longer). Result is in
/// canonical order.
std::vector<NgramMatch> match_ngrams(std::u32string_view chars, const Matcher& matcher,
                                     std::size_t max_matches);

struct Association {
  std::uint32_t match = 0;  // index k into AssociationMap::matches
  double weight = 0.0;      // p_{i,k}

  bool operator==(const Association&) const = default;
};

/// Per-position covering n-grams with frequency-normalized weights
/// p_{i,k} = c_{i,k} / sum_k c_{i,k}, where c is the lexicon frequency.
struct AssociationMap {
  std::vector<NgramMatch> matches;
  std::vector<std::vector<Association>> positions;

  bool operator==(const AssociationMap&) const = default;
};

AssociationMap association_map(std::vector<NgramMatch> matches, const NgramLexicon& lexicon,
                               std::size_t seq_len);
AssociationMap association_map(std::vector<NgramMatch> matches, const Matcher& matcher,
                               std::size_t seq_len);

struct TokenSpan {
  std::uint32_t start = 0;
  std::uint32_t len = 0;

  bool operator==(const TokenSpan&) const = default;
};

/// Pluggable word segmenter used to propose masking units.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual std::vector<TokenSpan> segment(std::u32string_view chars) const = 0;
  virtual std::string name() const = 0;
};

/// Greedy forward maximum matching against the lexicon; unmatched
/// characters become single-character spans.
class MaxMatchSegmenter : public Segmenter {
 public:
  explicit MaxMatchSegmenter(std::shared_ptr<const Matcher> matcher) : matcher_(std::move(matcher)) {}
  std::vector<TokenSpan> segment(std::u32string_view chars) const override;
  std::string name() const override { return "maxmatch"; }

 private:
  std::shared_ptr<const Matcher> matcher_;  // null: empty lexicon
};

/// One span per character (plain character-level masking units).
class CharSegmenter : public Segmenter {
 public:
  std::vector<TokenSpan> segment(std::u32string_view chars) const override;
  std::string name() const override { return "char"; }
};

std::vector<TokenSpan> segment(std::u32string_view chars, const NgramLexicon& lexicon);

/// "maxmatch" or "char".
std::unique_ptr<Segmenter> make_segmenter(const std::string& name,
                                          std::shared_ptr<const Matcher> matcher);

}  // namespace zengram
