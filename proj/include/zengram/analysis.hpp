#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "zengram/checkpoint.hpp"

namespace zengram {

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Context-averaged first-layer n-gram encoder outputs.
struct NgramVectors {
  std::vector<std::u32string> ngrams;
  std::vector<std::vector<double>> vectors;
  std::vector<std::size_t> occurrences;

  /// -1 when absent.
  long index_of(std::u32string_view ngram) const;
};

/// Averages, for every n-gram matched at least `min_occ` times, its
/// first-layer representation over all sentences it occurs in.
NgramVectors ngram_context_vectors(const Checkpoint& model, std::span<const Sentence> sentences,
                                   std::size_t min_occ = 2);

struct Neighbor {
  std::u32string ngram;
  double similarity = 0.0;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Up to k most cosine-similar n-grams, descending, the query itself
/// excluded. Ties keep the table order. Throws AnalysisError with
/// edit-distance suggestions from `lexicon` when the query is absent.
std::vector<Neighbor> nearest_neighbors(const NgramVectors& table, std::u32string_view query, std::size_t k,
                                        const NgramLexicon& lexicon);

std::size_t edit_distance(std::u32string_view a, std::u32string_view b);
/// Up to `count` lexicon entries closest to `query` by edit distance
/// (ties: lexicon id order).
std::vector<std::u32string> closest_entries(const NgramLexicon& lexicon, std::u32string_view query,
                                            std::size_t count = 5);

struct AttentionDump {
  std::u32string text;
  std::size_t layer = 0;
  /// Per matched n-gram: attention it receives in the chosen n-gram encoder
  /// layer, averaged over heads and over querying n-grams.
  std::vector<std::pair<std::u32string, double>> ngram_weights;
  /// Per character: covering n-grams with their integration weights.
  std::vector<std::vector<std::pair<std::u32string, double>>> char_weights;
};

AttentionDump attention_dump(const Checkpoint& model, std::u32string_view text, std::size_t layer);
std::string format_attention_dump(const AttentionDump& dump);
/// One row of cells per character, shaded by the attention mass of the
/// n-grams covering it.
std::string heat_strip_svg(const AttentionDump& dump);

}  // namespace zengram
