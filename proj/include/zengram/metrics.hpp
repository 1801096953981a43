#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace zengram {

/// Ordered (name, value) pairs.
using Metrics = std::vector<std::pair<std::string, double>>;

/// Percentage of equal entries; 0 for empty input.
double accuracy(std::span<const std::string> predicted, std::span<const std::string> gold);

/// (type, start, end) with end exclusive.
using LabeledSpan = std::tuple<std::string, std::size_t, std::size_t>;

/// Spans of a BIO sequence. Tags are "O", "B", "I", "B-X" or "I-X". An I
/// tag that does not continue an open span of the same type starts a new
/// one and is counted in `repairs`.
std::set<LabeledSpan> bio_spans(std::span<const std::string> tags, std::size_t* repairs = nullptr);

struct SpanScores {
  double precision = 0.0;  // percent
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t repairs = 0;
};

/// Exact-span precision, recall and F1 over all sentences; precision is 0
/// when nothing is predicted.
SpanScores span_f1(std::span<const std::vector<std::string>> predicted,
                   std::span<const std::vector<std::string>> gold);

/// Percentage of matching tags over all positions.
double token_accuracy(std::span<const std::vector<std::string>> predicted,
                      std::span<const std::vector<std::string>> gold);

/// Answer normalization: ASCII lowercase, whitespace and punctuation removed.
std::u32string normalize_answer(std::u32string_view text);
/// 1 if the normalized strings are equal.
double exact_match(std::u32string_view predicted, std::u32string_view gold);
/// Character-overlap F1 of the normalized strings, in [0, 1].
double overlap_f1(std::u32string_view predicted, std::u32string_view gold);

struct RankedCandidate {
  double score = 0.0;
  bool relevant = false;
};

/// Mean over groups of 1 / rank of the first relevant candidate, ranking by
/// descending score (ties keep input order). Groups with no relevant
/// candidate are skipped; 0 when no group counts.
double mean_reciprocal_rank(std::span<const std::vector<RankedCandidate>> groups);

}  // namespace zengram
