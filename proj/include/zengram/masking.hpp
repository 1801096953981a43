#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "zengram/corpus.hpp"
#include "zengram/lexicon.hpp"
#include "zengram/matcher.hpp"
#include "zengram/rng.hpp"

namespace zengram {

enum class MaskAction : std::uint8_t { kMasked = 0, kRandom = 1, kKept = 2 };

struct MaskRecord {
  std::uint32_t position = 0;
  TokenId original_id = 0;
  MaskAction action = MaskAction::kMasked;

  bool operator==(const MaskRecord&) const = default;
};

/// One encoder input: [CLS] A [SEP] B [SEP] padded to max_len. The
/// association map is computed on the uncorrupted characters and indexes
/// instance positions; mask records carry the MLM targets.
struct TrainingInstance {
  std::vector<TokenId> input_ids;
  std::vector<std::uint8_t> attention_mask;
  std::vector<std::uint8_t> segment_ids;
  AssociationMap association;
  std::vector<MaskRecord> mask_records;
  bool nsp_label = false;

  /// Number of unpadded positions.
  std::size_t length() const;
  /// Copy without trailing padding.
  TrainingInstance trimmed() const;

  bool operator==(const TrainingInstance&) const = default;
};

/// Greedy left-to-right merge of adjacent spans whose concatenation is a
/// lexicon entry no longer than n_max.
std::vector<TokenSpan> merge_adjacent(std::span<const TokenSpan> spans, std::u32string_view chars,
                                      const NgramLexicon& lexicon);

/// round(ratio * n) with halves rounded up.
std::size_t mask_budget(std::size_t num_positions, double ratio);

/// Shuffles the candidate spans, accepts each whose characters still fit
/// in the budget, then tops up with uniformly chosen single positions until
/// exactly `budget` positions are selected. Returned positions are sorted.
/// `accepted` receives the whole spans taken before the top-up.
std::vector<std::uint32_t> select_mask_spans(std::span<const TokenSpan> candidates, double budget_ratio,
                                             Rng& rng, std::vector<TokenSpan>* accepted = nullptr);

/// 80% [MASK], 10% random non-special id, 10% unchanged, independently per
/// position. Rewrites `input_ids` in place.
std::vector<MaskRecord> apply_mask_policy(std::span<const std::uint32_t> positions, Rng& rng,
                                          std::size_t vocab_size, std::span<TokenId> input_ids);

struct InstanceOptions {
  std::size_t max_len = 64;
  std::size_t max_matches = 128;
  double mask_ratio = 0.15;
};

/// Builds encoder inputs and pretraining instances from sentences.
class InstanceBuilder {
 public:
  InstanceBuilder(std::shared_ptr<const Vocab> vocab, std::shared_ptr<const NgramLexicon> lexicon,
                  std::shared_ptr<const Segmenter> segmenter, InstanceOptions options);

  /// Unmasked input for one or two sentences; truncates the longer
  /// sentence first (from its end) to fit max_len.
  TrainingInstance encode(std::u32string_view a, std::optional<std::u32string_view> b) const;

  /// segment -> merge -> select -> corrupt, with matching done beforehand.
  TrainingInstance build_pretrain_example(std::u32string_view a, std::u32string_view b, bool is_next,
                                          Rng& rng) const;

  const InstanceOptions& options() const { return options_; }
  const Vocab& vocab() const { return *vocab_; }
  const NgramLexicon& lexicon() const { return *lexicon_; }
  const Matcher* matcher() const { return matcher_.get(); }

 private:
  std::shared_ptr<const Vocab> vocab_;
  std::shared_ptr<const NgramLexicon> lexicon_;
  std::shared_ptr<const Matcher> matcher_;  // null when the lexicon is empty
  std::shared_ptr<const Segmenter> segmenter_;
  InstanceOptions options_;
};

/// One instance per pair; pair i uses the stream Rng::derive(seed, i).
std::vector<TrainingInstance> build_pretrain_instances(std::span<const Sentence> sentences,
                                                       std::span<const SentencePair> pairs,
                                                       const InstanceBuilder& builder,
                                                       std::uint64_t seed);

/// Binary instance file: text header "ZENGRAM-INST v1 <max_len> <M>\n",
/// then length-prefixed little-endian records.
void write_instances(const std::filesystem::path& path, std::span<const TrainingInstance> instances,
                     std::size_t max_len, std::size_t max_matches);
std::vector<TrainingInstance> read_instances(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_instance(const TrainingInstance& instance);
TrainingInstance deserialize_instance(std::span<const std::uint8_t> bytes);

}  // namespace zengram
