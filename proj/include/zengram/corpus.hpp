#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "zengram/rng.hpp"

namespace zengram {

/// Raised for malformed inputs and unusable corpora.
class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Sentence {
  std::u32string chars;
  std::int64_t doc_id = 0;

  bool operator==(const Sentence&) const = default;
};

/// Single-pass reader over a corpus file: UTF-8, one sentence per line,
/// blank (or whitespace-only) lines separate documents.
class CorpusReader {
 public:
  explicit CorpusReader(const std::filesystem::path& path);

  std::optional<Sentence> next();

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t offset_ = 0;
  std::int64_t doc_id_ = 0;
  bool seen_in_doc_ = false;
};

std::vector<Sentence> load_corpus(const std::filesystem::path& path);

using TokenId = std::int32_t;

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kMask = 4;
  static constexpr TokenId kNumReserved = 5;

  Vocab();

  /// Adds a character with its corpus frequency; ids are assigned in call order.
  TokenId add(char32_t ch, std::uint64_t freq);

  TokenId id(char32_t ch) const;
  bool contains(char32_t ch) const { return index_.count(ch) != 0; }
  /// Character for a non-reserved id.
  char32_t character(TokenId id) const;
  std::uint64_t frequency(TokenId id) const { return freqs_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return chars_.size(); }
  static bool is_special(TokenId id) { return id >= 0 && id < kNumReserved; }
  static const char* reserved_name(TokenId id);

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);
  void write(std::ostream& out) const;
  /// `source` names the input in error messages.
  static Vocab read(std::istream& in, const std::string& source);

  bool operator==(const Vocab& other) const {
    return chars_ == other.chars_ && freqs_ == other.freqs_;
  }

 private:
  std::vector<char32_t> chars_;
  std::vector<std::uint64_t> freqs_;
  std::unordered_map<char32_t, TokenId> index_;
};

/// Characters with frequency >= min_freq; ids by descending frequency,
/// ties by ascending code point.
Vocab build_char_vocab(std::span<const Sentence> sentences, std::uint64_t min_freq);

std::vector<TokenId> encode_chars(std::u32string_view chars, const Vocab& vocab);
std::u32string decode_ids(std::span<const TokenId> ids, const Vocab& vocab);

/// Indices into the sentence list.
struct SentencePair {
  std::size_t a = 0;
  std::size_t b = 0;
  bool is_next = false;
};

/// Next-sentence-prediction pairs. Every sentence that has a successor in
/// its document is used once as A; with probability p_next B is that
/// successor, otherwise B is drawn uniformly from sentences of other
/// documents (or a non-adjacent sentence when only one document exists).
std::vector<SentencePair> make_sentence_pairs(std::span<const Sentence> sentences, Rng& rng,
                                              double p_next);

}  // namespace zengram
