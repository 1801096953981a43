#include "zengram/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "zengram/utf8.hpp"

namespace zengram {

namespace {

bool is_blank(std::u32string_view s) {
  return std::all_of(s.begin(), s.end(), [](char32_t c) {
    return c == U' ' || c == U'\t' || c == U'\r' || c == U'\f' || c == U'\v' || c == 0x3000;
  });
}

}  // namespace

CorpusReader::CorpusReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw CorpusError("cannot open corpus file: " + path.string());
}

std::optional<Sentence> CorpusReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    const std::size_t line_offset = offset_;
    offset_ += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::u32string chars;
    try {
      chars = decode_utf8(line, line_offset);
    } catch (const Utf8Error& e) {
      throw CorpusError(path_.string() + ": " + e.what());
    }
    if (is_blank(chars)) {
      if (seen_in_doc_) {
        ++doc_id_;
        seen_in_doc_ = false;
      }
      continue;
    }
    seen_in_doc_ = true;
    return Sentence{std::move(chars), doc_id_};
  }
  if (in_.bad()) throw CorpusError("read failure on corpus file: " + path_.string());
  return std::nullopt;
}

std::vector<Sentence> load_corpus(const std::filesystem::path& path) {
  CorpusReader reader(path);
  std::vector<Sentence> out;
  while (auto s = reader.next()) out.push_back(std::move(*s));
  return out;
}

Vocab::Vocab() {
  chars_.assign(kNumReserved, 0);
  freqs_.assign(kNumReserved, 0);
}

TokenId Vocab::add(char32_t ch, std::uint64_t freq) {
  if (index_.count(ch)) throw CorpusError("duplicate vocabulary character");
  const auto id = static_cast<TokenId>(chars_.size());
  chars_.push_back(ch);
  freqs_.push_back(freq);
  index_.emplace(ch, id);
  return id;
}

TokenId Vocab::id(char32_t ch) const {
  auto it = index_.find(ch);
  return it == index_.end() ? kUnk : it->second;
}

char32_t Vocab::character(TokenId id) const {
  if (is_special(id)) throw CorpusError("reserved id has no character");
  return chars_.at(static_cast<std::size_t>(id));
}

const char* Vocab::reserved_name(TokenId id) {
  static const char* names[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return is_special(id) ? names[id] : nullptr;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write vocab file: " + path.string());
  write(out);
  if (!out) throw CorpusError("write failure on vocab file: " + path.string());
}

void Vocab::write(std::ostream& out) const {
  for (std::size_t i = 0; i < chars_.size(); ++i) {
    const auto id = static_cast<TokenId>(i);
    out << i << '\t';
    if (is_special(id)) {
      out << reserved_name(id);
    } else {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%04X", static_cast<unsigned>(chars_[i]));
      out << buf;
    }
    out << '\t' << freqs_[i] << '\n';
  }
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open vocab file: " + path.string());
  return read(in, path.string());
}

Vocab Vocab::read(std::istream& in, const std::string& source) {
  Vocab v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    auto bad = [&] {
      return CorpusError(source + ":" + std::to_string(line_no) + ": malformed vocab line");
    };
    if (t2 == std::string::npos) throw bad();
    std::size_t id;
    std::uint64_t freq;
    try {
      id = std::stoull(line.substr(0, t1));
      freq = std::stoull(line.substr(t2 + 1));
    } catch (const std::exception&) {
      throw bad();
    }
    if (id != line_no - 1) throw bad();
    const std::string field = line.substr(t1 + 1, t2 - t1 - 1);
    if (id < static_cast<std::size_t>(kNumReserved)) {
      if (field != reserved_name(static_cast<TokenId>(id))) throw bad();
      v.freqs_[id] = freq;
      continue;
    }
    char32_t cp;
    try {
      cp = static_cast<char32_t>(std::stoul(field, nullptr, 16));
    } catch (const std::exception&) {
      throw bad();
    }
    v.add(cp, freq);
  }
  return v;
}

Vocab build_char_vocab(std::span<const Sentence> sentences, std::uint64_t min_freq) {
  if (min_freq < 1) throw CorpusError("min_freq must be >= 1");
  if (sentences.empty()) throw CorpusError("empty corpus");
  std::map<char32_t, std::uint64_t> counts;
  for (const auto& s : sentences)
    for (char32_t c : s.chars) ++counts[c];
  std::vector<std::pair<char32_t, std::uint64_t>> entries(counts.begin(), counts.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& x, const auto& y) { return x.second > y.second; });
  Vocab v;
  for (const auto& [ch, n] : entries)
    if (n >= min_freq) v.add(ch, n);
  return v;
}

std::vector<TokenId> encode_chars(std::u32string_view chars, const Vocab& vocab) {
  std::vector<TokenId> ids;
  ids.reserve(chars.size());
  for (char32_t c : chars) ids.push_back(vocab.id(c));
  return ids;
}

std::u32string decode_ids(std::span<const TokenId> ids, const Vocab& vocab) {
  std::u32string out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(Vocab::is_special(id) ? U'�' : vocab.character(id));
  return out;
}

std::vector<SentencePair> make_sentence_pairs(std::span<const Sentence> sentences, Rng& rng,
                                              double p_next) {
  if (!(p_next >= 0.0 && p_next <= 1.0)) throw CorpusError("p_next must lie in [0, 1]");
  if (sentences.size() < 2) throw CorpusError("corpus needs at least two sentences to form pairs");
  const bool single_doc = std::all_of(sentences.begin(), sentences.end(), [&](const Sentence& s) {
    return s.doc_id == sentences.front().doc_id;
  });

  std::vector<SentencePair> pairs;
  for (std::size_t i = 0; i + 1 < sentences.size(); ++i) {
    if (sentences[i + 1].doc_id != sentences[i].doc_id) continue;
    if (rng.uniform01() < p_next) {
      pairs.push_back({i, i + 1, true});
      continue;
    }
    std::size_t j;
    if (single_doc) {
      if (sentences.size() < 3) throw CorpusError("single two-sentence document cannot form a random pair");
      // Any index except i and i+1.
      j = rng.uniform_int(sentences.size() - 2);
      if (j >= i) j += 2;
    } else {
      do {
        j = rng.uniform_int(sentences.size());
      } while (sentences[j].doc_id == sentences[i].doc_id);
    }
    pairs.push_back({i, j, false});
  }
  return pairs;
}

}  // namespace zengram
