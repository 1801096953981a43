#include "zengram/lexicon.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "zengram/utf8.hpp"

namespace zengram {

std::uint64_t NgramCounts::count(std::u32string_view g) const {
  auto it = counts.find(std::u32string(g));
  return it == counts.end() ? 0 : it->second;
}

void NgramCounts::merge(const NgramCounts& other) {
  for (const auto& [g, c] : other.counts) counts[g] += c;
  total_chars += other.total_chars;
  n_max = std::max(n_max, other.n_max);
}

NgramCounts count_ngrams(std::span<const Sentence> sentences, std::size_t n_max) {
  if (n_max < 2) throw LexiconError("n_max must be >= 2");
  NgramCounts out;
  out.n_max = n_max;
  for (const auto& s : sentences) {
    const std::u32string_view text = s.chars;
    out.total_chars += text.size();
    for (std::size_t i = 0; i < text.size(); ++i) {
      const std::size_t max_len = std::min(n_max, text.size() - i);
      for (std::size_t len = 1; len <= max_len; ++len) ++out.counts[std::u32string(text.substr(i, len))];
    }
  }
  return out;
}

double pmi_score(std::u32string_view g, const NgramCounts& counts) {
  if (g.size() < 2) throw LexiconError("PMI needs an n-gram of length >= 2");
  const auto cg = counts.count(g);
  if (cg == 0 || counts.total_chars == 0) throw LexiconError("n-gram has no count");
  // ln(cg * N / (cl * cr)) with exact integer products, so that
  // statistically independent parts give exactly zero.
  const unsigned __int128 num = static_cast<unsigned __int128>(cg) * counts.total_chars;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t s = 1; s < g.size(); ++s) {
    const auto cl = counts.count(g.substr(0, s));
    const auto cr = counts.count(g.substr(s));
    if (cl == 0 || cr == 0) throw LexiconError("split part of n-gram has no count");
    const unsigned __int128 den = static_cast<unsigned __int128>(cl) * cr;
    double value;
    if (num == den) {
      value = 0.0;
    } else {
      value = static_cast<double>(std::log(static_cast<long double>(num) / static_cast<long double>(den)));
    }
    best = std::min(best, value);
  }
  return best;
}

NgramLexicon::NgramLexicon(std::vector<LexiconEntry> entries, std::size_t n_max,
                           double pmi_threshold, std::uint64_t freq_threshold)
    : entries_(std::move(entries)),
      n_max_(n_max),
      pmi_threshold_(pmi_threshold),
      freq_threshold_(freq_threshold) {
  if (n_max_ < kMinLen || n_max_ > kMaxLen) throw LexiconError("lexicon n_max must lie in [2, 8]");
  std::sort(entries_.begin(), entries_.end(), [](const LexiconEntry& a, const LexiconEntry& b) {
    if (a.freq != b.freq) return a.freq > b.freq;
    return a.ngram < b.ngram;
  });
  index_.reserve(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.ngram.size() < kMinLen || e.ngram.size() > n_max_)
      throw LexiconError("lexicon entry length outside [2, n_max]");
    if (!index_.emplace(e.ngram, static_cast<NgramId>(i)).second)
      throw LexiconError("duplicate lexicon entry");
  }
}

std::optional<NgramId> NgramLexicon::find(std::u32string_view ngram) const {
  auto it = index_.find(std::u32string(ngram));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

NgramLexicon NgramLexicon::with_scaled_frequencies(std::uint64_t factor) const {
  auto entries = entries_;
  for (auto& e : entries) e.freq *= factor;
  return NgramLexicon(std::move(entries), n_max_, pmi_threshold_, freq_threshold_ * factor);
}

NgramLexicon extract_lexicon(const NgramCounts& counts, double pmi_threshold,
                             std::uint64_t freq_threshold) {
  if (std::isnan(pmi_threshold)) throw LexiconError("PMI threshold must not be NaN");
  const std::size_t n_max = std::min(counts.n_max, NgramLexicon::kMaxLen);
  std::vector<LexiconEntry> kept;
  for (const auto& [g, c] : counts.counts) {
    if (g.size() < NgramLexicon::kMinLen || g.size() > n_max || c < freq_threshold) continue;
    const double pmi = pmi_score(g, counts);
    if (pmi >= pmi_threshold) kept.push_back({g, c, pmi});
  }
  return NgramLexicon(std::move(kept), std::max(n_max, NgramLexicon::kMinLen), pmi_threshold,
                      freq_threshold);
}

namespace {

constexpr const char* kLexiconMagic = "ZENGRAM-LEXICON";

std::string escape_field(std::u32string_view s) {
  std::string out;
  for (char32_t c : s) {
    switch (c) {
      case U'\\': out += "\\\\"; break;
      case U'\t': out += "\\t"; break;
      case U'\n': out += "\\n"; break;
      case U'\r': out += "\\r"; break;
      default: out += encode_utf8(c);
    }
  }
  return out;
}

std::u32string unescape_field(const std::string& s, std::size_t line_no) {
  std::u32string raw = decode_utf8(s);
  std::u32string out;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] != U'\\') {
      out.push_back(raw[i]);
      continue;
    }
    if (++i == raw.size()) throw LexiconError("line " + std::to_string(line_no) + ": dangling escape");
    switch (raw[i]) {
      case U'\\': out.push_back(U'\\'); break;
      case U't': out.push_back(U'\t'); break;
      case U'n': out.push_back(U'\n'); break;
      case U'r': out.push_back(U'\r'); break;
      default: throw LexiconError("line " + std::to_string(line_no) + ": unknown escape");
    }
  }
  return out;
}

std::string format_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

void NgramLexicon::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LexiconError("cannot write lexicon file: " + path.string());
  write(out);
  if (!out) throw LexiconError("write failure on lexicon file: " + path.string());
}

void NgramLexicon::write(std::ostream& out) const {
  out << kLexiconMagic << " v1 " << kMinLen << ' ' << n_max_ << ' ' << format_real(pmi_threshold_)
      << ' ' << freq_threshold_ << '\n';
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    out << i << '\t' << escape_field(e.ngram) << '\t' << e.freq << '\t' << format_real(e.pmi) << '\n';
  }
}

NgramLexicon NgramLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LexiconError("cannot open lexicon file: " + path.string());
  return read(in, path.string());
}

NgramLexicon NgramLexicon::read(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw LexiconError(source + ": missing lexicon header");
  std::istringstream header(line);
  std::string magic, version, pmi_text;
  std::size_t n_min = 0, n_max = 0;
  std::uint64_t freq_thr = 0;
  header >> magic >> version;
  if (magic != kLexiconMagic || version != "v1")
    throw LexiconError(source + ": unsupported lexicon version (expected " +
                       std::string(kLexiconMagic) + " v1)");
  if (!(header >> n_min >> n_max >> pmi_text >> freq_thr) || n_min != kMinLen)
    throw LexiconError(source + ":1: malformed lexicon header");
  char* end = nullptr;
  const double pmi_thr = std::strtod(pmi_text.c_str(), &end);
  if (end == pmi_text.c_str() || *end != '\0') throw LexiconError(source + ":1: malformed PMI threshold");

  std::vector<LexiconEntry> entries;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    auto bad = [&](const std::string& why) {
      return LexiconError(source + ":" + std::to_string(line_no) + ": " + why);
    };
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4) throw bad("expected 4 tab-separated fields");
    LexiconEntry e;
    try {
      if (std::stoull(fields[0]) != entries.size()) throw bad("ids must be contiguous and ascending");
      e.ngram = unescape_field(fields[1], line_no);
      std::size_t used = 0;
      e.freq = std::stoull(fields[2], &used);
      if (used != fields[2].size()) throw bad("malformed frequency");
      e.pmi = std::stod(fields[3], &used);
      if (used != fields[3].size()) throw bad("malformed PMI");
    } catch (const LexiconError&) {
      throw;
    } catch (const std::exception&) {
      throw bad("malformed entry");
    }
    entries.push_back(std::move(e));
  }
  NgramLexicon lex(entries, n_max, pmi_thr, freq_thr);
  if (lex.entries_ != entries) throw LexiconError(source + ": entries are not in id order");
  return lex;
}

}  // namespace zengram
