#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "test_util.hpp"
#include "zengram/lexicon.hpp"

using namespace zengram;
using zengram::testing::TempDir;

namespace {

// Quadratic reference: direct substring enumeration.
std::map<std::u32string, std::uint64_t> brute_counts(const std::vector<Sentence>& sents, std::size_t n_max) {
  std::map<std::u32string, std::uint64_t> out;
  for (const auto& s : sents)
    for (std::size_t i = 0; i < s.chars.size(); ++i)
      for (std::size_t j = i + 1; j <= s.chars.size() && j - i <= n_max; ++j) ++out[s.chars.substr(i, j - i)];
  return out;
}

std::uint64_t occurrences(const std::vector<Sentence>& sents, const std::u32string& g) {
  std::uint64_t n = 0;
  for (const auto& s : sents)
    for (std::size_t i = 0; i + g.size() <= s.chars.size(); ++i)
      if (s.chars.compare(i, g.size(), g) == 0) ++n;
  return n;
}

double brute_pmi(const std::vector<Sentence>& sents, const std::u32string& g) {
  double n = 0;
  for (const auto& s : sents) n += static_cast<double>(s.chars.size());
  const double pg = static_cast<double>(occurrences(sents, g)) / n;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < g.size(); ++k) {
    const double pl = static_cast<double>(occurrences(sents, g.substr(0, k))) / n;
    const double pr = static_cast<double>(occurrences(sents, g.substr(k))) / n;
    best = std::min(best, std::log(pg / (pl * pr)));
  }
  return best;
}

std::vector<Sentence> random_corpus(std::uint64_t seed, std::size_t sentences, std::size_t max_len,
                                    std::size_t alphabet) {
  Rng rng(seed);
  std::vector<Sentence> out;
  for (std::size_t i = 0; i < sentences; ++i)
    out.push_back({zengram::testing::random_string(rng, 1 + rng.uniform_int(max_len), U'a', alphabet), 0});
  return out;
}

}  // namespace

TEST_CASE("count_ngrams enumerates within sentences") {
  std::vector<Sentence> s{{U"abab", 0}};
  auto c = count_ngrams(s, 2);
  CHECK(c.total_chars == 4);
  CHECK(c.counts.size() == 4);
  CHECK(c.count(U"a") == 2);
  CHECK(c.count(U"b") == 2);
  CHECK(c.count(U"ab") == 2);
  CHECK(c.count(U"ba") == 1);

  std::vector<Sentence> two{{U"ab", 0}, {U"ab", 0}};
  auto c2 = count_ngrams(two, 2);
  CHECK(c2.count(U"ab") == 2);
  CHECK(c2.count(U"ba") == 0);

  CHECK_THROWS_AS(count_ngrams(s, 1), LexiconError);
}

TEST_CASE("count_ngrams equals brute-force enumeration") {
  const auto corpus = random_corpus(7, 1000, 12, 5);
  const auto c = count_ngrams(corpus, 4);
  const auto oracle = brute_counts(corpus, 4);
  CHECK(c.counts.size() == oracle.size());
  for (const auto& [g, n] : oracle) REQUIRE(c.count(g) == n);
  std::uint64_t total = 0;
  for (const auto& s : corpus) total += s.chars.size();
  CHECK(c.total_chars == total);
}

TEST_CASE("sharded counting merges to the same result") {
  const auto corpus = random_corpus(8, 200, 10, 4);
  const std::span<const Sentence> all(corpus);
  auto a = count_ngrams(all.subspan(0, 70), 3);
  auto b = count_ngrams(all.subspan(70), 3);
  auto ab = a;
  ab.merge(b);
  auto ba = b;
  ba.merge(a);
  const auto whole = count_ngrams(corpus, 3);
  CHECK(ab.counts == whole.counts);
  CHECK(ba.counts == whole.counts);
  CHECK(ab.total_chars == whole.total_chars);
}

TEST_CASE("pmi_score closed forms") {
  NgramCounts c;
  c.total_chars = 10;
  c.counts = {{U"a", 5}, {U"b", 5}, {U"ab", 5}};
  CHECK(pmi_score(U"ab", c) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  NgramCounts ind;
  ind.total_chars = 100;
  ind.counts = {{U"a", 20}, {U"b", 10}, {U"ab", 2}};  // 2 * 100 == 20 * 10
  CHECK(std::abs(pmi_score(U"ab", ind)) <= 1e-12);

  CHECK_THROWS_AS(pmi_score(U"a", c), LexiconError);
  CHECK_THROWS_AS(pmi_score(U"ba", c), LexiconError);
}

TEST_CASE("pmi_score equals min-over-splits oracle on length-3 n-grams") {
  const auto corpus = random_corpus(11, 300, 15, 4);
  const auto c = count_ngrams(corpus, 3);
  int checked = 0;
  for (const auto& [g, n] : c.counts) {
    if (g.size() != 3) continue;
    CHECK(pmi_score(g, c) == doctest::Approx(brute_pmi(corpus, g)).epsilon(1e-12));
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("pmi_score is invariant under corpus duplication") {
  auto corpus = random_corpus(12, 100, 10, 3);
  const auto c1 = count_ngrams(corpus, 3);
  auto doubled = corpus;
  doubled.insert(doubled.end(), corpus.begin(), corpus.end());
  const auto c2 = count_ngrams(doubled, 3);
  for (const auto& [g, n] : c1.counts)
    if (g.size() >= 2) CHECK(pmi_score(g, c1) == pmi_score(g, c2));
}

TEST_CASE("extract_lexicon matches a brute-force filter") {
  const auto corpus = random_corpus(13, 800, 12, 4);  // under 10k characters
  const auto counts = count_ngrams(corpus, 8);
  const auto lex = extract_lexicon(counts, 0.0, 2);

  // PMI >= 0 on every split  <=>  count(g) * N >= count(l) * count(r), in exact integers.
  std::uint64_t total = 0;
  for (const auto& s : corpus) total += s.chars.size();
  std::set<std::u32string> expected;
  for (const auto& [g, n] : brute_counts(corpus, 8)) {
    if (g.size() < 2 || n < 2) continue;
    bool keep = true;
    for (std::size_t k = 1; k < g.size(); ++k)
      keep = keep && n * total >= occurrences(corpus, g.substr(0, k)) * occurrences(corpus, g.substr(k));
    if (keep) expected.insert(g);
  }
  std::set<std::u32string> got;
  for (const auto& e : lex.entries()) got.insert(e.ngram);
  CHECK(got == expected);

  for (std::size_t i = 0; i < lex.size(); ++i) {
    const auto& e = lex.entry(static_cast<NgramId>(i));
    CHECK(e.freq == occurrences(corpus, e.ngram));
    CHECK(e.pmi >= 0.0);
    if (i > 0) {
      const auto& prev = lex.entry(static_cast<NgramId>(i - 1));
      CHECK((prev.freq > e.freq || (prev.freq == e.freq && prev.ngram < e.ngram)));
    }
  }
}

TEST_CASE("extraction thresholds") {
  const auto corpus = random_corpus(14, 400, 12, 4);
  const auto counts = count_ngrams(corpus, 6);
  CHECK(extract_lexicon(counts, std::numeric_limits<double>::infinity(), 1).empty());

  CHECK(kChinesePreset.pmi_threshold == 3.0);
  CHECK(kChinesePreset.freq_threshold == 15);
  CHECK(kArabicPreset.pmi_threshold == 10.0);
  CHECK(kArabicPreset.freq_threshold == 20);

  // Raising either threshold never adds entries.
  auto names = [](const NgramLexicon& l) {
    std::set<std::u32string> s;
    for (const auto& e : l.entries()) s.insert(e.ngram);
    return s;
  };
  const auto base = names(extract_lexicon(counts, 0.0, 2));
  for (double pmi : {0.0, 0.3, 1.0})
    for (std::uint64_t f : {2u, 4u, 9u}) {
      const auto sub = names(extract_lexicon(counts, pmi, f));
      for (const auto& g : sub) CHECK(base.count(g) == 1);
      CHECK(sub.size() <= base.size());
    }

  // Sub-n-grams are at least as frequent as the entries containing them.
  const auto lex = extract_lexicon(counts, 0.0, 2);
  for (const auto& e : lex.entries())
    for (std::size_t i = 0; i < e.ngram.size(); ++i)
      for (std::size_t len = 1; i + len <= e.ngram.size(); ++len)
        CHECK(counts.count(e.ngram.substr(i, len)) >= e.freq);
}

TEST_CASE("lexicon file round trip and errors") {
  TempDir dir;
  const auto corpus = random_corpus(15, 300, 12, 4);
  const auto lex = extract_lexicon(count_ngrams(corpus, 8), 0.1, 3);
  REQUIRE(lex.size() > 0);
  lex.save(dir / "lex.txt");
  CHECK(NgramLexicon::load(dir / "lex.txt") == lex);

  zengram::testing::write_file(dir / "bad_magic.txt", "ZENGRAM-LEXICON v2 2 8 3 15\n");
  CHECK_THROWS_WITH_AS(NgramLexicon::load(dir / "bad_magic.txt"), doctest::Contains("version"), LexiconError);
  zengram::testing::write_file(dir / "bad_row.txt", "ZENGRAM-LEXICON v1 2 8 3 15\n0\tab\t5\n");
  CHECK_THROWS_WITH_AS(NgramLexicon::load(dir / "bad_row.txt"), doctest::Contains(":2:"), LexiconError);
}

TEST_CASE("golden lexicon file") {
  const auto lex = NgramLexicon::load(std::string(ZENGRAM_TEST_DATA) + "/golden_lexicon.txt");
  REQUIRE(lex.size() == 3);
  CHECK(lex.n_max() == 8);
  CHECK(lex.pmi_threshold() == 0.0);
  CHECK(lex.freq_threshold() == 2);
  CHECK(lex.entry(0) == LexiconEntry{U"一会儿", 12, 2.5});
  CHECK(lex.entry(1) == LexiconEntry{U"ab", 7, 0.69314718055994529});
  CHECK(lex.entry(2) == LexiconEntry{U"a\tb", 3, -0.125});
  CHECK(lex.find(U"ab") == 1);
}
