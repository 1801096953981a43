#include <doctest.h>

#include "test_util.hpp"
#include "zengram/corpus.hpp"

using namespace zengram;
using zengram::testing::TempDir;
using zengram::testing::write_file;

TEST_CASE("load_corpus splits documents on blank lines") {
  TempDir dir;
  write_file(dir / "c.txt", "ab\ncd\n\nef\n");
  const auto s = load_corpus(dir / "c.txt");
  REQUIRE(s.size() == 3);
  CHECK(s[0] == Sentence{U"ab", 0});
  CHECK(s[1] == Sentence{U"cd", 0});
  CHECK(s[2] == Sentence{U"ef", 1});
}

TEST_CASE("load_corpus edge cases") {
  TempDir dir;
  write_file(dir / "empty.txt", "");
  CHECK(load_corpus(dir / "empty.txt").empty());

  write_file(dir / "ws.txt", "a b\n");
  CHECK(load_corpus(dir / "ws.txt")[0].chars == U"a b");

  write_file(dir / "multi.txt", "\n\nab\n\n  \n\ncd\r\n");
  const auto s = load_corpus(dir / "multi.txt");
  REQUIRE(s.size() == 2);
  CHECK(s[0].doc_id == 0);
  CHECK(s[1] == Sentence{U"cd", 1});

  write_file(dir / "utf8.txt", "一会儿\n");
  CHECK(load_corpus(dir / "utf8.txt")[0].chars == U"一会儿");
}

TEST_CASE("load_corpus errors") {
  TempDir dir;
  CHECK_THROWS_WITH_AS(load_corpus(dir / "missing.txt"), doctest::Contains("missing.txt"), CorpusError);
  write_file(dir / "bad.txt", "ok\nab\xff\n");
  CHECK_THROWS_WITH_AS(load_corpus(dir / "bad.txt"), doctest::Contains("byte offset 5"), CorpusError);
}

TEST_CASE("streaming is deterministic") {
  TempDir dir;
  write_file(dir / "c.txt", "ab\ncd\n\nef\ngh\n");
  CorpusReader r1(dir / "c.txt"), r2(dir / "c.txt");
  for (;;) {
    auto a = r1.next(), b = r2.next();
    REQUIRE(a.has_value() == b.has_value());
    if (!a) break;
    CHECK(*a == *b);
  }
}

TEST_CASE("build_char_vocab orders by frequency then code point") {
  std::vector<Sentence> s{{U"aab", 0}};
  auto v = build_char_vocab(s, 1);
  CHECK(v.size() == 7);
  CHECK(v.id(U'a') == 5);
  CHECK(v.id(U'b') == 6);

  auto v2 = build_char_vocab(s, 2);
  CHECK(v2.size() == 6);
  CHECK(v2.contains(U'a'));
  CHECK_FALSE(v2.contains(U'b'));

  std::vector<Sentence> tie{{U"zyxzyx", 0}};
  auto v3 = build_char_vocab(tie, 1);
  CHECK(v3.id(U'x') < v3.id(U'y'));
  CHECK(v3.id(U'y') < v3.id(U'z'));

  CHECK_THROWS_WITH_AS(build_char_vocab(std::vector<Sentence>{}, 1), "empty corpus", CorpusError);
}

TEST_CASE("encode_chars maps unknown characters to UNK") {
  std::vector<Sentence> s{{U"ab", 0}};
  auto v = build_char_vocab(s, 1);
  CHECK(encode_chars(U"ab", v) == std::vector<TokenId>{v.id(U'a'), v.id(U'b')});
  CHECK(encode_chars(U"az", v) == std::vector<TokenId>{v.id(U'a'), Vocab::kUnk});
  CHECK(encode_chars(U"", v).empty());
  CHECK(decode_ids(encode_chars(U"abba", v), v) == U"abba");
}

TEST_CASE("vocab file round trip") {
  TempDir dir;
  std::vector<Sentence> s{{U"一会儿 ab\tc", 0}};
  auto v = build_char_vocab(s, 1);
  v.save(dir / "vocab.tsv");
  const auto text = zengram::testing::read_file(dir / "vocab.tsv");
  CHECK(text.rfind("0\t[PAD]\t0\n1\t[UNK]\t0\n", 0) == 0);
  CHECK(Vocab::load(dir / "vocab.tsv") == v);
}

TEST_CASE("make_sentence_pairs") {
  std::vector<Sentence> doc{{U"s1", 0}, {U"s2", 0}, {U"s3", 0}};
  Rng rng(1);
  auto pairs = make_sentence_pairs(doc, rng, 1.0);
  REQUIRE(pairs.size() == 2);
  CHECK((pairs[0].a == 0 && pairs[0].b == 1 && pairs[0].is_next));
  CHECK((pairs[1].a == 1 && pairs[1].b == 2 && pairs[1].is_next));

  SUBCASE("p_next = 0 gives only random pairs") {
    std::vector<Sentence> two_docs{{U"a", 0}, {U"b", 0}, {U"c", 1}, {U"d", 1}};
    auto p = make_sentence_pairs(two_docs, rng, 0.0);
    for (const auto& x : p) {
      CHECK_FALSE(x.is_next);
      CHECK(two_docs[x.a].doc_id != two_docs[x.b].doc_id);
    }
  }
  SUBCASE("single document falls back to a non-adjacent sentence") {
    std::vector<Sentence> one{{U"a", 0}, {U"b", 0}, {U"c", 0}, {U"d", 0}};
    for (const auto& x : make_sentence_pairs(one, rng, 0.0)) {
      CHECK(x.b != x.a);
      CHECK(x.b != x.a + 1);
    }
  }
  SUBCASE("single sentence corpus is an error") {
    std::vector<Sentence> single{{U"a", 0}};
    CHECK_THROWS_AS(make_sentence_pairs(single, rng, 0.5), CorpusError);
  }
}

TEST_CASE("is_next rate converges to p_next") {
  std::vector<Sentence> corpus;
  for (int d = 0; d < 100; ++d)
    for (int i = 0; i < 101; ++i) corpus.push_back({U"x", d});
  Rng rng(2024);
  auto pairs = make_sentence_pairs(corpus, rng, 0.5);
  REQUIRE(pairs.size() == 10000);
  std::size_t next = 0;
  for (const auto& p : pairs) {
    next += p.is_next;
    if (p.is_next) CHECK(p.b == p.a + 1);
    CHECK(corpus[p.a].doc_id == corpus[p.a + 1].doc_id);
  }
  CHECK(std::abs(static_cast<double>(next) / 10000.0 - 0.5) <= 0.02);
}
