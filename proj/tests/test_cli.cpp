#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "test_util.hpp"
#include "zengram/lexicon.hpp"
#include "zengram/utf8.hpp"

using namespace zengram;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

Outcome zg(std::vector<std::string> args) {
  args.insert(args.begin(), "zengram");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

bool contains(const std::string& s, const std::string& what) { return s.find(what) != std::string::npos; }

const std::string corpus = std::string(ZENGRAM_TEST_DATA) + "/tiny_corpus.txt";

// Lexicon and a short pretraining run on the tiny corpus, shared by the tests below.
struct Workspace {
  testing::TempDir dir;
  fs::path lexicon, ckpt;
  Outcome pretrain;
  Workspace() {
    lexicon = dir / "lex.txt";
    REQUIRE(zg({"build-lexicon", "--corpus", corpus, "--out", lexicon.string(), "--freq-thr", "5"}).code == 0);
    pretrain = zg({"pretrain", "--corpus", corpus, "--lexicon", lexicon.string(), "--out", (dir / "pre").string(),
                   "--steps", "50", "--warmup-steps", "5", "--log-every", "10"});
    ckpt = dir / "pre" / "ckpt-000050.bin";
  }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("run config parsing") {
  const auto c = cli::RunConfig::parse("# comment\n corpus = a b.txt \n\nseed=3\n", "x.conf");
  CHECK(c.str("corpus") == "a b.txt");
  CHECK(c.u64("seed") == 3);
  CHECK_THROWS_AS(cli::RunConfig::parse("bogus = 1\n", "x.conf"), cli::UsageError);
  try {
    cli::RunConfig::parse("seed = 1\nno equals sign\n", "x.conf");
    FAIL("expected an error");
  } catch (const cli::UsageError& e) {
    CHECK(contains(e.what(), "x.conf:2"));
  }
  cli::RunConfig base = c;
  cli::RunConfig over;
  over.set("seed", "9");
  base.merge(over);
  CHECK(base.u64("seed") == 9);
  CHECK(base.str("corpus") == "a b.txt");
  CHECK_THROWS_AS(base.real("corpus"), cli::UsageError);
  CHECK_THROWS_AS(base.str("k"), cli::UsageError);
  over.set("seed", "-1");
  CHECK_THROWS_AS(over.u64("seed"), cli::UsageError);
  over.set("freeze_encoder", "yes");
  CHECK(over.flag("freeze_encoder"));
}

TEST_CASE("build-lexicon") {
  testing::TempDir tmp;
  const auto golden = std::string(ZENGRAM_TEST_DATA) + "/tiny_corpus_lexicon.txt";
  const auto r = zg({"build-lexicon", "--corpus", corpus, "--out", (tmp / "lex.txt").string(), "--freq-thr", "5"});
  CHECK(r.code == 0);
  CHECK(contains(r.out, "57 entries"));
  CHECK(testing::read_file(tmp / "lex.txt") == testing::read_file(golden));

  const auto none = zg({"build-lexicon", "--corpus", corpus, "--out", (tmp / "none.txt").string(), "--pmi-thr", "1e9"});
  CHECK(none.code == 0);
  CHECK(contains(none.err, "0 entries"));

  const auto missing = zg({"build-lexicon", "--corpus", (tmp / "nope.txt").string(), "--out", (tmp / "x").string()});
  CHECK(missing.code == 2);
  CHECK(contains(missing.err, (tmp / "nope.txt").string()));

  CHECK(zg({"build-lexicon", "--corpus", corpus}).code == 2);
  CHECK(zg({"build-lexicon", "--corpus", corpus, "--out", "x", "--n-max", "12"}).code == 2);
  CHECK(zg({"build-lexicon", "--bogus"}).code == 2);
  CHECK(zg({}).code == 2);
  CHECK(zg({"--help"}).code == 0);
}

TEST_CASE("config files, precedence and the resolved config echo") {
  testing::TempDir tmp;
  testing::write_file(tmp / "run.conf", "freq_thr = 5\npmi_thr = 2\nintegration_mode = unweighted\n");
  const auto r = zg({"build-lexicon", "--config", (tmp / "run.conf").string(), "--corpus", corpus, "--out",
                     (tmp / "lex.txt").string(), "--pmi-thr", "3"});
  CHECK(r.code == 0);
  CHECK(contains(r.err, "pmi_thr = 3\n"));
  CHECK(contains(r.err, "freq_thr = 5\n"));
  CHECK(contains(r.err, "n_max = 8\n"));
  CHECK(testing::read_file(tmp / "lex.txt") ==
        testing::read_file(std::string(ZENGRAM_TEST_DATA) + "/tiny_corpus_lexicon.txt"));

  testing::write_file(tmp / "bad.conf", "frequency = 5\n");
  const auto bad = zg({"build-lexicon", "--config", (tmp / "bad.conf").string(), "--corpus", corpus, "--out", "x"});
  CHECK(bad.code == 2);
  CHECK(contains(bad.err, "unknown key 'frequency'"));

  // validation happens before any compute
  const auto invalid = zg({"pretrain", "--corpus", corpus, "--lexicon", (tmp / "lex.txt").string(), "--out",
                           (tmp / "never").string(), "--warmup-steps", "0", "--integration", "off"});
  CHECK(invalid.code == 2);
  CHECK_FALSE(fs::exists(tmp / "never"));
  const auto bad_mode = zg({"pretrain", "--corpus", corpus, "--lexicon", (tmp / "lex.txt").string(), "--out",
                            (tmp / "never").string(), "--integration", "sideways"});
  CHECK(bad_mode.code == 2);

  const auto off = zg({"pretrain", "--corpus", corpus, "--lexicon", (tmp / "lex.txt").string(), "--out",
                       (tmp / "off").string(), "--steps", "2", "--warmup-steps", "1", "--integration", "off"});
  CHECK(off.code == 0);
  CHECK(contains(off.err, "integration_mode = OFF\n"));
  CHECK(contains(testing::read_file(tmp / "off" / "run.conf"), "integration_mode = OFF\n"));
}

TEST_CASE("end-to-end: lexicon, pretraining, fine-tuning and evaluation") {
  const auto start = std::chrono::steady_clock::now();
  auto& w = workspace();
  REQUIRE(w.pretrain.code == 0);
  CHECK(contains(w.pretrain.out, "step\tlr\tmlm_loss\tnsp_acc\n"));
  CHECK(fs::exists(w.ckpt));
  const auto log = testing::read_file(w.dir / "pre" / "metrics.tsv");
  CHECK(std::count(log.begin(), log.end(), '\n') == 5);

  // binary task: does the sentence come from an even or odd line
  std::ifstream in(corpus);
  std::string line, train;
  std::size_t n = 0;
  while (std::getline(in, line) && n < 32)
    if (!line.empty()) train += std::to_string(n++ % 2) + "\t" + line + "\n";
  testing::write_file(w.dir / "train.tsv", train);
  const auto ft = zg({"finetune", "--ckpt", w.ckpt.string(), "--train", (w.dir / "train.tsv").string(), "--dev",
                      (w.dir / "train.tsv").string(), "--out", (w.dir / "ft.bin").string(), "--steps", "20",
                      "--warmup-steps", "2", "--eval-every", "10"});
  REQUIRE(ft.code == 0);
  CHECK(contains(ft.out, "step 20"));
  const auto ev = zg({"eval", "--ckpt", (w.dir / "ft.bin").string(), "--data", (w.dir / "train.tsv").string(), "--out",
                      (w.dir / "pred.tsv").string()});
  CHECK(ev.code == 0);
  CHECK(ev.out.rfind("accuracy ", 0) == 0);
  // scoring the written predictions reproduces the number
  const auto again = zg({"eval", "--pred", (w.dir / "pred.tsv").string(), "--data", (w.dir / "train.tsv").string()});
  CHECK(again.code == 0);
  CHECK(again.out == ev.out);
  CHECK(zg({"eval", "--ckpt", w.ckpt.string(), "--data", (w.dir / "train.tsv").string()}).code == 2);
  CHECK(zg({"eval", "--ckpt", (w.dir / "ft.bin").string(), "--task", "label", "--data",
            (w.dir / "train.tsv").string()})
            .code == 2);

  const auto seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  MESSAGE("end-to-end took " << seconds << " s");
  CHECK(seconds < 300.0);
}

TEST_CASE("eval on perfect predictions") {
  testing::TempDir tmp;
  testing::write_file(tmp / "gold.tsv", "1\tab\n0\tcd\n1\tef\n");
  const auto r = zg({"eval", "--pred", (tmp / "gold.tsv").string(), "--data", (tmp / "gold.tsv").string()});
  CHECK(r.code == 0);
  CHECK(contains(r.out, "accuracy 100.0"));
  testing::write_file(tmp / "tags.tsv", "a\tB-X\nb\tI-X\n\nc\tO\n");
  const auto t = zg({"eval", "--task", "label", "--pred", (tmp / "tags.tsv").string(), "--data",
                     (tmp / "tags.tsv").string()});
  CHECK(t.code == 0);
  CHECK(contains(t.out, "f1 100.0"));
  CHECK(zg({"eval", "--pred", (tmp / "missing.tsv").string(), "--data", (tmp / "gold.tsv").string()}).code == 2);
}

TEST_CASE("resuming with different settings fails") {
  auto& w = workspace();
  REQUIRE(w.pretrain.code == 0);
  testing::TempDir tmp;
  const std::vector<std::string> common{"pretrain", "--corpus", corpus, "--lexicon", w.lexicon.string(), "--out",
                                        (tmp / "r").string(), "--resume", w.ckpt.string(), "--steps", "60",
                                        "--warmup-steps", "5", "--log-every", "10"};
  auto args = common;
  args.insert(args.end(), {"--seed", "3"});
  CHECK(zg(args).code == 1);
  args = common;
  args.insert(args.end(), {"--integration", "off"});
  CHECK(zg(args).code == 2);
}

TEST_CASE("neighbors") {
  auto& w = workspace();
  REQUIRE(w.pretrain.code == 0);
  const auto lex = NgramLexicon::load(w.lexicon);
  const auto query = encode_utf8(lex.entry(0).ngram);
  const auto r = zg({"neighbors", "--ckpt", w.ckpt.string(), "--corpus", corpus, "--ngram", query, "--k", "5"});
  REQUIRE(r.code == 0);
  std::istringstream rows(r.out);
  std::string row;
  std::vector<double> sims;
  while (std::getline(rows, row)) {
    if (row.empty() || row[0] == '#') continue;
    const auto tab = row.find('\t');
    CHECK(row.substr(0, tab) != query);
    sims.push_back(std::stod(row.substr(tab + 1)));
  }
  CHECK(sims.size() == 5);
  CHECK(std::is_sorted(sims.rbegin(), sims.rend()));

  const auto all = zg({"neighbors", "--ckpt", w.ckpt.string(), "--corpus", corpus, "--ngram", query, "--k", "100000"});
  CHECK(all.code == 0);
  CHECK(contains(all.out, "# note: only"));

  const auto absent = zg({"neighbors", "--ckpt", w.ckpt.string(), "--corpus", corpus, "--ngram", "xyz"});
  CHECK(absent.code == 1);
  CHECK(contains(absent.err, "closest lexicon entries"));
}

TEST_CASE("attn-dump") {
  auto& w = workspace();
  REQUIRE(w.pretrain.code == 0);
  std::ifstream in(corpus);
  std::string sentence;
  std::getline(in, sentence);
  const std::vector<std::string> args{"attn-dump", "--ckpt", w.ckpt.string(), "--text", sentence, "--layer", "1",
                                      "--svg", (w.dir / "strip.svg").string()};
  const auto a = zg(args);
  const auto b = zg(args);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(contains(a.out, "ngram\tweight\n"));
  CHECK(fs::exists(w.dir / "strip.svg"));

  const auto empty = zg({"attn-dump", "--ckpt", w.ckpt.string(), "--text", "zzz"});
  CHECK(empty.code == 0);
  CHECK(contains(empty.out, "ngram\tweight\n# integration"));

  const auto range = zg({"attn-dump", "--ckpt", w.ckpt.string(), "--text", "zzz", "--layer", "2"});
  CHECK(range.code == 2);
  CHECK(contains(range.err, "out of range"));
}
