// Acceptance checks, one PASS/FAIL line per criterion. Exit status is
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "encoder_oracle.hpp"
#include "pipeline.hpp"
#include "test_util.hpp"
#include "zengram/analysis.hpp"
#include "zengram/checkpoint.hpp"
#include "zengram/finetune.hpp"
#include "zengram/grad_check.hpp"
#include "zengram/utf8.hpp"

using namespace zengram;
using num::Array;
using num::Var;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "failed: ";
      else detail << "; ";
      detail << what;
    }
    pass = pass && ok;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_abs_diff(const Array& a, const Array& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs_diff(const Array& a, const oracle::Mat& b) {
  if (a.rows() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (a.cols() != b[i].size()) return INFINITY;
    for (std::size_t j = 0; j < b[i].size(); ++j) m = std::max(m, std::abs(a.at(i, j) - b[i][j]));
  }
  return m;
}

// Every array nudged so zero biases, u, v and unit gains all take part.
void perturb(ParamStore& p, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (auto& x : p.at(i).data()) x += rng.normal(0.0, 0.1);
}

// Small planted pipeline shared by the model-level checks.
const pipeline::Data& small_data() {
  static const pipeline::Data d = pipeline::build(3, 300, 5);
  return d;
}

// An instance with overlapping matches and a few masked positions.
TrainingInstance rich_instance(const pipeline::Data& d) {
  for (const auto& inst : d.instances) {
    bool overlap = false;
    for (const auto& row : inst.association.positions) overlap = overlap || row.size() >= 2;
    if (overlap && inst.mask_records.size() >= 3 && inst.association.matches.size() >= 3) return inst.trimmed();
  }
  throw std::runtime_error("no instance with overlapping matches");
}

ForwardResult forward(num::Tape& tape, const EncoderConfig& c, const ParamStore& p, const TrainingInstance& inst,
                      bool trace = false) {
  ParamBinding bind(tape, p);
  ForwardOptions o;
  o.trace = trace;
  return Encoder(c).forward(bind, EncoderInput::from(inst), o);
}

// ---- 1 -------------------------------------------------------------------

Var project(Var y, std::uint64_t seed) {
  Rng rng(seed);
  Array w(y.shape());
  for (auto& v : w.data()) v = rng.normal();
  return num::sum(num::mul(y, y.tape->constant(std::move(w))));
}

double primitive_error(const num::LossBuilder& f, std::vector<Array> params) {
  return num::grad_check(f, params, 1e-5, 100000, 1).max_rel_error;
}

Verdict gradient_suite() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto& d = small_data();
  const auto c = pipeline::tiny(d, IntegrationMode::kWeighted);
  Rng init(31);
  ParamStore store = init_params(c, init);
  perturb(store, 32);
  const TrainingInstance inst = rich_instance(d);
  std::vector<Array> params;
  for (std::size_t i = 0; i < store.size(); ++i) params.push_back(store.at(i));
  const Encoder enc(c);
  const num::LossBuilder loss = [&](num::Tape& tape, std::span<const Var> leaves) {
    ParamBinding bind(tape, store, leaves);
    return pretrain_loss(enc.forward(bind, EncoderInput::from(inst), {}), inst).total;
  };
  const auto r = num::grad_check(loss, params, 1e-5, 400, 7);
  v.require(r.coords_checked >= 200, "too few coordinates");
  v.require(r.max_rel_error < 1e-5, "full loss error too large at " + store.name(r.worst_param));

  Rng rng(11);
  auto random = [&](num::Shape s) {
    Array a(std::move(s));
    for (auto& x : a.data()) x = rng.normal();
    return a;
  };
  const Array a = random({3, 4}), b = random({4, 5}), cc = random({3, 4}), row = random({4});
  using P = std::span<const Var>;
  const std::vector<std::pair<const char*, std::function<double()>>> prims = {
      {"matmul", [&] { return primitive_error([](num::Tape&, P p) { return project(num::matmul(p[0], p[1]), 1); }, {a, b}); }},
      {"matmul_nt", [&] { return primitive_error([](num::Tape&, P p) { return project(num::matmul_nt(p[0], p[1]), 2); }, {a, cc}); }},
      {"add", [&] { return primitive_error([](num::Tape&, P p) { return project(num::add(p[0], p[1]), 3); }, {a, cc}); }},
      {"add_row", [&] { return primitive_error([](num::Tape&, P p) { return project(num::add_row(p[0], p[1]), 4); }, {a, row}); }},
      {"mul", [&] { return primitive_error([](num::Tape&, P p) { return project(num::mul(p[0], p[1]), 5); }, {a, cc}); }},
      {"scale", [&] { return primitive_error([](num::Tape&, P p) { return project(num::scale(p[0], -2.5), 6); }, {a}); }},
      {"gelu", [&] { return primitive_error([](num::Tape&, P p) { return project(num::gelu(p[0]), 7); }, {a}); }},
      {"tanh", [&] { return primitive_error([](num::Tape&, P p) { return project(num::tanh(p[0]), 8); }, {a}); }},
      {"softmax", [&] { return primitive_error([](num::Tape&, P p) { return project(num::softmax(p[0]), 9); }, {a}); }},
      {"masked_softmax",
       [&] {
         return primitive_error(
             [](num::Tape&, P p) {
               static const std::vector<std::uint8_t> mask{1, 0, 1, 1};
               return project(num::masked_softmax(p[0], mask), 10);
             },
             {a});
       }},
      {"layernorm",
       [&] {
         return primitive_error([](num::Tape&, P p) { return project(num::layernorm(p[0], p[1], p[2]), 11); },
                                {a, random({4}), random({4})});
       }},
      {"gather_rows",
       [&] {
         return primitive_error(
             [](num::Tape&, P p) {
               static const std::vector<std::int32_t> ids{2, 0, 2, 3};
               return project(num::gather_rows(p[0], ids), 12);
             },
             {b});
       }},
      {"concat_cols",
       [&] {
         return primitive_error(
             [](num::Tape&, P p) {
               const Var parts[] = {p[0], p[1]};
               return project(num::concat_cols(parts), 13);
             },
             {a, cc});
       }},
      {"concat_rows",
       [&] {
         return primitive_error(
             [](num::Tape&, P p) {
               const Var parts[] = {p[0], p[1]};
               return project(num::concat_rows(parts), 14);
             },
             {a, cc});
       }},
      {"slice_cols", [&] { return primitive_error([](num::Tape&, P p) { return project(num::slice_cols(p[0], 1, 2), 15); }, {a}); }},
      {"slice_rows", [&] { return primitive_error([](num::Tape&, P p) { return project(num::slice_rows(p[0], 1, 2), 16); }, {a}); }},
      {"select_columns",
       [&] {
         return primitive_error(
             [](num::Tape&, P p) { return project(num::select_columns(p[0], 2, {0, 3, 1, 1, 2, 0}), 17); }, {a});
       }},
      {"dropout",
       [&] {
         return primitive_error(
             [](num::Tape&, P p) {
               Rng r(5);
               return project(num::dropout(p[0], 0.3, r), 18);
             },
             {a});
       }},
      {"transpose", [&] { return primitive_error([](num::Tape&, P p) { return project(num::transpose(p[0]), 19); }, {a}); }},
      {"cross_entropy",
       [&] {
         return primitive_error(
             [](num::Tape&, P p) {
               static const std::vector<std::int32_t> tg{1, 4, 0};
               static const std::vector<std::uint8_t> mk{1, 1, 0};
               return num::cross_entropy(num::matmul(p[0], p[1]), tg, mk);
             },
             {a, b});
       }},
  };
  double worst = 0.0;
  for (const auto& [name, run] : prims) {
    const double e = run();
    worst = std::max(worst, e);
    v.require(e < 1e-7, std::string("primitive ") + name);
  }
  const double secs = seconds_since(t0);
  v.require(secs < 120.0, "runtime over 2 minutes");
  v.detail << (v.pass ? "" : "; ") << "full loss max rel error " << r.max_rel_error << " over " << r.coords_checked
           << " coordinates, worst primitive " << worst << " over " << prims.size() << " primitives, " << secs << " s";
  return v;
}

// ---- 2 -------------------------------------------------------------------

Verdict model_reductions() {
  Verdict v;
  const auto& d = small_data();
  const TrainingInstance inst = rich_instance(d);

  // (a) weighted integration with every weight at 1 is the unweighted sum.
  const auto cw = pipeline::tiny(d, IntegrationMode::kWeighted);
  const auto cu = pipeline::tiny(d, IntegrationMode::kUnweighted);
  Rng rng(41);
  ParamStore p = init_params(cw, rng);
  perturb(p, 42);
  TrainingInstance ones = inst;
  for (auto& row : ones.association.positions)
    for (auto& a : row) a.weight = 1.0;
  num::Tape t1, t2;
  const double a_diff = max_abs_diff(forward(t1, cw, p, ones).sequence.value(), forward(t2, cu, p, inst).sequence.value());
  v.require(a_diff < 1e-12, "unit weights differ from the unweighted sum");

  // (b) u = v = W_r = 0 leaves content-only attention: same as absolute
  // positions with a zero position table.
  ParamStore rel = p;
  for (std::size_t l = 0; l < cw.char_layers; ++l)
    for (const char* w : {".attn.u", ".attn.v", ".attn.wr"}) rel.get("char." + std::to_string(l) + w).fill(0.0);
  auto ca = cw;
  ca.position = PositionMode::kAbsolute;
  Rng rng2(43);
  ParamStore abs = init_params(ca, rng2);
  for (std::size_t i = 0; i < abs.size(); ++i)
    abs.at(i) = abs.name(i) == "emb.position" ? Array(abs.at(i).shape(), 0.0) : rel.get(abs.name(i));
  num::Tape t3, t4;
  const auto fr = forward(t3, cw, rel, inst, true);
  const auto fa = forward(t4, ca, abs, inst, true);
  double b_diff = max_abs_diff(fr.sequence.value(), fa.sequence.value());
  for (std::size_t l = 0; l < cw.char_layers; ++l)
    for (std::size_t h = 0; h < cw.heads; ++h)
      b_diff = std::max(b_diff, max_abs_diff(fr.char_attention[l].scores[h].value(), fa.char_attention[l].scores[h].value()));
  v.require(b_diff < 1e-12, "zero relative terms differ from content-only attention");

  // (c) integration off with absolute positions is a plain post-norm BERT.
  auto cb = pipeline::tiny(d, IntegrationMode::kOff);
  cb.position = PositionMode::kAbsolute;
  Rng rng3(44);
  ParamStore pb = init_params(cb, rng3);
  perturb(pb, 45);
  const oracle::Model m{cb, pb};
  const std::size_t n = inst.input_ids.size();
  oracle::Mat x;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(cb.hidden);
    for (std::size_t e = 0; e < cb.hidden; ++e)
      row[e] = pb.get("emb.char").at(inst.input_ids[i], e) + pb.get("emb.segment").at(inst.segment_ids[i], e) +
               pb.get("emb.position").at(i, e);
    x.push_back(row);
  }
  x = m.norm(x, "emb.ln");
  for (std::size_t l = 0; l < cb.char_layers; ++l) {
    const auto pre = "char." + std::to_string(l);
    x = m.norm(oracle::add(x, m.attention(x, pre, false, inst.attention_mask, 0)), pre + ".ln1");
    x = m.ffn(x, pre);
  }
  num::Tape t5;
  const double c_diff = max_abs_diff(forward(t5, cb, pb, inst).sequence.value(), x);
  v.require(c_diff < 1e-12, "plain BERT forward differs");
  v.detail << (v.pass ? "" : "; ") << "max diffs " << a_diff << ", " << b_diff << ", " << c_diff;
  return v;
}

// ---- 3 -------------------------------------------------------------------

Verdict relative_invariance() {
  Verdict v;
  const auto& d = small_data();
  const TrainingInstance inst = rich_instance(d);
  auto c = pipeline::tiny(d, IntegrationMode::kWeighted);
  c.max_rel_dist = 12;  // small enough that clamping is exercised
  Rng rng(51);
  ParamStore p = init_params(c, rng);
  perturb(p, 52);
  const oracle::Model m{c, p};
  std::vector<std::int32_t> ids(inst.input_ids.begin(), inst.input_ids.end());
  num::Tape t;
  const auto r = forward(t, c, p, inst, true);
  double worst = 0.0;
  for (std::int64_t base : {0, 5, 1000}) {
    const auto o = m.forward(ids, inst.segment_ids, inst.attention_mask, inst.association, base);
    for (std::size_t l = 0; l < c.char_layers; ++l)
      for (std::size_t h = 0; h < c.heads; ++h) worst = std::max(worst, max_abs_diff(r.char_attention[l].scores[h].value(), o.scores[l][h]));
  }
  v.require(worst < 1e-12, "scores change under a shift of the index base");

  const std::size_t maxd = 64, dim = 32;
  const Array table = rel_pos_table(maxd, dim);
  bool symmetric = true;
  for (std::size_t delta = 0; delta <= maxd; ++delta)
    for (std::size_t k = 0; k < dim; k += 2) {
      symmetric = symmetric && table.at(maxd - delta, k) == -table.at(maxd + delta, k);
      symmetric = symmetric && table.at(maxd - delta, k + 1) == table.at(maxd + delta, k + 1);
    }
  v.require(symmetric, "R table is not sign-symmetric");
  v.detail << (v.pass ? "" : "; ") << "max score diff across bases 0, 5, 1000: " << worst << ", R symmetry exact";
  return v;
}

// ---- 4 -------------------------------------------------------------------

std::vector<NgramMatch> brute_matches(std::u32string_view text, const NgramLexicon& lex) {
  std::vector<NgramMatch> out;
  for (std::size_t i = 0; i < text.size(); ++i)
    for (std::size_t len = 2; len <= lex.n_max() && i + len <= text.size(); ++len)
      if (auto id = lex.find(text.substr(i, len)))
        out.push_back({*id, static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(len)});
  std::sort(out.begin(), out.end(), canonical_less);
  return out;
}

std::uint64_t occurrences(const std::vector<Sentence>& sents, const std::u32string& g) {
  std::uint64_t n = 0;
  for (const auto& s : sents)
    for (std::size_t i = 0; i + g.size() <= s.chars.size(); ++i)
      if (s.chars.compare(i, g.size(), g) == 0) ++n;
  return n;
}

Verdict matcher_and_lexicon() {
  Verdict v;
  Rng rng(99);
  std::size_t agree = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<LexiconEntry> entries;
    std::set<std::u32string> seen;
    const std::size_t alphabet = 2 + rng.uniform_int(4);
    const std::size_t patterns = 1 + rng.uniform_int(120);
    for (std::size_t k = 0; k < patterns; ++k) {
      auto g = testing::random_string(rng, 2 + rng.uniform_int(7), U'a', alphabet);
      if (seen.insert(g).second) entries.push_back({g, 1 + rng.uniform_int(50), 1.0});
    }
    const NgramLexicon lex(std::move(entries), 8, 0.0, 1);
    const auto text = testing::random_string(rng, rng.uniform_int(400), U'a', alphabet);
    agree += Matcher(lex).find_all(text) == brute_matches(text, lex);
  }
  v.require(agree == 1000, "matcher disagrees with the substring scan");

  std::size_t corpora_ok = 0, chars = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng r(200 + seed);
    std::vector<Sentence> corpus;
    std::size_t total = 0;
    while (total < 9000) {
      auto s = testing::random_string(r, 1 + r.uniform_int(14), U'a', 3 + seed % 3);
      total += s.size();
      corpus.push_back({std::move(s), 0});
    }
    chars = std::max(chars, total);
    const double thr = seed % 2 ? 0.5 : 0.0;
    const std::uint64_t min_freq = 2 + seed;
    const auto lex = extract_lexicon(count_ngrams(corpus, 8), thr, min_freq);
    std::map<std::u32string, std::uint64_t> all;
    for (const auto& s : corpus)
      for (std::size_t i = 0; i < s.chars.size(); ++i)
        for (std::size_t len = 2; len <= 8 && i + len <= s.chars.size(); ++len) ++all[s.chars.substr(i, len)];
    std::set<std::u32string> expected;
    for (const auto& [g, n] : all) {
      if (n < min_freq) continue;
      double pmi = INFINITY;
      for (std::size_t k = 1; k < g.size(); ++k)
        pmi = std::min(pmi, std::log(static_cast<double>(n) * static_cast<double>(total) /
                                     (static_cast<double>(occurrences(corpus, g.substr(0, k))) *
                                      static_cast<double>(occurrences(corpus, g.substr(k))))));
      if (pmi >= thr) expected.insert(g);
    }
    std::set<std::u32string> got;
    for (const auto& e : lex.entries()) got.insert(e.ngram);
    corpora_ok += got == expected;
  }
  v.require(corpora_ok == 5, "lexicon differs from the quadratic oracle");

  NgramCounts ind;
  ind.total_chars = 100;
  ind.counts = {{U"a", 20}, {U"b", 10}, {U"ab", 2}};
  const double pmi = pmi_score(U"ab", ind);
  v.require(std::abs(pmi) <= 1e-12, "independent pair has nonzero PMI");
  v.detail << (v.pass ? "" : "; ") << agree << "/1000 matcher cases, " << corpora_ok << "/5 corpora (up to " << chars
           << " chars), independence PMI " << pmi;
  return v;
}

// ---- 5 -------------------------------------------------------------------

Verdict masking_statistics() {
  Verdict v;
  const auto d = pipeline::build(7, 12500, 15);
  std::size_t budget_ok = 0, counts[3] = {0, 0, 0}, records = 0;
  for (const auto& inst : d.instances) {
    const std::size_t n = inst.length() - 3;
    const auto expected = static_cast<std::size_t>(std::floor(0.15 * static_cast<double>(n) + 0.5));
    budget_ok += inst.mask_records.size() == expected;
    for (const auto& r : inst.mask_records) ++counts[static_cast<int>(r.action)];
    records += inst.mask_records.size();
  }
  v.require(d.instances.size() >= 10000, "fewer than 10k instances");
  v.require(budget_ok == d.instances.size(), "masked count differs from round(0.15 n)");
  const double f[3] = {double(counts[0]) / records, double(counts[1]) / records, double(counts[2]) / records};
  v.require(std::abs(f[0] - 0.8) <= 0.01 && std::abs(f[1] - 0.1) <= 0.01 && std::abs(f[2] - 0.1) <= 0.01,
            "action fractions out of tolerance");

  // Whole-span acceptance on the same segmentation the builder uses.
  auto matcher = std::make_shared<const Matcher>(*d.lexicon);
  const auto seg = make_segmenter("maxmatch", matcher);
  Rng rng(71);
  std::size_t spans = 0, multi = 0, whole = 0;
  for (const auto& s : d.corpus.sentences) {
    const auto cands = merge_adjacent(seg->segment(s.chars), s.chars, *d.lexicon);
    std::vector<TokenSpan> accepted;
    const auto pos = select_mask_spans(cands, 0.15, rng, &accepted);
    const std::set<std::uint32_t> chosen(pos.begin(), pos.end());
    for (const auto& a : accepted) {
      bool full = std::find(cands.begin(), cands.end(), a) != cands.end();
      for (std::uint32_t p = a.start; p < a.start + a.len; ++p) full = full && chosen.count(p);
      whole += full;
      ++spans;
      multi += a.len > 1;
    }
  }
  v.require(whole == spans, "an accepted span is not fully masked");
  v.detail << (v.pass ? "" : "; ") << d.instances.size() << " instances, budget exact in " << budget_ok << ", actions "
           << f[0] << "/" << f[1] << "/" << f[2] << ", " << whole << "/" << spans << " accepted spans whole (" << multi
           << " multi-character)";
  return v;
}

// ---- 6 -------------------------------------------------------------------

Verdict weight_normalization() {
  Verdict v;
  const auto d = pipeline::build(1, 4000, 15);
  const auto scaled = std::make_shared<const NgramLexicon>(d.lexicon->with_scaled_frequencies(37));
  auto matcher = std::make_shared<const Matcher>(*scaled);
  const InstanceBuilder builder(d.vocab, scaled, make_segmenter("maxmatch", matcher), {64, 128, 0.15});
  Rng pair_rng(Rng::derive(1, 0x9a1));
  const auto pairs = make_sentence_pairs(d.corpus.sentences, pair_rng, 0.5);
  const auto again = build_pretrain_instances(d.corpus.sentences, pairs, builder, 1);

  double worst_sum = 0.0, worst_scale = 0.0;
  std::size_t covered = 0;
  bool same_shape = again.size() == d.instances.size();
  for (std::size_t i = 0; same_shape && i < again.size(); ++i) {
    const auto& a = d.instances[i].association;
    const auto& b = again[i].association;
    same_shape = a.matches == b.matches && a.positions.size() == b.positions.size();
    for (std::size_t p = 0; same_shape && p < a.positions.size(); ++p) {
      if (a.positions[p].empty()) continue;
      ++covered;
      same_shape = a.positions[p].size() == b.positions[p].size();
      double sum = 0.0;
      for (std::size_t k = 0; same_shape && k < a.positions[p].size(); ++k) {
        sum += a.positions[p][k].weight;
        worst_scale = std::max(worst_scale, std::abs(a.positions[p][k].weight - b.positions[p][k].weight));
      }
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    }
  }
  v.require(same_shape, "scaling frequencies changed the matches");
  v.require(covered > 0, "no covered positions");
  v.require(worst_sum <= 1e-12, "weights do not sum to 1");
  v.require(worst_scale <= 1e-12, "weights change under frequency scaling");
  v.detail << (v.pass ? "" : "; ") << covered << " covered positions, max |sum - 1| " << worst_sum
           << ", max change under x37 frequencies " << worst_scale;
  return v;
}

// ---- 7, 8, 10 share one planted corpus -----------------------------------

struct Planted {
  pipeline::Data data;
  Checkpoint weighted, off;
  double entropy = 0.0;
  double weighted_loss = 0.0, off_loss = 0.0, initial_loss = 0.0;
  double seconds = 0.0;
};

const Planted& planted() {
  static const Planted p = [] {
    Planted p;
    p.data = pipeline::build(1, 4000, 15);
    std::map<char32_t, double> freq;
    double total = 0;
    for (const auto& s : p.data.corpus.sentences)
      for (char32_t ch : s.chars) {
        ++freq[ch];
        ++total;
      }
    for (const auto& [ch, n] : freq) p.entropy -= n / total * std::log(n / total);

    PretrainOptions o;
    o.schedule = {1e-3, 100, 2000};
    o.batch_size = 16;
    o.seed = 0;
    o.log_every = 500;
    const auto t0 = std::chrono::steady_clock::now();
    for (auto mode : {IntegrationMode::kWeighted, IntegrationMode::kOff}) {
      auto c = pipeline::tiny(p.data, mode, 0.1);
      const auto start = new_pretrain_checkpoint(c, *p.data.vocab, *p.data.lexicon, 5);
      if (mode == IntegrationMode::kWeighted) p.initial_loss = evaluate_pretrain(start, p.data.instances).mlm_loss;
      auto ck = pretrain(p.data.instances, start, o).checkpoint;
      (mode == IntegrationMode::kWeighted ? p.weighted : p.off) = std::move(ck);
    }
    p.seconds = seconds_since(t0);
    p.weighted_loss = evaluate_pretrain(p.weighted, p.data.instances).mlm_loss;
    p.off_loss = evaluate_pretrain(p.off, p.data.instances).mlm_loss;
    return p;
  }();
  return p;
}

Verdict training_behavior() {
  Verdict v;
  const auto& p = planted();
  v.require(p.data.corpus.num_chars <= 1000000, "corpus over 1M characters");
  v.require(p.weighted_loss < p.entropy, "MLM loss not below the unigram entropy");
  v.require(p.weighted_loss < p.off_loss, "WEIGHTED not below OFF");
  v.require(p.seconds < 1800.0, "runtime over 30 minutes");
  v.detail << (v.pass ? "" : "; ") << p.data.corpus.num_chars << " chars, unigram entropy " << p.entropy
           << " nats, MLM loss " << p.initial_loss << " -> WEIGHTED " << p.weighted_loss << ", OFF " << p.off_loss
           << " after 2000 steps, " << p.seconds << " s";
  return v;
}

Verdict finetune_overfit() {
  Verdict v;
  const auto& p = planted();
  TaskData td;
  td.kind = TaskKind::kClassify;
  Rng r(9);
  for (int i = 0; i < 32; ++i) {
    const auto& s = p.data.corpus.sentences[r.uniform_int(p.data.corpus.sentences.size())];
    td.classify.push_back({std::to_string(i % 2), s.chars, std::nullopt, std::nullopt});
  }
  FinetuneOptions o;
  o.schedule = {1e-3, 10, 200};
  o.eval_every = 10;
  o.stop_when_perfect = true;
  const auto res = finetune(p.weighted, td, nullptr, collect_labels(td), o);
  const auto last = res.history.empty() ? 0 : res.history.back().step;
  const double acc = score(predict(res.model, td), td)[0].second;
  v.require(acc == 100.0, "train accuracy below 100");
  v.require(last <= 200, "more than 200 steps");
  v.detail << (v.pass ? "" : "; ") << "train accuracy " << acc << " at step " << last;
  return v;
}

Verdict determinism() {
  Verdict v;
  const auto& d = small_data();
  testing::TempDir tmp;
  const auto start = new_pretrain_checkpoint(pipeline::tiny(d, IntegrationMode::kWeighted, 0.1), *d.vocab, *d.lexicon, 5);
  auto run = [&](std::uint64_t stop, const fs::path& dir) {
    PretrainOptions o;
    o.schedule = {1e-3, 5, 40};
    o.batch_size = 4;
    o.seed = 11;
    o.stop_step = stop;
    o.log_every = 5;
    o.checkpoint_every = 10;
    o.out_dir = dir;
    return o;
  };
  pretrain(d.instances, start, run(0, tmp / "a"));
  pretrain(d.instances, start, run(0, tmp / "b"));
  pretrain(d.instances, start, run(20, tmp / "c"));
  pretrain(d.instances, load_checkpoint(checkpoint_path(tmp / "c", 20)), run(0, tmp / "c"));
  std::size_t identical = 0;
  for (std::uint64_t step : {10, 20, 30, 40}) {
    const auto a = testing::read_file(checkpoint_path(tmp / "a", step));
    identical += !a.empty() && a == testing::read_file(checkpoint_path(tmp / "b", step)) &&
                 a == testing::read_file(checkpoint_path(tmp / "c", step));
  }
  const auto log = testing::read_file(tmp / "a" / "metrics.tsv");
  const bool logs = !log.empty() && log == testing::read_file(tmp / "b" / "metrics.tsv") &&
                    log == testing::read_file(tmp / "c" / "metrics.tsv");
  v.require(identical == 4, "checkpoints differ");
  v.require(logs, "metric logs differ");
  v.detail << (v.pass ? "" : "; ") << identical
           << "/4 checkpoints byte-identical across two runs and a run resumed at step 20, metric logs "
           << (logs ? "identical" : "differ");
  return v;
}

Verdict neighbors_analysis() {
  Verdict v;
  const auto& p = planted();
  testing::TempDir tmp;
  std::string corpus_text;
  std::int64_t doc = p.data.corpus.sentences.front().doc_id;
  for (const auto& s : p.data.corpus.sentences) {
    if (s.doc_id != doc) corpus_text += "\n";
    doc = s.doc_id;
    corpus_text += encode_utf8(s.chars) + "\n";
  }
  testing::write_file(tmp / "corpus.txt", corpus_text);
  save_checkpoint(tmp / "model.bin", p.weighted);

  auto family_of = [&](const std::u32string& g) {
    for (const auto& w : p.data.corpus.family_a)
      if (w == g) return 0;
    for (const auto& w : p.data.corpus.family_b)
      if (w == g) return 1;
    return -1;
  };
  std::size_t queries = 0, ranked = 0, pairs = 0, ordered = 0;
  for (int f = 0; f < 2; ++f)
    for (const auto& q : f ? p.data.corpus.family_b : p.data.corpus.family_a) {
      const std::string args[] = {"zengram", "neighbors", "--ckpt", (tmp / "model.bin").string(), "--corpus",
                                  (tmp / "corpus.txt").string(), "--ngram", encode_utf8(q), "--k", "100000"};
      std::vector<const char*> argv;
      for (const auto& a : args) argv.push_back(a.c_str());
      std::ostringstream out, err;
      const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
      ++queries;
      if (code != 0) {
        v.require(false, "neighbors exited with " + std::to_string(code) + ": " + err.str());
        continue;
      }
      std::vector<int> fams;
      std::istringstream rows(out.str());
      std::string row;
      while (std::getline(rows, row)) {
        if (row.empty() || row[0] == '#') continue;
        const int ff = family_of(decode_utf8(row.substr(0, row.find('\t'))));
        if (ff >= 0) fams.push_back(ff == f ? 1 : 0);
      }
      // within-family above cross-family: every same-family member outranks every other-family member
      std::size_t same_seen = 0, good_pairs = 0, total_pairs = 0;
      const auto same_total = static_cast<std::size_t>(std::count(fams.begin(), fams.end(), 1));
      for (int is_same : fams) {
        if (is_same) {
          ++same_seen;
        } else {
          good_pairs += same_seen;
          total_pairs += same_total;
        }
      }
      ranked += same_total > 0 && good_pairs == total_pairs;
      ordered += good_pairs;
      pairs += total_pairs;
    }
  const double rate = queries ? static_cast<double>(ranked) / static_cast<double>(queries) : 0.0;
  v.require(rate >= 0.9, "within-family ranked above cross-family for under 90% of queries");
  v.detail << (v.pass ? "" : "; ") << ranked << "/" << queries << " queries with every same-family member first ("
           << 100.0 * rate << "%), " << ordered << "/" << pairs << " same/cross pairs ordered";
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Verdict (*)()>> criteria = {
      {"gradient suite", gradient_suite},
      {"model reductions", model_reductions},
      {"relative-position invariance", relative_invariance},
      {"matcher and lexicon oracles", matcher_and_lexicon},
      {"masking statistics", masking_statistics},
      {"weight normalization", weight_normalization},
      {"training behavior", training_behavior},
      {"fine-tune overfit", finetune_overfit},
      {"determinism", determinism},
      {"neighbors analysis", neighbors_analysis},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "exception: " << e.what();
    }
    failed += !v.pass;
    std::printf("criterion %zu %s  %s: %s (%.1f s)\n", i + 1, v.pass ? "PASS" : "FAIL", criteria[i].first,
                v.detail.str().c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
