#include "zengram/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "zengram/utf8.hpp"

namespace zengram {

long NgramVectors::index_of(std::u32string_view ngram) const {
  for (std::size_t i = 0; i < ngrams.size(); ++i)
    if (ngrams[i] == ngram) return static_cast<long>(i);
  return -1;
}

namespace {

InstanceBuilder builder_for(const Checkpoint& model) {
  InstanceOptions o;
  o.max_len = model.config.max_len;
  return InstanceBuilder(std::make_shared<Vocab>(model.vocab()), std::make_shared<NgramLexicon>(model.lexicon()),
                         nullptr, o);
}

}  // namespace

NgramVectors ngram_context_vectors(const Checkpoint& model, std::span<const Sentence> sentences, std::size_t min_occ) {
  const auto builder = builder_for(model);
  const auto& lex = builder.lexicon();
  const Encoder enc(model.config);
  const std::size_t d = model.config.hidden;
  std::vector<std::vector<double>> sums(lex.size());
  std::vector<std::size_t> counts(lex.size(), 0);
  for (const auto& s : sentences) {
    const auto inst = builder.encode(s.chars, std::nullopt);
    const auto& matches = inst.association.matches;
    if (matches.empty()) continue;
    std::vector<NgramId> ids;
    for (const auto& m : matches) ids.push_back(m.ngram_id);
    num::Tape tape;
    ParamBinding bind(tape, model.params);
    const auto layers = enc.ngram_encoder_forward(bind, ids, {});
    const num::Array& first = layers.front().value();
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto& acc = sums[static_cast<std::size_t>(ids[k])];
      if (acc.empty()) acc.assign(d, 0.0);
      for (std::size_t c = 0; c < d; ++c) acc[c] += first.at(k, c);
      ++counts[static_cast<std::size_t>(ids[k])];
    }
  }
  NgramVectors out;
  for (std::size_t id = 0; id < lex.size(); ++id) {
    if (counts[id] < std::max<std::size_t>(min_occ, 1)) continue;
    auto v = sums[id];
    for (auto& x : v) x /= static_cast<double>(counts[id]);
    out.ngrams.push_back(lex.entry(static_cast<NgramId>(id)).ngram);
    out.vectors.push_back(std::move(v));
    out.occurrences.push_back(counts[id]);
  }
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::size_t edit_distance(std::u32string_view a, std::u32string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<std::u32string> closest_entries(const NgramLexicon& lexicon, std::u32string_view query, std::size_t count) {
  std::vector<std::pair<std::size_t, std::size_t>> scored;
  for (std::size_t id = 0; id < lexicon.size(); ++id)
    scored.emplace_back(edit_distance(query, lexicon.entry(static_cast<NgramId>(id)).ngram), id);
  std::stable_sort(scored.begin(), scored.end());
  std::vector<std::u32string> out;
  for (std::size_t i = 0; i < scored.size() && i < count; ++i)
    out.push_back(lexicon.entry(static_cast<NgramId>(scored[i].second)).ngram);
  return out;
}

std::vector<Neighbor> nearest_neighbors(const NgramVectors& table, std::u32string_view query, std::size_t k,
                                        const NgramLexicon& lexicon) {
  const long q = table.index_of(query);
  if (q < 0) {
    std::string msg = "n-gram '" + encode_utf8(std::u32string(query)) + "' ";
    msg += lexicon.find(query) ? "does not occur often enough in the corpus" : "is not in the lexicon";
    const auto near = closest_entries(lexicon, query);
    if (!near.empty()) {
      msg += "; closest lexicon entries:";
      for (const auto& n : near) msg += " " + encode_utf8(n);
    }
    throw AnalysisError(msg);
  }
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < table.ngrams.size(); ++i) {
    if (static_cast<long>(i) == q) continue;
    all.push_back({table.ngrams[i], cosine_similarity(table.vectors[static_cast<std::size_t>(q)], table.vectors[i])});
  }
  std::stable_sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) { return a.similarity > b.similarity; });
  if (all.size() > k) all.resize(k);
  return all;
}

AttentionDump attention_dump(const Checkpoint& model, std::u32string_view text, std::size_t layer) {
  if (layer >= model.config.ngram_layers)
    throw AnalysisError("layer " + std::to_string(layer) + " is out of range; the n-gram encoder has " +
                        std::to_string(model.config.ngram_layers) + " layers");
  const auto builder = builder_for(model);
  const auto inst = builder.encode(text, std::nullopt);
  const auto& lex = builder.lexicon();
  AttentionDump dump;
  dump.layer = layer;
  const std::size_t n = inst.length() - 2;
  dump.text = std::u32string(text.substr(0, n));
  dump.char_weights.resize(n);
  const auto& matches = inst.association.matches;
  if (matches.empty()) return dump;

  std::vector<NgramId> ids;
  for (const auto& m : matches) ids.push_back(m.ngram_id);
  const Encoder enc(model.config);
  num::Tape tape;
  ParamBinding bind(tape, model.params);
  std::vector<AttentionTrace> trace;
  enc.ngram_encoder_forward(bind, ids, {}, &trace);
  const auto& probs = trace[layer].probs;
  const std::size_t m = ids.size();
  for (std::size_t k = 0; k < m; ++k) {
    double mass = 0.0;
    for (const auto& p : probs)
      for (std::size_t i = 0; i < m; ++i) mass += p.value().at(i, k);
    dump.ngram_weights.emplace_back(lex.entry(ids[k]).ngram, mass / static_cast<double>(m * probs.size()));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& a : inst.association.positions[i + 1])
      dump.char_weights[i].emplace_back(lex.entry(matches[a.match].ngram_id).ngram, a.weight);
  return dump;
}

std::string format_attention_dump(const AttentionDump& dump) {
  std::string out;
  char buf[64];
  out += "# mean received attention mass (averaged over heads and querying n-grams), n-gram layer " +
         std::to_string(dump.layer) + "\n";
  out += "ngram\tweight\n";
  for (const auto& [g, w] : dump.ngram_weights) {
    std::snprintf(buf, sizeof buf, "%.6f", w);
    out += encode_utf8(g) + "\t" + buf + "\n";
  }
  out += "# integration weights per character\n";
  out += "position\tchar\tngram\tweight\n";
  for (std::size_t i = 0; i < dump.char_weights.size(); ++i)
    for (const auto& [g, w] : dump.char_weights[i]) {
      std::snprintf(buf, sizeof buf, "%.6f", w);
      out += std::to_string(i) + "\t" + encode_utf8(dump.text[i]) + "\t" + encode_utf8(g) + "\t" + buf + "\n";
    }
  return out;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string heat_strip_svg(const AttentionDump& dump) {
  const std::size_t n = dump.text.size();
  const int cell = 28;
  std::vector<double> heat(n, 0.0);
  double top = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& [g, p] : dump.char_weights[i])
      for (const auto& [h, w] : dump.ngram_weights)
        if (h == g) {
          heat[i] += p * w;
          break;
        }
    top = std::max(top, heat[i]);
  }
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(cell * std::max<std::size_t>(n, 1)) +
                    "\" height=\"" + std::to_string(cell) + "\">\n";
  char buf[256];
  for (std::size_t i = 0; i < n; ++i) {
    const double t = top > 0.0 ? heat[i] / top : 0.0;
    const int shade = static_cast<int>(std::lround(255.0 * (1.0 - t)));
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%zu\" y=\"0\" width=\"%d\" height=\"%d\" fill=\"rgb(255,%d,%d)\"/>"
                  "<text x=\"%zu\" y=\"19\" font-size=\"16\" text-anchor=\"middle\">",
                  i * cell, cell, cell, shade, shade, i * cell + cell / 2);
    svg += buf + xml_escape(encode_utf8(dump.text[i])) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace zengram
