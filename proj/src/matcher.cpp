#include "zengram/matcher.hpp"

#include <algorithm>
#include <deque>

namespace zengram {

bool canonical_less(const NgramMatch& a, const NgramMatch& b) {
  if (a.start != b.start) return a.start < b.start;
  return a.len > b.len;
}

Matcher::Matcher(const NgramLexicon& lexicon) : n_max_(lexicon.n_max()) {
  if (lexicon.empty()) throw LexiconError("cannot build a matcher from an empty lexicon");
  nodes_.emplace_back();
  for (std::size_t id = 0; id < lexicon.size(); ++id) {
    const auto& e = lexicon.entry(static_cast<NgramId>(id));
    std::uint32_t node = 0;
    for (char32_t c : e.ngram) {
      auto [it, inserted] = edges_.try_emplace(edge_key(node, c), static_cast<std::uint32_t>(nodes_.size()));
      if (inserted) nodes_.emplace_back();
      node = it->second;
    }
    nodes_[node].pattern = static_cast<std::int32_t>(id);
    lengths_.push_back(static_cast<std::uint32_t>(e.ngram.size()));
    freqs_.push_back(e.freq);
  }

  // Children lists for the breadth-first failure-link construction.
  std::vector<std::vector<std::pair<char32_t, std::uint32_t>>> children(nodes_.size());
  for (const auto& [key, target] : edges_)
    children[key >> 21].emplace_back(static_cast<char32_t>(key & 0x1FFFFF), target);
  for (auto& c : children) std::sort(c.begin(), c.end());

  std::deque<std::uint32_t> queue;
  for (const auto& [c, target] : children[0]) {
    nodes_[target].fail = 0;
    queue.push_back(target);
  }
  while (!queue.empty()) {
    const std::uint32_t u = queue.front();
    queue.pop_front();
    for (const auto& [c, v] : children[u]) {
      std::uint32_t f = nodes_[u].fail;
      std::int64_t next;
      while ((next = child(f, c)) < 0 && f != 0) f = nodes_[f].fail;
      next = child(f, c);
      nodes_[v].fail = (next >= 0 && static_cast<std::uint32_t>(next) != v) ? static_cast<std::uint32_t>(next) : 0;
      const auto& fn = nodes_[nodes_[v].fail];
      nodes_[v].dict_link = fn.pattern >= 0 ? static_cast<std::int32_t>(nodes_[v].fail) : fn.dict_link;
      queue.push_back(v);
    }
  }
}

std::int64_t Matcher::child(std::uint32_t node, char32_t c) const {
  auto it = edges_.find(edge_key(node, c));
  return it == edges_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

std::vector<NgramMatch> Matcher::find_all(std::u32string_view text) const {
  std::vector<NgramMatch> out;
  std::uint32_t state = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char32_t c = text[i];
    std::int64_t next;
    while ((next = child(state, c)) < 0 && state != 0) state = nodes_[state].fail;
    state = next >= 0 ? static_cast<std::uint32_t>(next) : 0;
    std::int64_t node = nodes_[state].pattern >= 0 ? static_cast<std::int64_t>(state) : nodes_[state].dict_link;
    while (node >= 0) {
      const auto id = nodes_[node].pattern;
      const auto len = lengths_[id];
      out.push_back({id, static_cast<std::uint32_t>(i + 1 - len), len});
      node = nodes_[node].dict_link;
    }
  }
  std::sort(out.begin(), out.end(), canonical_less);
  return out;
}

std::optional<NgramMatch> Matcher::longest_at(std::u32string_view text, std::size_t pos) const {
  std::optional<NgramMatch> best;
  std::uint32_t node = 0;
  for (std::size_t i = pos; i < text.size() && i - pos < n_max_; ++i) {
    const auto next = child(node, text[i]);
    if (next < 0) break;
    node = static_cast<std::uint32_t>(next);
    if (nodes_[node].pattern >= 0)
      best = NgramMatch{nodes_[node].pattern, static_cast<std::uint32_t>(pos),
                        static_cast<std::uint32_t>(i + 1 - pos)};
  }
  return best;
}

std::vector<NgramMatch> match_ngrams(std::u32string_view chars, const Matcher& matcher,
                                     std::size_t max_matches) {
  return select_top_matches(matcher.find_all(chars), matcher, max_matches);
}

std::vector<NgramMatch> select_top_matches(std::vector<NgramMatch> all, const Matcher& matcher,
                                           std::size_t max_matches) {
  if (all.size() <= max_matches) {
    std::sort(all.begin(), all.end(), canonical_less);
    return all;
  }
  std::stable_sort(all.begin(), all.end(), [&](const NgramMatch& a, const NgramMatch& b) {
    const auto fa = matcher.frequency(a.ngram_id), fb = matcher.frequency(b.ngram_id);
    if (fa != fb) return fa > fb;
    return canonical_less(a, b);
  });
  all.resize(max_matches);
  std::sort(all.begin(), all.end(), canonical_less);
  return all;
}

namespace {

template <typename FreqOf>
AssociationMap build_association(std::vector<NgramMatch> matches, std::size_t seq_len, FreqOf freq_of) {
  AssociationMap map;
  map.positions.resize(seq_len);
  std::vector<double> totals(seq_len, 0.0);
  for (std::size_t k = 0; k < matches.size(); ++k) {
    const auto& m = matches[k];
    if (m.start + m.len > seq_len) throw LexiconError("match exceeds sequence length");
    const auto c = static_cast<double>(freq_of(m.ngram_id));
    for (std::uint32_t i = m.start; i < m.start + m.len; ++i) {
      map.positions[i].push_back({static_cast<std::uint32_t>(k), c});
      totals[i] += c;
    }
  }
  for (std::size_t i = 0; i < seq_len; ++i)
    for (auto& a : map.positions[i]) a.weight /= totals[i];
  map.matches = std::move(matches);
  return map;
}

}  // namespace

AssociationMap association_map(std::vector<NgramMatch> matches, const NgramLexicon& lexicon,
                               std::size_t seq_len) {
  return build_association(std::move(matches), seq_len,
                           [&](NgramId id) { return lexicon.entry(id).freq; });
}

AssociationMap association_map(std::vector<NgramMatch> matches, const Matcher& matcher,
                               std::size_t seq_len) {
  return build_association(std::move(matches), seq_len,
                           [&](NgramId id) { return matcher.frequency(id); });
}

std::vector<TokenSpan> MaxMatchSegmenter::segment(std::u32string_view chars) const {
  std::vector<TokenSpan> spans;
  std::size_t cursor = 0;
  while (cursor < chars.size()) {
    std::uint32_t len = 1;
    if (matcher_) {
      if (auto m = matcher_->longest_at(chars, cursor)) len = m->len;
    }
    spans.push_back({static_cast<std::uint32_t>(cursor), len});
    cursor += len;
  }
  return spans;
}

std::vector<TokenSpan> CharSegmenter::segment(std::u32string_view chars) const {
  std::vector<TokenSpan> spans;
  spans.reserve(chars.size());
  for (std::size_t i = 0; i < chars.size(); ++i) spans.push_back({static_cast<std::uint32_t>(i), 1});
  return spans;
}

std::vector<TokenSpan> segment(std::u32string_view chars, const NgramLexicon& lexicon) {
  std::shared_ptr<const Matcher> matcher;
  if (!lexicon.empty()) matcher = std::make_shared<Matcher>(lexicon);
  return MaxMatchSegmenter(matcher).segment(chars);
}

std::unique_ptr<Segmenter> make_segmenter(const std::string& name,
                                          std::shared_ptr<const Matcher> matcher) {
  if (name == "maxmatch") return std::make_unique<MaxMatchSegmenter>(std::move(matcher));
  if (name == "char") return std::make_unique<CharSegmenter>();
  throw std::invalid_argument("unknown segmenter '" + name + "' (expected maxmatch or char)");
}

}  // namespace zengram
