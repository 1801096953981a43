#include "zengram/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

namespace zengram {

double accuracy(std::span<const std::string> predicted, std::span<const std::string> gold) {
  if (predicted.size() != gold.size()) throw std::invalid_argument("prediction count differs from gold count");
  if (gold.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += predicted[i] == gold[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(gold.size());
}

std::set<LabeledSpan> bio_spans(std::span<const std::string> tags, std::size_t* repairs) {
  std::set<LabeledSpan> spans;
  bool open = false;
  std::string type;
  std::size_t start = 0;
  auto close = [&](std::size_t end) {
    if (open) spans.emplace(type, start, end);
    open = false;
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& t = tags[i];
    if (t == "O" || t.empty()) {
      close(i);
      continue;
    }
    const char prefix = t[0];
    if ((prefix != 'B' && prefix != 'I') || (t.size() > 1 && t[1] != '-'))
      throw std::invalid_argument("tag '" + t + "' is not a BIO tag");
    const std::string ty = t.size() > 2 ? t.substr(2) : std::string();
    if (prefix == 'I' && open && ty == type) continue;
    if (prefix == 'I' && repairs) ++*repairs;
    close(i);
    open = true;
    type = ty;
    start = i;
  }
  close(tags.size());
  return spans;
}

SpanScores span_f1(std::span<const std::vector<std::string>> predicted,
                   std::span<const std::vector<std::string>> gold) {
  if (predicted.size() != gold.size()) throw std::invalid_argument("prediction count differs from gold count");
  SpanScores s;
  std::size_t tp = 0, np = 0, ng = 0;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    const auto p = bio_spans(predicted[k], &s.repairs);
    const auto g = bio_spans(gold[k], &s.repairs);
    np += p.size();
    ng += g.size();
    for (const auto& span : p) tp += g.count(span);
  }
  s.precision = np ? 100.0 * static_cast<double>(tp) / static_cast<double>(np) : 0.0;
  s.recall = ng ? 100.0 * static_cast<double>(tp) / static_cast<double>(ng) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

double token_accuracy(std::span<const std::vector<std::string>> predicted,
                      std::span<const std::vector<std::string>> gold) {
  if (predicted.size() != gold.size()) throw std::invalid_argument("prediction count differs from gold count");
  std::size_t hit = 0, total = 0;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    if (predicted[k].size() != gold[k].size())
      throw std::invalid_argument("sentence " + std::to_string(k) + ": tag count differs from gold");
    for (std::size_t i = 0; i < gold[k].size(); ++i) hit += predicted[k][i] == gold[k][i];
    total += gold[k].size();
  }
  return total ? 100.0 * static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

namespace {

bool is_punct_or_space(char32_t c) {
  if (c < 0x80) return c <= 0x20 || (c < 0x7F && !std::isalnum(static_cast<int>(c)));
  // CJK symbols and punctuation, full-width forms punctuation, general punctuation.
  if (c >= 0x3000 && c <= 0x303F) return true;
  if (c >= 0x2000 && c <= 0x206F) return true;
  if (c >= 0xFF01 && c <= 0xFF0F) return true;
  if (c >= 0xFF1A && c <= 0xFF20) return true;
  if (c >= 0xFF3B && c <= 0xFF40) return true;
  if (c >= 0xFF5B && c <= 0xFF65) return true;
  return c == 0x00A0 || c == 0x00B7;
}

}  // namespace

std::u32string normalize_answer(std::u32string_view text) {
  std::u32string out;
  for (char32_t c : text) {
    if (is_punct_or_space(c)) continue;
    if (c >= U'A' && c <= U'Z') c = c - U'A' + U'a';
    out.push_back(c);
  }
  return out;
}

double exact_match(std::u32string_view predicted, std::u32string_view gold) {
  return normalize_answer(predicted) == normalize_answer(gold) ? 1.0 : 0.0;
}

double overlap_f1(std::u32string_view predicted, std::u32string_view gold) {
  const auto p = normalize_answer(predicted), g = normalize_answer(gold);
  if (p.empty() || g.empty()) return p == g ? 1.0 : 0.0;
  std::map<char32_t, std::size_t> counts;
  for (char32_t c : g) ++counts[c];
  std::size_t common = 0;
  for (char32_t c : p) {
    auto it = counts.find(c);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return 2 * precision * recall / (precision + recall);
}

double mean_reciprocal_rank(std::span<const std::vector<RankedCandidate>> groups) {
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& g : groups) {
    std::vector<std::size_t> order(g.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return g[a].score > g[b].score; });
    for (std::size_t r = 0; r < order.size(); ++r)
      if (g[order[r]].relevant) {
        total += 1.0 / static_cast<double>(r + 1);
        ++counted;
        break;
      }
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

}  // namespace zengram
