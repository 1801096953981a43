#include "zengram/masking.hpp"

#include <algorithm>
#include <cmath>

#include "zengram/binary_io.hpp"

namespace zengram {

std::size_t TrainingInstance::length() const {
  return static_cast<std::size_t>(std::count(attention_mask.begin(), attention_mask.end(), 1));
}

TrainingInstance TrainingInstance::trimmed() const {
  TrainingInstance out = *this;
  const std::size_t n = length();
  out.input_ids.resize(n);
  out.attention_mask.resize(n);
  out.segment_ids.resize(n);
  out.association.positions.resize(n);
  return out;
}

std::vector<TokenSpan> merge_adjacent(std::span<const TokenSpan> spans, std::u32string_view chars,
                                      const NgramLexicon& lexicon) {
  std::vector<TokenSpan> out;
  std::size_t i = 0;
  while (i < spans.size()) {
    TokenSpan run = spans[i++];
    while (i < spans.size()) {
      const auto& next = spans[i];
      const std::size_t len = run.len + next.len;
      if (next.start != run.start + run.len || len > lexicon.n_max()) break;
      if (!lexicon.find(chars.substr(run.start, len))) break;
      run.len = static_cast<std::uint32_t>(len);
      ++i;
    }
    out.push_back(run);
  }
  return out;
}

std::size_t mask_budget(std::size_t num_positions, double ratio) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(num_positions) + 0.5 + 1e-9));
}

std::vector<std::uint32_t> select_mask_spans(std::span<const TokenSpan> candidates, double budget_ratio,
                                             Rng& rng, std::vector<TokenSpan>* accepted) {
  if (accepted) accepted->clear();
  std::size_t total = 0;
  std::uint32_t extent = 0;
  for (const auto& c : candidates) {
    total += c.len;
    extent = std::max(extent, c.start + c.len);
  }
  const std::size_t budget = mask_budget(total, budget_ratio);
  if (budget == 0) return {};

  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(std::span(order));

  std::vector<std::uint8_t> masked(extent, 0);
  std::size_t count = 0;
  for (std::size_t idx : order) {
    const auto& c = candidates[idx];
    if (count + c.len > budget) continue;
    for (std::uint32_t p = c.start; p < c.start + c.len; ++p) masked[p] = 1;
    if (accepted) accepted->push_back(c);
    count += c.len;
    if (count == budget) break;
  }

  if (count < budget) {
    std::vector<std::uint32_t> free;
    for (const auto& c : candidates)
      for (std::uint32_t p = c.start; p < c.start + c.len; ++p)
        if (!masked[p]) free.push_back(p);
    std::sort(free.begin(), free.end());
    // Partial Fisher-Yates: the first (budget - count) slots.
    const std::size_t need = budget - count;
    for (std::size_t i = 0; i < need; ++i) {
      const std::size_t j = i + rng.uniform_int(free.size() - i);
      std::swap(free[i], free[j]);
      masked[free[i]] = 1;
    }
  }

  std::vector<std::uint32_t> out;
  out.reserve(budget);
  for (std::uint32_t p = 0; p < extent; ++p)
    if (masked[p]) out.push_back(p);
  return out;
}

std::vector<MaskRecord> apply_mask_policy(std::span<const std::uint32_t> positions, Rng& rng,
                                          std::size_t vocab_size, std::span<TokenId> input_ids) {
  if (vocab_size <= static_cast<std::size_t>(Vocab::kNumReserved))
    throw CorpusError("vocabulary has no non-special ids to sample");
  std::vector<MaskRecord> records;
  records.reserve(positions.size());
  for (std::uint32_t p : positions) {
    TokenId& id = input_ids[p];
    if (Vocab::is_special(id) && id != Vocab::kUnk) throw CorpusError("cannot mask a special token position");
    MaskRecord r{p, id, MaskAction::kKept};
    const double u = rng.uniform01();
    if (u < 0.8) {
      r.action = MaskAction::kMasked;
      id = Vocab::kMask;
    } else if (u < 0.9) {
      r.action = MaskAction::kRandom;
      id = static_cast<TokenId>(Vocab::kNumReserved +
                                rng.uniform_int(vocab_size - static_cast<std::size_t>(Vocab::kNumReserved)));
    }
    records.push_back(r);
  }
  return records;
}

InstanceBuilder::InstanceBuilder(std::shared_ptr<const Vocab> vocab, std::shared_ptr<const NgramLexicon> lexicon,
                                 std::shared_ptr<const Segmenter> segmenter, InstanceOptions options)
    : vocab_(std::move(vocab)),
      lexicon_(std::move(lexicon)),
      segmenter_(std::move(segmenter)),
      options_(options) {
  if (!lexicon_->empty()) matcher_ = std::make_shared<Matcher>(*lexicon_);
  if (!segmenter_) segmenter_ = std::make_shared<MaxMatchSegmenter>(matcher_);
  if (options_.max_len < 3) throw CorpusError("max_len must be at least 3");
}

namespace {

struct Layout {
  std::size_t a_len;
  std::size_t b_len;
  bool has_b;
};

Layout fit(std::size_t a, std::optional<std::size_t> b, std::size_t max_len) {
  const std::size_t specials = b ? 3 : 2;
  std::size_t la = a, lb = b.value_or(0);
  const std::size_t room = max_len - specials;
  while (la + lb > room) {
    if (la > lb)
      --la;
    else
      --lb;
  }
  return {la, lb, b.has_value()};
}

}  // namespace

TrainingInstance InstanceBuilder::encode(std::u32string_view a, std::optional<std::u32string_view> b) const {
  const std::size_t max_len = options_.max_len;
  const auto lay = fit(a.size(), b ? std::optional(b->size()) : std::nullopt, max_len);
  const auto a_text = a.substr(0, lay.a_len);
  const auto b_text = b ? b->substr(0, lay.b_len) : std::u32string_view{};

  TrainingInstance inst;
  inst.input_ids.assign(max_len, Vocab::kPad);
  inst.attention_mask.assign(max_len, 0);
  inst.segment_ids.assign(max_len, 0);
  std::size_t pos = 0;
  auto push = [&](TokenId id, std::uint8_t seg) {
    inst.input_ids[pos] = id;
    inst.attention_mask[pos] = 1;
    inst.segment_ids[pos] = seg;
    ++pos;
  };
  push(Vocab::kCls, 0);
  for (char32_t c : a_text) push(vocab_->id(c), 0);
  push(Vocab::kSep, 0);
  if (lay.has_b) {
    for (char32_t c : b_text) push(vocab_->id(c), 1);
    push(Vocab::kSep, 1);
  }

  std::vector<NgramMatch> matches;
  if (matcher_) {
    auto add = [&](std::u32string_view text, std::uint32_t offset) {
      for (auto m : matcher_->find_all(text)) {
        m.start += offset;
        matches.push_back(m);
      }
    };
    add(a_text, 1);
    if (lay.has_b) add(b_text, static_cast<std::uint32_t>(lay.a_len + 2));
    matches = select_top_matches(std::move(matches), *matcher_, options_.max_matches);
  }
  inst.association = association_map(std::move(matches), *lexicon_, max_len);
  return inst;
}

TrainingInstance InstanceBuilder::build_pretrain_example(std::u32string_view a, std::u32string_view b,
                                                         bool is_next, Rng& rng) const {
  TrainingInstance inst = encode(a, b);
  const auto lay = fit(a.size(), b.size(), options_.max_len);

  std::vector<TokenSpan> candidates;
  auto add_candidates = [&](std::u32string_view text, std::uint32_t offset) {
    const auto spans = segmenter_->segment(text);
    for (auto s : merge_adjacent(spans, text, *lexicon_)) {
      s.start += offset;
      candidates.push_back(s);
    }
  };
  add_candidates(a.substr(0, lay.a_len), 1);
  add_candidates(b.substr(0, lay.b_len), static_cast<std::uint32_t>(lay.a_len + 2));

  const auto positions = select_mask_spans(candidates, options_.mask_ratio, rng);
  inst.mask_records = apply_mask_policy(positions, rng, vocab_->size(), inst.input_ids);
  inst.nsp_label = is_next;
  return inst;
}

std::vector<TrainingInstance> build_pretrain_instances(std::span<const Sentence> sentences,
                                                       std::span<const SentencePair> pairs,
                                                       const InstanceBuilder& builder, std::uint64_t seed) {
  std::vector<TrainingInstance> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Rng rng = Rng::derive(seed, i);
    const auto& p = pairs[i];
    out.push_back(builder.build_pretrain_example(sentences[p.a].chars, sentences[p.b].chars, p.is_next, rng));
  }
  return out;
}

std::vector<std::uint8_t> serialize_instance(const TrainingInstance& inst) {
  ByteWriter w;
  const auto n = static_cast<std::uint32_t>(inst.input_ids.size());
  w.put(n);
  for (auto id : inst.input_ids) w.put(static_cast<std::int32_t>(id));
  for (auto m : inst.attention_mask) w.put(m);
  for (auto s : inst.segment_ids) w.put(s);
  w.put(static_cast<std::uint32_t>(inst.association.matches.size()));
  for (const auto& m : inst.association.matches) {
    w.put(static_cast<std::int32_t>(m.ngram_id));
    w.put(m.start);
    w.put(m.len);
  }
  w.put(static_cast<std::uint32_t>(inst.association.positions.size()));
  for (const auto& pos : inst.association.positions) {
    w.put(static_cast<std::uint32_t>(pos.size()));
    for (const auto& a : pos) {
      w.put(a.match);
      w.put(a.weight);
    }
  }
  w.put(static_cast<std::uint32_t>(inst.mask_records.size()));
  for (const auto& r : inst.mask_records) {
    w.put(r.position);
    w.put(static_cast<std::int32_t>(r.original_id));
    w.put(static_cast<std::uint8_t>(r.action));
  }
  w.put(static_cast<std::uint8_t>(inst.nsp_label ? 1 : 0));
  return w.take();
}

TrainingInstance deserialize_instance(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  TrainingInstance inst;
  const auto n = r.get<std::uint32_t>();
  inst.input_ids.resize(n);
  inst.attention_mask.resize(n);
  inst.segment_ids.resize(n);
  for (auto& id : inst.input_ids) id = r.get<std::int32_t>();
  for (auto& m : inst.attention_mask) m = r.get<std::uint8_t>();
  for (auto& s : inst.segment_ids) s = r.get<std::uint8_t>();
  inst.association.matches.resize(r.get<std::uint32_t>());
  for (auto& m : inst.association.matches) {
    m.ngram_id = r.get<std::int32_t>();
    m.start = r.get<std::uint32_t>();
    m.len = r.get<std::uint32_t>();
  }
  inst.association.positions.resize(r.get<std::uint32_t>());
  for (auto& pos : inst.association.positions) {
    pos.resize(r.get<std::uint32_t>());
    for (auto& a : pos) {
      a.match = r.get<std::uint32_t>();
      a.weight = r.get<double>();
    }
  }
  inst.mask_records.resize(r.get<std::uint32_t>());
  for (auto& rec : inst.mask_records) {
    rec.position = r.get<std::uint32_t>();
    rec.original_id = r.get<std::int32_t>();
    const auto action = r.get<std::uint8_t>();
    if (action > 2) throw std::runtime_error("invalid mask action in instance record");
    rec.action = static_cast<MaskAction>(action);
  }
  inst.nsp_label = r.get<std::uint8_t>() != 0;
  if (!r.at_end()) throw std::runtime_error("trailing bytes in instance record");
  return inst;
}

namespace {
constexpr const char* kInstanceMagic = "ZENGRAM-INST";
}

void write_instances(const std::filesystem::path& path, std::span<const TrainingInstance> instances,
                     std::size_t max_len, std::size_t max_matches) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write instance file: " + path.string());
  out << kInstanceMagic << " v1 " << max_len << ' ' << max_matches << '\n';
  for (const auto& inst : instances) {
    const auto payload = serialize_instance(inst);
    ByteWriter len;
    len.put(static_cast<std::uint32_t>(payload.size()));
    out.write(reinterpret_cast<const char*>(len.bytes().data()), 4);
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  }
  if (!out) throw CorpusError("write failure on instance file: " + path.string());
}

std::vector<TrainingInstance> read_instances(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open instance file: " + path.string());
  std::string header;
  std::getline(in, header);
  if (header.rfind(std::string(kInstanceMagic) + " v1 ", 0) != 0)
    throw CorpusError(path.string() + ": unsupported instance file version");
  std::vector<TrainingInstance> out;
  for (;;) {
    std::uint8_t len_bytes[4];
    in.read(reinterpret_cast<char*>(len_bytes), 4);
    if (in.gcount() == 0) break;
    if (in.gcount() != 4) throw CorpusError(path.string() + ": truncated record header");
    const auto len = ByteReader(len_bytes).get<std::uint32_t>();
    std::vector<std::uint8_t> payload(len);
    in.read(reinterpret_cast<char*>(payload.data()), len);
    if (static_cast<std::uint32_t>(in.gcount()) != len) throw CorpusError(path.string() + ": truncated record");
    out.push_back(deserialize_instance(payload));
  }
  return out;
}

}  // namespace zengram
