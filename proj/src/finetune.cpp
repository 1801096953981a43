#include "zengram/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "zengram/utf8.hpp"

namespace zengram {

int LabelSet::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

std::string LabelSet::to_text() const {
  std::string out;
  for (const auto& n : names) out += n + "\n";
  return out;
}

LabelSet LabelSet::from_text(const std::string& text) {
  LabelSet s;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) s.names.push_back(line);
  return s;
}

std::size_t TaskData::size() const {
  switch (kind) {
    case TaskKind::kClassify: return classify.size();
    case TaskKind::kLabel: return label.size();
    case TaskKind::kSpan: return span.size();
    case TaskKind::kNone: break;
  }
  return 0;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::u32string decode_field(const std::string& s, const std::string& where) {
  try {
    return decode_utf8(s);
  } catch (const Utf8Error& e) {
    throw DatasetError(where + ": " + e.what());
  }
}

std::size_t parse_offset(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw DatasetError(where + ": malformed offset '" + s + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace

TaskData read_task_data(TaskKind kind, const std::filesystem::path& path) {
  if (kind == TaskKind::kNone) throw DatasetError("no task kind given for " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open dataset: " + path.string());
  TaskData d;
  d.kind = kind;
  std::string line;
  std::size_t line_no = 0;
  LabelExample pending;
  auto flush = [&] {
    if (!pending.chars.empty()) d.label.push_back(std::move(pending));
    pending = {};
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (kind == TaskKind::kLabel) {
      if (line.empty()) {
        flush();
        continue;
      }
      const auto f = split_tabs(line);
      const auto ch = decode_field(f[0], where);
      if (f.size() != 2 || ch.size() != 1 || f[1].empty())
        throw DatasetError(where + ": expected 'char<TAB>tag'");
      pending.chars.push_back(ch[0]);
      pending.tags.push_back(f[1]);
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (kind == TaskKind::kClassify) {
      if (f.size() != 2 && f.size() != 3) throw DatasetError(where + ": expected 'label<TAB>textA(<TAB>textB)'");
      if (f[0].empty() || f[1].empty()) throw DatasetError(where + ": empty label or text");
      ClassifyExample e{f[0], decode_field(f[1], where), std::nullopt, std::nullopt};
      if (f.size() == 3) e.b = decode_field(f[2], where);
      d.classify.push_back(std::move(e));
    } else {
      if (f.size() != 4) throw DatasetError(where + ": expected 'context<TAB>question<TAB>start<TAB>end'");
      SpanExample e{decode_field(f[0], where), decode_field(f[1], where), parse_offset(f[2], where),
                    parse_offset(f[3], where)};
      if (e.start >= e.end || e.end > e.context.size())
        throw DatasetError(where + ": answer offsets outside the context");
      d.span.push_back(std::move(e));
    }
  }
  flush();
  return d;
}

void write_task_data(const TaskData& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  switch (data.kind) {
    case TaskKind::kClassify:
      for (const auto& e : data.classify) {
        out << e.label << '\t' << encode_utf8(e.a);
        if (e.b) out << '\t' << encode_utf8(*e.b);
        out << '\n';
      }
      break;
    case TaskKind::kLabel:
      for (const auto& e : data.label) {
        for (std::size_t i = 0; i < e.chars.size(); ++i) out << encode_utf8(e.chars[i]) << '\t' << e.tags[i] << '\n';
        out << '\n';
      }
      break;
    case TaskKind::kSpan:
      for (const auto& e : data.span)
        out << encode_utf8(e.context) << '\t' << encode_utf8(e.question) << '\t' << e.start << '\t' << e.end << '\n';
      break;
    case TaskKind::kNone: break;
  }
  if (!out) throw DatasetError("write failure on " + path.string());
}

LabelSet collect_labels(const TaskData& data) {
  std::set<std::string> names;
  if (data.kind == TaskKind::kClassify)
    for (const auto& e : data.classify) names.insert(e.label);
  if (data.kind == TaskKind::kLabel)
    for (const auto& e : data.label) names.insert(e.tags.begin(), e.tags.end());
  return {{names.begin(), names.end()}};
}

void check_labels(const TaskData& data, const LabelSet& labels, const std::string& what) {
  if (data.kind == TaskKind::kClassify)
    for (std::size_t i = 0; i < data.classify.size(); ++i)
      if (labels.index_of(data.classify[i].label) < 0)
        throw DatasetError(what + " example " + std::to_string(i) + ": label '" + data.classify[i].label +
                           "' is not in the declared label set");
  if (data.kind == TaskKind::kLabel)
    for (std::size_t i = 0; i < data.label.size(); ++i)
      for (const auto& t : data.label[i].tags)
        if (labels.index_of(t) < 0)
          throw DatasetError(what + " example " + std::to_string(i) + ": tag '" + t +
                             "' is not in the declared label set");
}

namespace {

struct Encoded {
  TrainingInstance inst;
  std::vector<std::int32_t> targets;
  std::vector<std::uint8_t> mask;
  std::size_t offset = 0;  // first position of the labeled text
  std::size_t kept = 0;    // characters of it that survived truncation
};

std::size_t count_segment(const TrainingInstance& inst, std::uint8_t seg) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < inst.length(); ++i) n += inst.segment_ids[i] == seg;
  return n;
}

Encoded encode_example(const InstanceBuilder& builder, const TaskData& data, std::size_t i, const LabelSet* labels) {
  Encoded e;
  switch (data.kind) {
    case TaskKind::kClassify: {
      const auto& ex = data.classify[i];
      e.inst = builder.encode(ex.a, ex.b ? std::optional<std::u32string_view>(*ex.b) : std::nullopt).trimmed();
      if (labels) e.targets = {labels->index_of(ex.label)};
      e.mask = {1};
      break;
    }
    case TaskKind::kLabel: {
      const auto& ex = data.label[i];
      e.inst = builder.encode(ex.chars, std::nullopt).trimmed();
      const std::size_t n = e.inst.length();
      e.offset = 1;
      e.kept = n - 2;
      e.targets.assign(n, 0);
      e.mask.assign(n, 0);
      if (labels)
        for (std::size_t k = 0; k < e.kept; ++k) {
          e.targets[1 + k] = labels->index_of(ex.tags[k]);
          e.mask[1 + k] = 1;
        }
      break;
    }
    case TaskKind::kSpan: {
      const auto& ex = data.span[i];
      e.inst = builder.encode(ex.question, std::u32string_view(ex.context)).trimmed();
      e.offset = count_segment(e.inst, 0);
      e.kept = count_segment(e.inst, 1) - 1;
      e.targets = {0, 0};
      e.mask = {0, 0};
      if (ex.end <= e.kept) {
        e.targets = {static_cast<std::int32_t>(e.offset + ex.start), static_cast<std::int32_t>(e.offset + ex.end - 1)};
        e.mask = {1, 1};
      }
      break;
    }
    case TaskKind::kNone: throw DatasetError("no task kind");
  }
  return e;
}

InstanceBuilder make_builder(const Checkpoint& ckpt) {
  auto vocab = std::make_shared<Vocab>(ckpt.vocab());
  auto lexicon = std::make_shared<NgramLexicon>(ckpt.lexicon());
  InstanceOptions o;
  o.max_len = ckpt.config.max_len;
  return InstanceBuilder(vocab, lexicon, nullptr, o);
}

num::Var task_loss(const Encoder& enc, ParamBinding& bind, const Encoded& e, const ForwardOptions& fo) {
  const auto states = enc.forward(bind, EncoderInput::from(e.inst), fo);
  const num::Var logits = enc.task_head_forward(bind, states);
  if (enc.config().task == TaskKind::kSpan) return num::cross_entropy(num::transpose(logits), e.targets, e.mask);
  return num::cross_entropy(logits, e.targets, e.mask);
}

std::size_t argmax_row(const num::Array& a, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < a.cols(); ++c)
    if (a.at(r, c) > a.at(r, best)) best = c;
  return best;
}

double train_accuracy_metric(const Metrics& m) {
  for (const auto& [k, v] : m)
    if (k == "accuracy" || k == "f1" || k == "em") return v;
  return 0.0;
}

}  // namespace

FinetuneResult finetune(const Checkpoint& pretrained, const TaskData& train, const TaskData* dev,
                        const LabelSet& labels_in, const FinetuneOptions& options,
                        const std::function<void(const HistoryRow&)>& on_row) {
  if (options.task == TaskKind::kNone) throw ConfigError("finetuning needs a task");
  if (train.kind != options.task || (dev && dev->kind != options.task))
    throw DatasetError("dataset kind does not match the task");
  if (train.size() == 0) throw DatasetError("empty training set");
  options.schedule.validate();
  if (options.batch_size == 0) throw TrainError("batch_size must be positive");
  LabelSet labels = labels_in;
  if (options.task == TaskKind::kSpan) labels = {{"start", "end"}};
  if (labels.size() == 0) labels = collect_labels(train);
  if (options.task != TaskKind::kSpan) {
    if (labels.size() < 2) throw DatasetError("need at least 2 labels, found " + std::to_string(labels.size()));
    check_labels(train, labels, "train");
    if (dev) check_labels(*dev, labels, "dev");
  }

  FinetuneResult result;
  Checkpoint& model = result.model;
  model.config = pretrained.config;
  model.config.task = options.task;
  model.config.task_labels = labels.size();
  if (options.dropout >= 0.0) model.config.dropout = options.dropout;
  model.config.validate();
  model.params = pretrained.params;
  Rng head_rng = Rng::derive(options.seed, 0x4ead);
  init_task_head(model.params, model.config, head_rng);
  if (options.zero_init_head) {
    model.params.get("head.w").fill(0.0);
    model.params.get("head.b").fill(0.0);
  }
  for (const char* key : {"vocab", "lexicon"})
    if (const auto* a = pretrained.asset(key)) model.set_asset(key, *a);
  model.set_asset("labels", labels.to_text());
  result.labels = labels;

  const InstanceBuilder builder = make_builder(model);
  std::vector<Encoded> encoded;
  for (std::size_t i = 0; i < train.size(); ++i) encoded.push_back(encode_example(builder, train, i, &labels));

  std::vector<bool> trainable(model.params.size(), true);
  if (options.freeze_encoder)
    for (std::size_t i = 0; i < model.params.size(); ++i) trainable[i] = is_task_head_param(model.params.name(i));

  const Encoder enc(model.config);
  const ExampleLoss loss = [&](ParamBinding& bind, std::size_t idx, Rng& rng) {
    ForwardOptions fo;
    fo.training = true;
    fo.rng = &rng;
    return task_loss(enc, bind, encoded[idx], fo);
  };

  double loss_sum = 0.0;
  std::size_t loss_steps = 0;
  auto record = [&](std::uint64_t step) {
    HistoryRow row;
    row.step = step;
    row.train_loss = loss_steps ? loss_sum / static_cast<double>(loss_steps) : 0.0;
    row.train = evaluate(model, train);
    if (dev) row.dev = evaluate(model, *dev);
    loss_sum = 0.0;
    loss_steps = 0;
    result.history.push_back(row);
    if (on_row) on_row(row);
    return train_accuracy_metric(row.train) >= 100.0;
  };

  if (options.eval_every && record(0) && options.stop_when_perfect) return result;
  EpochSampler sampler(options.seed, encoded.size());
  std::vector<std::size_t> batch(options.batch_size);
  std::vector<num::Array> grads;
  const auto total = options.schedule.total_steps;
  while (model.step < total) {
    const std::uint64_t t = model.step;
    for (std::size_t b = 0; b < options.batch_size; ++b) batch[b] = sampler.at(t * options.batch_size + b);
    loss_sum += batch_gradients(model.params, batch, loss, options.seed ^ 0xf17e, t, grads);
    ++loss_steps;
    adam_step(model.params, grads, model.optim, options.schedule, options.adam, &trainable);
    model.step = model.optim.step;
    if (options.eval_every && (model.step % options.eval_every == 0 || model.step == total))
      if (record(model.step) && options.stop_when_perfect) break;
  }
  return result;
}

TaskData predict(const Checkpoint& model, const TaskData& inputs) {
  if (model.config.task != inputs.kind) throw DatasetError("dataset kind does not match the model's task");
  const auto* label_text = model.asset("labels");
  if (!label_text) throw CheckpointError("model carries no label set");
  const LabelSet labels = LabelSet::from_text(*label_text);
  const InstanceBuilder builder = make_builder(model);
  const Encoder enc(model.config);
  TaskData out = inputs;
  const int positive = labels.index_of("1");
  const int fallback = labels.index_of("O") >= 0 ? labels.index_of("O") : 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Encoded e = encode_example(builder, inputs, i, nullptr);
    num::Tape tape;
    ParamBinding bind(tape, model.params);
    const auto states = enc.forward(bind, EncoderInput::from(e.inst), {});
    const num::Array logits = enc.task_head_forward(bind, states).value();
    switch (inputs.kind) {
      case TaskKind::kClassify: {
        out.classify[i].label = labels.names[argmax_row(logits, 0)];
        if (positive >= 0) out.classify[i].score = num::softmax_rows(logits)[static_cast<std::size_t>(positive)];
        break;
      }
      case TaskKind::kLabel: {
        auto& tags = out.label[i].tags;
        tags.assign(inputs.label[i].chars.size(), labels.names[static_cast<std::size_t>(fallback)]);
        for (std::size_t k = 0; k < e.kept; ++k) tags[k] = labels.names[argmax_row(logits, e.offset + k)];
        break;
      }
      case TaskKind::kSpan: {
        std::vector<std::uint8_t> allowed(logits.rows(), 0);
        for (std::size_t k = 0; k < e.kept; ++k) allowed[e.offset + k] = 1;
        const auto [s, t] = best_span(logits, allowed, 30);
        out.span[i].start = s - e.offset;
        out.span[i].end = t - e.offset + 1;
        break;
      }
      case TaskKind::kNone: break;
    }
  }
  return out;
}

Metrics score(const TaskData& predicted, const TaskData& gold) {
  if (predicted.kind != gold.kind || predicted.size() != gold.size())
    throw DatasetError("predictions do not line up with the gold data");
  Metrics m;
  switch (gold.kind) {
    case TaskKind::kClassify: {
      std::vector<std::string> p, g;
      for (const auto& e : predicted.classify) p.push_back(e.label);
      for (const auto& e : gold.classify) g.push_back(e.label);
      m.emplace_back("accuracy", accuracy(p, g));
      const bool ranked = std::all_of(predicted.classify.begin(), predicted.classify.end(),
                                      [](const ClassifyExample& e) { return e.score && e.b; });
      if (ranked && !gold.classify.empty()) {
        std::map<std::u32string, std::size_t> group_of;
        std::vector<std::vector<RankedCandidate>> groups;
        for (std::size_t i = 0; i < gold.classify.size(); ++i) {
          auto [it, fresh] = group_of.try_emplace(gold.classify[i].a, groups.size());
          if (fresh) groups.emplace_back();
          groups[it->second].push_back({*predicted.classify[i].score, gold.classify[i].label == "1"});
        }
        m.emplace_back("mrr", mean_reciprocal_rank(groups));
      }
      break;
    }
    case TaskKind::kLabel: {
      std::vector<std::vector<std::string>> p, g;
      for (const auto& e : predicted.label) p.push_back(e.tags);
      for (const auto& e : gold.label) g.push_back(e.tags);
      const auto s = span_f1(p, g);
      m.emplace_back("precision", s.precision);
      m.emplace_back("recall", s.recall);
      m.emplace_back("f1", s.f1);
      m.emplace_back("token_accuracy", token_accuracy(p, g));
      m.emplace_back("bio_repairs", static_cast<double>(s.repairs));
      break;
    }
    case TaskKind::kSpan: {
      double em = 0.0, f1 = 0.0;
      for (std::size_t i = 0; i < gold.span.size(); ++i) {
        const auto& ge = gold.span[i];
        const auto& pe = predicted.span[i];
        const std::u32string_view ctx(pe.context);
        const std::u32string_view pa =
            pe.start < pe.end && pe.end <= ctx.size() ? ctx.substr(pe.start, pe.end - pe.start) : std::u32string_view();
        const auto ga = std::u32string_view(ge.context).substr(ge.start, ge.end - ge.start);
        em += exact_match(pa, ga);
        f1 += overlap_f1(pa, ga);
      }
      const double n = gold.span.empty() ? 1.0 : static_cast<double>(gold.span.size());
      m.emplace_back("em", 100.0 * em / n);
      m.emplace_back("f1", 100.0 * f1 / n);
      break;
    }
    case TaskKind::kNone: break;
  }
  return m;
}

Metrics evaluate(const Checkpoint& model, const TaskData& gold) { return score(predict(model, gold), gold); }

std::string format_metrics(const Metrics& metrics) {
  std::string out;
  char buf[64];
  for (const auto& [k, v] : metrics) {
    std::snprintf(buf, sizeof buf, "%.4f", v);
    out += k + " " + buf + "\n";
  }
  return out;
}

}  // namespace zengram
