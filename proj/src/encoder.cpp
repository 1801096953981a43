#include "zengram/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace zengram {

using num::Array;
using num::Var;

std::string to_string(IntegrationMode mode) {
  switch (mode) {
    case IntegrationMode::kWeighted: return "WEIGHTED";
    case IntegrationMode::kUnweighted: return "UNWEIGHTED";
    case IntegrationMode::kOff: return "OFF";
  }
  return "?";
}

std::string to_string(PositionMode mode) { return mode == PositionMode::kRelative ? "RELATIVE" : "ABSOLUTE"; }

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kNone: return "NONE";
    case TaskKind::kClassify: return "CLASSIFY";
    case TaskKind::kLabel: return "LABEL";
    case TaskKind::kSpan: return "SPAN";
  }
  return "?";
}

namespace {

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

IntegrationMode parse_integration_mode(const std::string& text) {
  const auto t = upper(text);
  if (t == "WEIGHTED") return IntegrationMode::kWeighted;
  if (t == "UNWEIGHTED") return IntegrationMode::kUnweighted;
  if (t == "OFF") return IntegrationMode::kOff;
  throw ConfigError("unknown integration mode '" + text + "' (expected weighted, unweighted or off)");
}

PositionMode parse_position_mode(const std::string& text) {
  const auto t = upper(text);
  if (t == "RELATIVE") return PositionMode::kRelative;
  if (t == "ABSOLUTE") return PositionMode::kAbsolute;
  throw ConfigError("unknown position mode '" + text + "' (expected relative or absolute)");
}

TaskKind parse_task_kind(const std::string& text) {
  const auto t = upper(text);
  if (t == "NONE") return TaskKind::kNone;
  if (t == "CLASSIFY") return TaskKind::kClassify;
  if (t == "LABEL") return TaskKind::kLabel;
  if (t == "SPAN") return TaskKind::kSpan;
  throw ConfigError("unknown task '" + text + "' (expected classify, label or span)");
}

void EncoderConfig::validate() const {
  if (heads == 0 || hidden == 0 || hidden % heads != 0)
    throw ConfigError("hidden size " + std::to_string(hidden) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  if (hidden % 2 != 0) throw ConfigError("hidden size must be even for sinusoidal position vectors");
  if (char_layers == 0) throw ConfigError("char_layers must be positive");
  if (ngram_layers == 0 || ngram_layers > char_layers)
    throw ConfigError("ngram_layers must be in [1, char_layers]");
  if (ffn_dim == 0) throw ConfigError("ffn_dim must be positive");
  if (vocab_size <= static_cast<std::size_t>(Vocab::kNumReserved)) throw ConfigError("vocab_size too small");
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  if (max_rel_dist == 0) throw ConfigError("max_rel_dist must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (task == TaskKind::kSpan && task_labels != 0 && task_labels != 2)
    throw ConfigError("span head has exactly 2 outputs");
  if ((task == TaskKind::kClassify || task == TaskKind::kLabel) && task_labels < 2)
    throw ConfigError("task head needs at least 2 labels");
}

EncoderConfig EncoderConfig::preset(const std::string& name) {
  EncoderConfig c;
  if (name == "tiny") {
    c.char_layers = 2, c.ngram_layers = 2, c.heads = 2, c.hidden = 32;
  } else if (name == "base") {
    c.char_layers = 12, c.ngram_layers = 6, c.heads = 12, c.hidden = 768;
    c.max_len = 512;
  } else if (name == "large") {
    c.char_layers = 24, c.ngram_layers = 6, c.heads = 16, c.hidden = 1024;
    c.max_len = 512;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected tiny, base or large)");
  }
  c.ffn_dim = 4 * c.hidden;
  return c;
}

std::string EncoderConfig::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "char_layers = " << char_layers << "\n"
      << "ngram_layers = " << ngram_layers << "\n"
      << "heads = " << heads << "\n"
      << "hidden = " << hidden << "\n"
      << "ffn_dim = " << ffn_dim << "\n"
      << "vocab_size = " << vocab_size << "\n"
      << "ngram_vocab_size = " << ngram_vocab_size << "\n"
      << "max_len = " << max_len << "\n"
      << "max_rel_dist = " << max_rel_dist << "\n"
      << "integration = " << to_string(integration) << "\n"
      << "position = " << to_string(position) << "\n"
      << "dropout = " << dropout << "\n"
      << "scale_scores = " << (scale_scores ? 1 : 0) << "\n"
      << "task = " << to_string(task) << "\n"
      << "task_labels = " << task_labels << "\n";
  return out.str();
}

EncoderConfig EncoderConfig::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw ConfigError("malformed config line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  auto take = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(std::string("config is missing '") + key + "'");
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto size = [&](const char* key) -> std::size_t {
    const auto v = take(key);
    try {
      std::size_t pos = 0;
      const auto n = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      throw ConfigError(std::string("invalid value for '") + key + "': " + v);
    }
  };
  EncoderConfig c;
  c.char_layers = size("char_layers");
  c.ngram_layers = size("ngram_layers");
  c.heads = size("heads");
  c.hidden = size("hidden");
  c.ffn_dim = size("ffn_dim");
  c.vocab_size = size("vocab_size");
  c.ngram_vocab_size = size("ngram_vocab_size");
  c.max_len = size("max_len");
  c.max_rel_dist = size("max_rel_dist");
  c.integration = parse_integration_mode(take("integration"));
  c.position = parse_position_mode(take("position"));
  c.dropout = std::stod(take("dropout"));
  c.scale_scores = size("scale_scores") != 0;
  c.task = parse_task_kind(take("task"));
  c.task_labels = size("task_labels");
  if (!kv.empty()) throw ConfigError("unknown config key '" + kv.begin()->first + "'");
  return c;
}

namespace {

Array normal_array(num::Shape shape, Rng& rng, double stddev = 0.02) {
  Array a(std::move(shape));
  for (auto& x : a.data()) x = rng.normal(0.0, stddev);
  return a;
}

void add_attention(ParamStore& p, const std::string& prefix, std::size_t d, bool relative, std::size_t heads,
                   Rng& rng) {
  p.add(prefix + ".attn.wq", normal_array({d, d}, rng));
  p.add(prefix + ".attn.wk", normal_array({d, d}, rng));
  p.add(prefix + ".attn.wv", normal_array({d, d}, rng));
  if (relative) {
    p.add(prefix + ".attn.wr", normal_array({d, d}, rng));
    p.add(prefix + ".attn.u", Array({heads, d / heads}));
    p.add(prefix + ".attn.v", Array({heads, d / heads}));
  }
  p.add(prefix + ".attn.wo", normal_array({d, d}, rng));
  p.add(prefix + ".attn.bo", Array({d}));
}

void add_norm(ParamStore& p, const std::string& prefix, std::size_t d) {
  p.add(prefix + ".g", Array({d}, 1.0));
  p.add(prefix + ".b", Array({d}));
}

void add_block(ParamStore& p, const std::string& prefix, const EncoderConfig& c, bool relative, Rng& rng) {
  add_attention(p, prefix, c.hidden, relative, c.heads, rng);
  add_norm(p, prefix + ".ln1", c.hidden);
  p.add(prefix + ".ffn.w1", normal_array({c.hidden, c.ffn_dim}, rng));
  p.add(prefix + ".ffn.b1", Array({c.ffn_dim}));
  p.add(prefix + ".ffn.w2", normal_array({c.ffn_dim, c.hidden}, rng));
  p.add(prefix + ".ffn.b2", Array({c.hidden}));
  add_norm(p, prefix + ".ln2", c.hidden);
}

std::string layer_name(const char* stack, std::size_t l) { return std::string(stack) + "." + std::to_string(l); }

}  // namespace

bool is_task_head_param(const std::string& name) { return name.rfind("head.", 0) == 0; }

void init_task_head(ParamStore& params, const EncoderConfig& config, Rng& rng) {
  if (config.task == TaskKind::kNone) return;
  const std::size_t out = config.task == TaskKind::kSpan ? 2 : config.task_labels;
  Array w = normal_array({config.hidden, out}, rng);
  Array b({out});
  if (params.contains("head.w")) {
    params.get("head.w") = std::move(w);
    params.get("head.b") = std::move(b);
  } else {
    params.add("head.w", std::move(w));
    params.add("head.b", std::move(b));
  }
}

ParamStore init_params(const EncoderConfig& config, Rng& rng) {
  config.validate();
  const auto d = config.hidden;
  const bool relative = config.position == PositionMode::kRelative;
  ParamStore p;
  p.add("emb.char", normal_array({config.vocab_size, d}, rng));
  p.add("emb.segment", normal_array({2, d}, rng));
  if (!relative) p.add("emb.position", normal_array({config.max_len, d}, rng));
  add_norm(p, "emb.ln", d);
  p.add("emb.ngram", normal_array({std::max<std::size_t>(config.ngram_vocab_size, 1), d}, rng));
  add_norm(p, "emb.ngram_ln", d);
  for (std::size_t l = 0; l < config.char_layers; ++l) add_block(p, layer_name("char", l), config, relative, rng);
  for (std::size_t l = 0; l < config.ngram_layers; ++l) add_block(p, layer_name("ngram", l), config, false, rng);
  p.add("mlm.w", normal_array({d, d}, rng));
  p.add("mlm.b", Array({d}));
  add_norm(p, "mlm.ln", d);
  p.add("mlm.bias", Array({config.vocab_size}));
  p.add("pool.w", normal_array({d, d}, rng));
  p.add("pool.b", Array({d}));
  p.add("nsp.w", normal_array({d, 2}, rng));
  p.add("nsp.b", Array({2}));
  init_task_head(p, config, rng);
  return p;
}

Array rel_pos_table(std::size_t max_rel_dist, std::size_t dim) {
  if (dim % 2 != 0) throw ConfigError("relative position dimension must be even, got " + std::to_string(dim));
  const std::size_t rows = 2 * max_rel_dist + 1;
  Array r({rows, dim});
  for (std::size_t row = 0; row < rows; ++row) {
    const double delta = static_cast<double>(row) - static_cast<double>(max_rel_dist);
    for (std::size_t t = 0; 2 * t < dim; ++t) {
      const double angle = delta / std::pow(10000.0, static_cast<double>(2 * t) / static_cast<double>(dim));
      r.at(row, 2 * t) = std::sin(angle);
      r.at(row, 2 * t + 1) = std::cos(angle);
    }
  }
  return r;
}

Array rel_pos_window(const Array& table, std::size_t max_rel_dist, std::size_t seq) {
  const std::size_t d = table.cols();
  const std::size_t rows = 2 * seq - 1;
  Array w({rows, d});
  const auto maxd = static_cast<std::int64_t>(max_rel_dist);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int64_t delta = std::clamp(static_cast<std::int64_t>(r) - static_cast<std::int64_t>(seq - 1), -maxd, maxd);
    const auto src = static_cast<std::size_t>(delta + maxd);
    std::copy_n(&table.data()[src * d], d, &w.data()[r * d]);
  }
  return w;
}

Var attention(Var input, const AttentionWeights& w, std::span<const std::uint8_t> key_mask,
              const AttentionOptions& options, AttentionTrace* trace) {
  num::Tape& tape = *input.tape;
  const std::size_t n = input.value().rows();
  const std::size_t d = input.value().cols();
  const std::size_t heads = options.heads;
  const std::size_t dh = d / heads;
  const bool relative = w.wr.has_value();
  const double factor = options.scale_scores ? 1.0 / std::sqrt(static_cast<double>(dh)) : 1.0;

  const Var q = num::matmul(input, w.wq);
  const Var k = num::matmul(input, w.wk);
  const Var v = num::matmul(input, w.wv);

  std::optional<Var> rstar;
  std::vector<std::uint32_t> index;
  if (relative) {
    if (!options.rel_table) throw num::NumericError("relative attention needs a position table");
    rstar = num::matmul(tape.constant(rel_pos_window(*options.rel_table, options.max_rel_dist, n)), *w.wr);
    index.resize(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) index[i * n + j] = static_cast<std::uint32_t>(i + n - 1 - j);
  }

  std::vector<Var> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = num::slice_cols(q, h * dh, dh);
    const Var kh = num::slice_cols(k, h * dh, dh);
    const Var vh = num::slice_cols(v, h * dh, dh);
    Var scores = qh;
    if (relative) {
      const Var content = num::matmul_nt(num::add_row(qh, num::slice_rows(*w.u, h, 1)), kh);
      const Var rh = num::slice_cols(*rstar, h * dh, dh);
      const Var pos = num::matmul_nt(num::add_row(qh, num::slice_rows(*w.v, h, 1)), rh);
      scores = num::add(content, num::select_columns(pos, n, index));
    } else {
      scores = num::matmul_nt(qh, kh);
    }
    if (trace) trace->scores.push_back(scores);
    Var probs = num::masked_softmax(factor == 1.0 ? scores : num::scale(scores, factor), key_mask);
    if (trace) trace->probs.push_back(probs);
    if (options.dropout > 0.0 && options.rng) probs = num::dropout(probs, options.dropout, *options.rng);
    outputs.push_back(num::matmul(probs, vh));
  }
  const Var joined = heads == 1 ? outputs[0] : num::concat_cols(outputs);
  return num::add_row(num::matmul(joined, w.wo), w.bo);
}

Var integrate(Var nu, std::optional<Var> mu, const AssociationMap& association, IntegrationMode mode) {
  if (mode == IntegrationMode::kOff || !mu || association.matches.empty()) return nu;
  const std::size_t n = nu.value().rows();
  const std::size_t m = mu->value().rows();
  Array p({n, m});
  for (std::size_t i = 0; i < n && i < association.positions.size(); ++i)
    for (const auto& a : association.positions[i])
      p.at(i, a.match) = mode == IntegrationMode::kWeighted ? a.weight : 1.0;
  return num::add(nu, num::matmul(nu.tape->constant(std::move(p)), *mu));
}

EncoderInput EncoderInput::from(const TrainingInstance& instance) {
  const std::size_t n = instance.length();
  EncoderInput in;
  in.ids = std::span<const TokenId>(instance.input_ids.data(), n);
  in.segments = std::span<const std::uint8_t>(instance.segment_ids.data(), n);
  in.attention_mask = std::span<const std::uint8_t>(instance.attention_mask.data(), n);
  in.association = &instance.association;
  return in;
}

Encoder::Encoder(EncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  if (config_.position == PositionMode::kRelative) rel_table_ = rel_pos_table(config_.max_rel_dist, config_.hidden);
}

AttentionWeights Encoder::char_attention_weights(ParamBinding& params, std::size_t layer) const {
  const auto pre = layer_name("char", layer) + ".attn.";
  AttentionWeights w{params(pre + "wq"), params(pre + "wk"), params(pre + "wv"), params(pre + "wo"),
                     params(pre + "bo"), std::nullopt, std::nullopt, std::nullopt};
  if (config_.position == PositionMode::kRelative) {
    w.wr = params(pre + "wr");
    w.u = params(pre + "u");
    w.v = params(pre + "v");
  }
  return w;
}

AttentionWeights Encoder::ngram_attention_weights(ParamBinding& params, std::size_t layer) const {
  const auto pre = layer_name("ngram", layer) + ".attn.";
  return {params(pre + "wq"), params(pre + "wk"), params(pre + "wv"), params(pre + "wo"),
          params(pre + "bo"), std::nullopt, std::nullopt, std::nullopt};
}

namespace {

Var norm(ParamBinding& params, Var x, const std::string& prefix) {
  return num::layernorm(x, params(prefix + ".g"), params(prefix + ".b"));
}

Var maybe_dropout(Var x, const ForwardOptions& options, double rate) {
  if (!options.training || rate <= 0.0) return x;
  if (!options.rng) throw num::NumericError("training forward with dropout needs an rng");
  return num::dropout(x, rate, *options.rng);
}

Var feed_forward(ParamBinding& params, Var x, const std::string& prefix, const ForwardOptions& options,
                 double rate) {
  const Var h = num::gelu(num::add_row(num::matmul(x, params(prefix + ".ffn.w1")), params(prefix + ".ffn.b1")));
  const Var y = num::add_row(num::matmul(h, params(prefix + ".ffn.w2")), params(prefix + ".ffn.b2"));
  return norm(params, num::add(x, maybe_dropout(y, options, rate)), prefix + ".ln2");
}

}  // namespace

std::vector<Var> Encoder::ngram_encoder_forward(ParamBinding& params, std::span<const NgramId> ngram_ids,
                                                const ForwardOptions& options,
                                                std::vector<AttentionTrace>* trace) const {
  std::vector<Var> out;
  if (ngram_ids.empty()) return out;
  Var x = norm(params, num::gather_rows(params("emb.ngram"), ngram_ids), "emb.ngram_ln");
  const std::vector<std::uint8_t> keys(ngram_ids.size(), 1);
  AttentionOptions opts;
  opts.heads = config_.heads;
  opts.scale_scores = config_.scale_scores;
  opts.dropout = options.training ? config_.dropout : 0.0;
  opts.rng = options.rng;
  for (std::size_t l = 0; l < config_.ngram_layers; ++l) {
    const auto prefix = layer_name("ngram", l);
    AttentionTrace* t = nullptr;
    if (trace) t = &trace->emplace_back();
    const Var a = attention(x, ngram_attention_weights(params, l), keys, opts, t);
    x = norm(params, num::add(x, a), prefix + ".ln1");
    x = feed_forward(params, x, prefix, options, config_.dropout);
    out.push_back(x);
  }
  return out;
}

ForwardResult Encoder::forward(ParamBinding& params, const EncoderInput& input, const ForwardOptions& options) const {
  const std::size_t n = input.ids.size();
  if (n == 0) throw num::NumericError("empty encoder input");
  if (n > config_.max_len)
    throw num::NumericError("sequence length " + std::to_string(n) + " exceeds max_len " +
                            std::to_string(config_.max_len));
  if (input.segments.size() != n || input.attention_mask.size() != n)
    throw num::NumericError("encoder input arrays differ in length");
  num::Tape& tape = params.tape();
  ForwardResult r;

  std::vector<std::int32_t> seg(input.segments.begin(), input.segments.end());
  Var x = num::add(num::gather_rows(params("emb.char"), input.ids), num::gather_rows(params("emb.segment"), seg));
  if (config_.position == PositionMode::kAbsolute) x = num::add(x, num::slice_rows(params("emb.position"), 0, n));
  x = norm(params, x, "emb.ln");

  static const AssociationMap kNoMatches;
  const AssociationMap& assoc = input.association ? *input.association : kNoMatches;
  if (config_.integration != IntegrationMode::kOff && !assoc.matches.empty()) {
    std::vector<NgramId> ids;
    ids.reserve(assoc.matches.size());
    for (const auto& m : assoc.matches) ids.push_back(m.ngram_id);
    r.ngram_states = ngram_encoder_forward(params, ids, options, options.trace ? &r.ngram_attention : nullptr);
  }

  AttentionOptions opts;
  opts.heads = config_.heads;
  opts.scale_scores = config_.scale_scores;
  opts.dropout = options.training ? config_.dropout : 0.0;
  opts.rng = options.rng;
  opts.max_rel_dist = config_.max_rel_dist;
  opts.rel_table = &rel_table_;
  for (std::size_t l = 0; l < config_.char_layers; ++l) {
    const auto prefix = layer_name("char", l);
    AttentionTrace* t = nullptr;
    if (options.trace) t = &r.char_attention.emplace_back();
    const Var a = attention(x, char_attention_weights(params, l), input.attention_mask, opts, t);
    x = norm(params, num::add(x, a), prefix + ".ln1");
    std::optional<Var> mu;
    if (!r.ngram_states.empty()) mu = r.ngram_states[std::min(l, r.ngram_states.size() - 1)];
    x = integrate(x, mu, assoc, config_.integration);
    x = feed_forward(params, x, prefix, options, config_.dropout);
  }
  r.sequence = x;

  const Var t = norm(params, num::gelu(num::add_row(num::matmul(x, params("mlm.w")), params("mlm.b"))), "mlm.ln");
  r.mlm_logits = num::add_row(num::matmul_nt(t, params("emb.char")), params("mlm.bias"));
  r.pooled = num::tanh(num::add_row(num::matmul(num::slice_rows(x, 0, 1), params("pool.w")), params("pool.b")));
  r.nsp_logits = num::add_row(num::matmul(r.pooled, params("nsp.w")), params("nsp.b"));
  (void)tape;
  return r;
}

Var Encoder::task_head_forward(ParamBinding& params, const ForwardResult& states) const {
  if (config_.task == TaskKind::kNone) throw ConfigError("encoder has no task head");
  const Var w = params("head.w");
  const std::size_t expected = config_.task == TaskKind::kSpan ? 2 : config_.task_labels;
  if (w.value().cols() != expected)
    throw ConfigError("task head has " + std::to_string(w.value().cols()) + " outputs, config declares " +
                      std::to_string(expected));
  const Var source = config_.task == TaskKind::kClassify ? states.pooled : states.sequence;
  return num::add_row(num::matmul(source, w), params("head.b"));
}

PretrainLoss pretrain_loss(const ForwardResult& result, const TrainingInstance& instance) {
  const std::size_t n = result.mlm_logits.value().rows();
  std::vector<std::int32_t> targets(n, 0);
  std::vector<std::uint8_t> mask(n, 0);
  for (const auto& rec : instance.mask_records) {
    if (rec.position >= n) throw num::NumericError("mask record outside the sequence");
    targets[rec.position] = rec.original_id;
    mask[rec.position] = 1;
  }
  const std::int32_t nsp_target = instance.nsp_label ? 1 : 0;
  const std::uint8_t one = 1;
  PretrainLoss loss;
  loss.mlm = num::cross_entropy(result.mlm_logits, targets, mask);
  loss.nsp = num::cross_entropy(result.nsp_logits, std::span<const std::int32_t>(&nsp_target, 1),
                                std::span<const std::uint8_t>(&one, 1));
  loss.total = num::add(loss.mlm, loss.nsp);
  return loss;
}

std::pair<std::size_t, std::size_t> best_span(const Array& logits, std::span<const std::uint8_t> allowed,
                                              std::size_t max_span) {
  const std::size_t n = logits.rows();
  if (logits.cols() != 2) throw num::NumericError("span logits need 2 columns");
  std::pair<std::size_t, std::size_t> best{0, 0};
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < n; ++s) {
    if (!allowed.empty() && !allowed[s]) continue;
    for (std::size_t e = s; e < n && e - s < max_span; ++e) {
      if (!allowed.empty() && !allowed[e]) continue;
      const double score = logits.at(s, 0) + logits.at(e, 1);
      if (score > best_score) {
        best_score = score;
        best = {s, e};
      }
    }
  }
  return best;
}

}  // namespace zengram
