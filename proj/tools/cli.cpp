#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "zengram/analysis.hpp"
#include "zengram/checkpoint.hpp"
#include "zengram/corpus.hpp"
#include "zengram/encoder.hpp"
#include "zengram/finetune.hpp"
#include "zengram/lexicon.hpp"
#include "zengram/masking.hpp"
#include "zengram/matcher.hpp"
#include "zengram/train.hpp"
#include "zengram/utf8.hpp"

namespace zengram::cli {

namespace fs = std::filesystem;

namespace {

struct KeyInfo {
  const char* key;
  const char* flag;
  const char* help;
};

// Every setting a command can read.
const std::vector<KeyInfo>& key_table() {
  static const std::vector<KeyInfo> table = {
      {"corpus", "--corpus", "corpus file: one sentence per line, blank line between documents"},
      {"lexicon", "--lexicon", "lexicon file"},
      {"instances", "--instances", "directory written by make-instances"},
      {"out", "--out", "output path"},
      {"ckpt", "--ckpt", "checkpoint file"},
      {"resume", "--resume", "checkpoint to resume pretraining from"},
      {"n_max", "--n-max", "longest n-gram length"},
      {"pmi_thr", "--pmi-thr", "minimum PMI"},
      {"freq_thr", "--freq-thr", "minimum n-gram frequency"},
      {"min_freq", "--min-freq", "minimum character frequency for the vocabulary"},
      {"preset", "--preset", "model size: tiny, base or large"},
      {"integration_mode", "--integration", "n-gram integration: weighted, unweighted or off"},
      {"position_mode", "--position-mode", "relative or absolute"},
      {"segmenter", "--segmenter", "masking units: maxmatch or char"},
      {"dropout", "--dropout", "dropout rate"},
      {"scale_scores", "--scale-scores", "divide attention scores by sqrt(head dim)"},
      {"max_len", "--max-len", "sequence length"},
      {"max_matches", "--max-matches", "n-grams kept per sequence"},
      {"mask_ratio", "--mask-ratio", "fraction of characters to mask"},
      {"p_next", "--p-next", "probability of a true next-sentence pair"},
      {"seed", "--seed", "random seed"},
      {"steps", "--steps", "total schedule steps"},
      {"warmup_steps", "--warmup-steps", "linear warmup steps"},
      {"peak_lr", "--peak-lr", "peak learning rate"},
      {"batch_size", "--batch-size", "examples per step"},
      {"stop_step", "--stop-step", "stop early at this step (0: run the whole schedule)"},
      {"log_every", "--log-every", "steps per metrics row"},
      {"checkpoint_every", "--checkpoint-every", "steps between checkpoints (0: final only)"},
      {"task", "--task", "classify, label or span"},
      {"train", "--train", "training set"},
      {"dev", "--dev", "development set"},
      {"data", "--data", "gold dataset"},
      {"pred", "--pred", "prediction file to score instead of running a model"},
      {"freeze_encoder", "--freeze-encoder", "train the task head only"},
      {"zero_init_head", "--zero-init-head", "start the task head at zero"},
      {"eval_every", "--eval-every", "steps between metric rows (0: first and last only)"},
      {"ngram", "--ngram", "query n-gram"},
      {"k", "--k", "number of neighbors"},
      {"min_occ", "--min-occ", "minimum occurrences for an n-gram to be indexed"},
      {"text", "--text", "input sentence"},
      {"layer", "--layer", "n-gram encoder layer"},
      {"svg", "--svg", "write a heat strip plot here"},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& info : key_table()) k.emplace_back(info.key);
    return k;
  }();
  return keys;
}

bool RunConfig::is_known(const std::string& key) {
  const auto& k = known_keys();
  return std::find(k.begin(), k.end(), key) != k.end();
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw UsageError(where + ": expected 'key = value'");
    const auto key = trim(t.substr(0, eq));
    if (!is_known(key)) throw UsageError(where + ": unknown key '" + key + "'");
    c.set(key, trim(t.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

void RunConfig::set(const std::string& key, std::string value) {
  if (!is_known(key)) throw UsageError("unknown key '" + key + "'");
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = std::move(value);
      return;
    }
  entries_.emplace_back(key, std::move(value));
}

bool RunConfig::has(const std::string& key) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == key; });
}

void RunConfig::merge(const RunConfig& over) {
  for (const auto& [k, v] : over.entries_) set(k, v);
}

RunConfig RunConfig::only(const std::vector<std::string>& keys) const {
  RunConfig c;
  for (const auto& key : keys)
    if (has(key)) c.set(key, str(key));
  return c;
}

const std::string& RunConfig::str(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  throw UsageError("missing setting '" + key + "'");
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const auto& s = str(key);
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw UsageError("setting '" + key + "' must be a non-negative integer, got '" + s + "'");
  return v;
}

double RunConfig::real(const std::string& key) const {
  const auto& s = str(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw UsageError("setting '" + key + "' must be a number, got '" + s + "'");
}

bool RunConfig::flag(const std::string& key) const {
  const auto s = lower(str(key));
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw UsageError("setting '" + key + "' must be true or false, got '" + str(key) + "'");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

namespace {

using Defaults = std::vector<std::pair<std::string, std::string>>;

struct Command {
  const char* name;
  const char* help;
  Defaults defaults;
  std::vector<std::string> required;
  int (*body)(RunConfig& c, std::ostream& out, std::ostream& err);
};

void require_file(const RunConfig& c, const std::string& key) {
  const auto& p = c.str(key);
  if (!fs::is_regular_file(p)) throw UsageError(key + " file not found: " + p);
}

void log_config(const RunConfig& c, std::ostream& err) { err << "# resolved configuration\n" << c.to_text(); }

std::u32string utf8_arg(const RunConfig& c, const std::string& key) {
  try {
    return decode_utf8(c.str(key));
  } catch (const Utf8Error& e) {
    throw UsageError("setting '" + key + "' is not valid UTF-8");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw std::runtime_error("cannot write " + path.string());
}

TaskKind task_of(const RunConfig& c) {
  try {
    const auto kind = parse_task_kind(c.str("task"));
    if (kind == TaskKind::kNone) throw UsageError("task must be classify, label or span");
    return kind;
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

// ---- build-lexicon ----

int cmd_build_lexicon(RunConfig& c, std::ostream& out, std::ostream& err) {
  require_file(c, "corpus");
  const auto n_max = c.u64("n_max");
  if (n_max < NgramLexicon::kMinLen || n_max > NgramLexicon::kMaxLen)
    throw UsageError("n_max must be in [2, 8]");
  const double pmi_thr = c.real("pmi_thr");
  const auto freq_thr = c.u64("freq_thr");
  log_config(c, err);

  const auto sentences = load_corpus(c.str("corpus"));
  const auto counts = count_ngrams(sentences, n_max);
  const auto lexicon = extract_lexicon(counts, pmi_thr, freq_thr);
  lexicon.save(c.str("out"));
  out << lexicon.size() << " entries (n 2.." << n_max << ", pmi >= " << c.str("pmi_thr")
      << ", freq >= " << freq_thr << ") from " << sentences.size() << " sentences, " << counts.total_chars
      << " characters -> " << c.str("out") << "\n";
  if (lexicon.empty()) err << "warning: 0 entries; the thresholds reject every n-gram\n";
  return 0;
}

// ---- instance building shared by make-instances and pretrain ----

struct Prepared {
  std::shared_ptr<const Vocab> vocab;
  std::shared_ptr<const NgramLexicon> lexicon;
  std::vector<TrainingInstance> instances;
};

std::shared_ptr<const Segmenter> segmenter_for(const RunConfig& c, const NgramLexicon& lexicon) {
  const auto name = lower(c.str("segmenter"));
  std::shared_ptr<const Matcher> matcher;
  if (!lexicon.empty()) matcher = std::make_shared<const Matcher>(lexicon);
  try {
    return make_segmenter(name, matcher);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

InstanceOptions instance_options(const RunConfig& c) {
  InstanceOptions o;
  o.max_len = c.u64("max_len");
  o.max_matches = c.u64("max_matches");
  o.mask_ratio = c.real("mask_ratio");
  if (o.max_len < 3) throw UsageError("max_len must be at least 3");
  if (!(o.mask_ratio >= 0.0 && o.mask_ratio <= 1.0)) throw UsageError("mask_ratio must be in [0, 1]");
  const double p = c.real("p_next");
  if (!(p >= 0.0 && p <= 1.0)) throw UsageError("p_next must be in [0, 1]");
  if (c.u64("min_freq") == 0) throw UsageError("min_freq must be at least 1");
  return o;
}

Prepared prepare_instances(const RunConfig& c, std::ostream& err) {
  Prepared p;
  const auto sentences = load_corpus(c.str("corpus"));
  p.lexicon = std::make_shared<const NgramLexicon>(NgramLexicon::load(c.str("lexicon")));
  p.vocab = std::make_shared<const Vocab>(build_char_vocab(sentences, c.u64("min_freq")));
  const auto seed = c.u64("seed");
  Rng pair_rng(Rng::derive(seed, 0x9a1));
  const auto pairs = make_sentence_pairs(sentences, pair_rng, c.real("p_next"));
  const InstanceBuilder builder(p.vocab, p.lexicon, segmenter_for(c, *p.lexicon), instance_options(c));
  p.instances = build_pretrain_instances(sentences, pairs, builder, seed);
  err << "# " << sentences.size() << " sentences, " << p.vocab->size() << " vocabulary entries, "
      << p.lexicon->size() << " lexicon entries, " << p.instances.size() << " instances\n";
  return p;
}

int cmd_make_instances(RunConfig& c, std::ostream& out, std::ostream& err) {
  require_file(c, "corpus");
  require_file(c, "lexicon");
  const auto options = instance_options(c);
  segmenter_for(c, NgramLexicon{});
  log_config(c, err);
  const auto p = prepare_instances(c, err);
  const fs::path dir = c.str("out");
  fs::create_directories(dir);
  write_instances(dir / "instances.bin", p.instances, options.max_len, options.max_matches);
  p.vocab->save(dir / "vocab.txt");
  p.lexicon->save(dir / "lexicon.txt");
  write_text(dir / "run.conf", c.to_text());
  out << p.instances.size() << " instances -> " << (dir / "instances.bin").string() << "\n";
  return 0;
}

// ---- pretrain ----

EncoderConfig model_config(const RunConfig& c) {
  try {
    auto config = EncoderConfig::preset(lower(c.str("preset")));
    config.integration = parse_integration_mode(c.str("integration_mode"));
    config.position = parse_position_mode(c.str("position_mode"));
    config.dropout = c.real("dropout");
    config.scale_scores = c.flag("scale_scores");
    config.max_len = c.u64("max_len");
    return config;
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

int cmd_pretrain(RunConfig& c, std::ostream& out, std::ostream& err) {
  const bool from_dir = !c.str("instances").empty();
  if (from_dir) {
    if (!fs::is_directory(c.str("instances"))) throw UsageError("instances directory not found: " + c.str("instances"));
  } else {
    if (c.str("corpus").empty() || c.str("lexicon").empty())
      throw UsageError("pretrain needs corpus and lexicon, or instances");
    require_file(c, "corpus");
    require_file(c, "lexicon");
    instance_options(c);
    segmenter_for(c, NgramLexicon{});
  }
  if (!c.str("resume").empty()) require_file(c, "resume");

  auto config = model_config(c);
  PretrainOptions options;
  options.schedule = {c.real("peak_lr"), c.u64("warmup_steps"), c.u64("steps")};
  options.batch_size = c.u64("batch_size");
  options.seed = c.u64("seed");
  options.stop_step = c.u64("stop_step");
  options.log_every = c.u64("log_every");
  options.checkpoint_every = c.u64("checkpoint_every");
  options.out_dir = c.str("out");
  try {
    options.schedule.validate();
  } catch (const TrainError& e) {
    throw UsageError(e.what());
  }
  if (options.batch_size == 0) throw UsageError("batch_size must be positive");
  if (options.log_every == 0) throw UsageError("log_every must be positive");
  if (options.stop_step > options.schedule.total_steps) throw UsageError("stop_step is beyond steps");
  {
    auto probe = config;
    probe.vocab_size = Vocab::kNumReserved + 1;
    try {
      probe.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  log_config(c, err);

  Prepared p;
  if (from_dir) {
    const fs::path dir = c.str("instances");
    p.vocab = std::make_shared<const Vocab>(Vocab::load(dir / "vocab.txt"));
    p.lexicon = std::make_shared<const NgramLexicon>(NgramLexicon::load(dir / "lexicon.txt"));
    p.instances = read_instances(dir / "instances.bin");
  } else {
    p = prepare_instances(c, err);
  }
  for (const auto& inst : p.instances)
    if (inst.input_ids.size() > config.max_len) throw UsageError("instances are longer than max_len");

  Checkpoint start;
  if (!c.str("resume").empty()) {
    start = load_checkpoint(c.str("resume"));
    auto expected = config;
    expected.vocab_size = start.config.vocab_size;
    expected.ngram_vocab_size = start.config.ngram_vocab_size;
    if (!(expected == start.config)) throw UsageError("cannot resume: model settings differ from the checkpoint's");
    if (!(start.vocab() == *p.vocab) || !(start.lexicon() == *p.lexicon))
      throw UsageError("cannot resume: vocabulary or lexicon differs from the checkpoint's");
  } else {
    start = new_pretrain_checkpoint(config, *p.vocab, *p.lexicon, options.seed);
  }
  fs::create_directories(options.out_dir);
  write_text(options.out_dir / "run.conf", c.to_text());

  out << "step\tlr\tmlm_loss\tnsp_acc\n";
  const auto result = pretrain(p.instances, std::move(start), options,
                               [&](const MetricsRow& row) { out << format_metrics_row(row) << "\n" << std::flush; });
  out << "checkpoint " << checkpoint_path(options.out_dir, result.checkpoint.step).string() << "\n";
  return 0;
}

// ---- finetune / eval ----

std::string metrics_inline(const Metrics& m) {
  std::string s;
  char buf[64];
  for (const auto& [k, v] : m) {
    std::snprintf(buf, sizeof buf, "%.4f", v);
    if (!s.empty()) s += ' ';
    s += k + "=" + buf;
  }
  return s;
}

int cmd_finetune(RunConfig& c, std::ostream& out, std::ostream& err) {
  require_file(c, "ckpt");
  require_file(c, "train");
  if (!c.str("dev").empty()) require_file(c, "dev");
  FinetuneOptions options;
  options.task = task_of(c);
  options.schedule = {c.real("peak_lr"), c.u64("warmup_steps"), c.u64("steps")};
  options.batch_size = c.u64("batch_size");
  options.seed = c.u64("seed");
  options.freeze_encoder = c.flag("freeze_encoder");
  options.zero_init_head = c.flag("zero_init_head");
  options.eval_every = c.u64("eval_every");
  options.dropout = c.real("dropout");
  try {
    options.schedule.validate();
  } catch (const TrainError& e) {
    throw UsageError(e.what());
  }
  if (options.batch_size == 0) throw UsageError("batch_size must be positive");
  if (!(options.dropout >= 0.0 && options.dropout < 1.0)) throw UsageError("dropout must be in [0, 1)");
  log_config(c, err);

  const auto model = load_checkpoint(c.str("ckpt"));
  const auto train = read_task_data(options.task, c.str("train"));
  std::optional<TaskData> dev;
  if (!c.str("dev").empty()) dev = read_task_data(options.task, c.str("dev"));
  const auto labels = collect_labels(train);
  if (dev) check_labels(*dev, labels, "dev set");

  const auto result = finetune(model, train, dev ? &*dev : nullptr, labels, options, [&](const HistoryRow& row) {
    out << "step " << row.step;
    if (row.step > 0) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", row.train_loss);
      out << "\tloss " << buf;
    }
    out << "\ttrain " << metrics_inline(row.train);
    if (!row.dev.empty()) out << "\tdev " << metrics_inline(row.dev);
    out << "\n" << std::flush;
  });
  save_checkpoint(c.str("out"), result.model);
  out << "checkpoint " << c.str("out") << "\n";
  return 0;
}

int cmd_eval(RunConfig& c, std::ostream& out, std::ostream& err) {
  require_file(c, "data");
  const bool scored_file = !c.str("pred").empty();
  if (scored_file) {
    require_file(c, "pred");
  } else {
    if (c.str("ckpt").empty()) throw UsageError("eval needs ckpt or pred");
    require_file(c, "ckpt");
  }
  log_config(c, err);

  Metrics metrics;
  if (scored_file) {
    const auto kind = task_of(c);
    metrics = score(read_task_data(kind, c.str("pred")), read_task_data(kind, c.str("data")));
  } else {
    const auto model = load_checkpoint(c.str("ckpt"));
    if (model.config.task == TaskKind::kNone) throw UsageError("checkpoint has no task head; run finetune first");
    if (task_of(c) != model.config.task)
      throw UsageError("task " + c.str("task") + " does not match the checkpoint's " + to_string(model.config.task));
    const auto gold = read_task_data(model.config.task, c.str("data"));
    const auto predicted = predict(model, gold);
    if (!c.str("out").empty()) write_task_data(predicted, c.str("out"));
    metrics = score(predicted, gold);
  }
  out << format_metrics(metrics);
  return 0;
}

// ---- inspection ----

int cmd_neighbors(RunConfig& c, std::ostream& out, std::ostream& err) {
  require_file(c, "ckpt");
  require_file(c, "corpus");
  const auto query = utf8_arg(c, "ngram");
  const auto k = c.u64("k");
  const auto min_occ = c.u64("min_occ");
  if (k == 0) throw UsageError("k must be positive");
  if (min_occ == 0) throw UsageError("min_occ must be positive");
  log_config(c, err);

  const auto model = load_checkpoint(c.str("ckpt"));
  const auto sentences = load_corpus(c.str("corpus"));
  const auto table = ngram_context_vectors(model, sentences, min_occ);
  const auto neighbors = nearest_neighbors(table, query, k, model.lexicon());
  const auto qi = static_cast<std::size_t>(table.index_of(query));
  out << "# neighbors of " << encode_utf8(query) << " by cosine similarity of first-layer n-gram vectors ("
      << table.occurrences[qi] << " occurrences, " << table.ngrams.size() << " n-grams indexed)\n";
  char buf[32];
  for (const auto& n : neighbors) {
    std::snprintf(buf, sizeof buf, "%.6f", n.similarity);
    out << encode_utf8(n.ngram) << "\t" << buf << "\n";
  }
  if (neighbors.size() < k)
    out << "# note: only " << neighbors.size() << " other n-grams are available (k = " << k << ")\n";
  return 0;
}

int cmd_attn_dump(RunConfig& c, std::ostream& out, std::ostream& err) {
  require_file(c, "ckpt");
  const auto text = utf8_arg(c, "text");
  const auto layer = c.u64("layer");
  log_config(c, err);
  const auto model = load_checkpoint(c.str("ckpt"));
  if (layer >= model.config.ngram_layers)
    throw UsageError("layer " + std::to_string(layer) + " is out of range; the n-gram encoder has " +
                     std::to_string(model.config.ngram_layers) + " layers");
  const auto dump = attention_dump(model, text, layer);
  out << format_attention_dump(dump);
  if (!c.str("svg").empty()) write_text(c.str("svg"), heat_strip_svg(dump));
  return 0;
}

const std::vector<Command>& commands() {
  static const std::vector<Command> list = {
      {"build-lexicon",
       "Extract a PMI-filtered n-gram lexicon from a corpus",
       {{"corpus", ""}, {"out", ""}, {"n_max", "8"}, {"pmi_thr", "3"}, {"freq_thr", "15"}},
       {"corpus", "out"},
       cmd_build_lexicon},
      {"make-instances",
       "Write masked pretraining instances, vocabulary and lexicon to a directory",
       {{"corpus", ""}, {"lexicon", ""}, {"out", ""}, {"segmenter", "maxmatch"}, {"min_freq", "1"},
        {"max_len", "64"}, {"max_matches", "128"}, {"mask_ratio", "0.15"}, {"p_next", "0.5"}, {"seed", "0"}},
       {"corpus", "lexicon", "out"},
       cmd_make_instances},
      {"pretrain",
       "Pretrain with masked language modeling and next sentence prediction",
       {{"corpus", ""}, {"lexicon", ""}, {"instances", ""}, {"out", ""}, {"resume", ""}, {"preset", "tiny"},
        {"integration_mode", "WEIGHTED"}, {"position_mode", "RELATIVE"}, {"segmenter", "maxmatch"},
        {"dropout", "0.1"}, {"scale_scores", "true"}, {"min_freq", "1"}, {"max_len", "64"},
        {"max_matches", "128"}, {"mask_ratio", "0.15"}, {"p_next", "0.5"}, {"seed", "0"}, {"steps", "2000"},
        {"warmup_steps", "100"}, {"peak_lr", "1e-3"}, {"batch_size", "16"}, {"stop_step", "0"},
        {"log_every", "10"}, {"checkpoint_every", "0"}},
       {"out"},
       cmd_pretrain},
      {"finetune",
       "Train a task head on top of a pretrained checkpoint",
       {{"ckpt", ""}, {"task", "classify"}, {"train", ""}, {"dev", ""}, {"out", ""}, {"steps", "200"},
        {"warmup_steps", "20"}, {"peak_lr", "5e-4"}, {"batch_size", "16"}, {"seed", "0"}, {"dropout", "0.1"},
        {"freeze_encoder", "false"}, {"zero_init_head", "false"}, {"eval_every", "20"}},
       {"ckpt", "train", "out"},
       cmd_finetune},
      {"eval",
       "Score a fine-tuned checkpoint or a prediction file against gold data",
       {{"ckpt", ""}, {"task", "classify"}, {"data", ""}, {"pred", ""}, {"out", ""}},
       {"data"},
       cmd_eval},
      {"neighbors",
       "Nearest n-grams by context-averaged first-layer representation",
       {{"ckpt", ""}, {"corpus", ""}, {"ngram", ""}, {"k", "10"}, {"min_occ", "2"}},
       {"ckpt", "corpus", "ngram"},
       cmd_neighbors},
      {"attn-dump",
       "Attention received by each matched n-gram, and per-character integration weights",
       {{"ckpt", ""}, {"text", ""}, {"layer", "0"}, {"svg", ""}},
       {"ckpt", "text"},
       cmd_attn_dump},
  };
  return list;
}

const KeyInfo& info_for(const std::string& key) {
  for (const auto& info : key_table())
    if (key == info.key) return info;
  throw std::logic_error("no key " + key);
}

int run_command(const Command& cmd, const std::string& config_path, const RunConfig& flags, std::ostream& out,
                std::ostream& err) {
  std::vector<std::string> keys;
  RunConfig c;
  for (const auto& [k, v] : cmd.defaults) {
    keys.push_back(k);
    c.set(k, v);
  }
  if (!config_path.empty()) c.merge(RunConfig::load(config_path).only(keys));
  c.merge(flags);
  for (const auto& key : cmd.required)
    if (c.str(key).empty())
      throw UsageError(std::string(cmd.name) + ": missing required setting '" + key + "' (" + info_for(key).flag + ")");
  if (c.has("integration_mode")) c.set("integration_mode", to_string(parse_integration_mode(c.str("integration_mode"))));
  if (c.has("position_mode")) c.set("position_mode", to_string(parse_position_mode(c.str("position_mode"))));
  return cmd.body(c, out, err);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"n-gram enhanced character encoder: lexicon, pretraining, fine-tuning and inspection", "zengram"};
  app.require_subcommand(1);
  const auto& cmds = commands();
  std::vector<std::map<std::string, std::string>> values(cmds.size());
  std::vector<std::string> config_paths(cmds.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    auto* sub = app.add_subcommand(cmds[i].name, cmds[i].help);
    sub->add_option("--config", config_paths[i], "flat 'key = value' settings file");
    for (const auto& [key, def] : cmds[i].defaults) {
      const auto& info = info_for(key);
      std::string help = info.help;
      if (!def.empty()) help += " [" + def + "]";
      sub->add_option(info.flag, values[i][key], help);
    }
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  for (std::size_t i = 0; i < cmds.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    try {
      RunConfig flags;
      for (const auto& [key, def] : cmds[i].defaults)
        if (subs[i]->count(info_for(key).flag) > 0) flags.set(key, values[i][key]);
      return run_command(cmds[i], config_paths[i], flags, out, err);
    } catch (const UsageError& e) {
      err << "error: " << e.what() << "\n";
      return 2;
    } catch (const ConfigError& e) {
      err << "error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 2;
}

}  // namespace zengram::cli
