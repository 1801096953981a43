#include "zengram/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace zengram {

void Schedule::validate() const {
  if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) throw TrainError("peak learning rate must be positive");
  if (warmup_steps == 0 || warmup_steps >= total_steps)
    throw TrainError("schedule needs 0 < warmup_steps < total_steps (got " + std::to_string(warmup_steps) + ", " +
                     std::to_string(total_steps) + ")");
}

double lr_at(std::uint64_t t, const Schedule& s) {
  if (t < s.warmup_steps) return s.peak_lr * static_cast<double>(t) / static_cast<double>(s.warmup_steps);
  if (t >= s.total_steps) return 0.0;
  return s.peak_lr * static_cast<double>(s.total_steps - t) / static_cast<double>(s.total_steps - s.warmup_steps);
}

bool applies_weight_decay(const std::string& name) {
  auto ends = [&](const char* suffix) {
    const std::string s(suffix);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  if (name.find("ln") != std::string::npos && (ends(".g") || ends(".b"))) return false;
  return !(ends(".b") || ends(".b1") || ends(".b2") || ends(".bo") || ends(".bias") || ends(".u") || ends(".v"));
}

void adam_step(ParamStore& params, std::span<const num::Array> grads, OptimState& state, const Schedule& schedule,
               const AdamConfig& adam, const std::vector<bool>* trainable) {
  if (grads.size() != params.size()) throw TrainError("gradient count does not match parameter count");
  if (state.empty()) state = OptimState::zeros(params);
  if (state.m.size() != params.size()) throw TrainError("optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].size()) continue;
    if (grads[i].shape() != params.at(i).shape())
      throw TrainError("gradient shape mismatch for " + params.name(i));
    if (!grads[i].all_finite()) throw TrainError("non-finite gradient for parameter " + params.name(i));
  }
  const std::uint64_t t = state.step + 1;
  const double lr = lr_at(t, schedule);
  const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (trainable && !(*trainable)[i]) continue;
    auto p = params.at(i).data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    const bool has_grad = grads[i].size() != 0;
    const double wd = applies_weight_decay(params.name(i)) ? adam.weight_decay : 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = has_grad ? grads[i][k] : 0.0;
      m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * g;
      v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * g * g;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= lr * (mhat / (std::sqrt(vhat) + adam.eps) + wd * p[k]);
    }
  }
  state.step = t;
}

EpochSampler::EpochSampler(std::uint64_t seed, std::size_t n) : seed_(seed), n_(n) {
  if (n == 0) throw TrainError("no training examples");
}

std::size_t EpochSampler::at(std::uint64_t k) {
  const std::uint64_t epoch = k / n_;
  if (epoch != epoch_) {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng = Rng::derive(seed_, epoch, 0x5a3);
    rng.shuffle(std::span<std::size_t>(order_));
    epoch_ = epoch;
  }
  return order_[k % n_];
}

double batch_gradients(const ParamStore& params, std::span<const std::size_t> batch, const ExampleLoss& loss,
                       std::uint64_t seed, std::uint64_t step, std::vector<num::Array>& grads) {
  grads.assign(params.size(), num::Array());
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    num::Tape tape;
    ParamBinding bind(tape, params);
    Rng rng = Rng::derive(seed, step, b + 1);
    const num::Var l = loss(bind, batch[b], rng);
    total += l.value()[0];
    tape.backward(l);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto leaf = bind.bound(i);
      if (!leaf) continue;
      const num::Array& g = tape.grad(*leaf);
      if (!g.size()) continue;
      if (!grads[i].size()) grads[i] = num::Array(params.at(i).shape());
      for (std::size_t k = 0; k < g.size(); ++k) grads[i][k] += g[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& g : grads)
    for (auto& x : g.data()) x *= inv;
  return total * inv;
}

std::string PretrainOptions::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "peak_lr = " << schedule.peak_lr << "\n"
      << "warmup_steps = " << schedule.warmup_steps << "\n"
      << "total_steps = " << schedule.total_steps << "\n"
      << "beta1 = " << adam.beta1 << "\n"
      << "beta2 = " << adam.beta2 << "\n"
      << "adam_eps = " << adam.eps << "\n"
      << "weight_decay = " << adam.weight_decay << "\n"
      << "batch_size = " << batch_size << "\n"
      << "seed = " << seed << "\n"
      << "log_every = " << log_every << "\n";
  return out.str();
}

std::string format_metrics_row(const MetricsRow& row) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%llu\t%.6e\t%.6f\t%.4f", static_cast<unsigned long long>(row.step), row.lr,
                row.mlm_loss, row.nsp_acc);
  return buf;
}

PretrainEval evaluate_pretrain(const Checkpoint& model, std::span<const TrainingInstance> instances) {
  const Encoder encoder(model.config);
  PretrainEval e;
  std::size_t with_masks = 0, hits = 0;
  for (const auto& inst : instances) {
    const auto trimmed = inst.trimmed();
    num::Tape tape;
    ParamBinding bind(tape, model.params);
    const auto out = encoder.forward(bind, EncoderInput::from(trimmed), {});
    const auto l = pretrain_loss(out, trimmed);
    if (!trimmed.mask_records.empty()) {
      e.mlm_loss += l.mlm.value()[0];
      ++with_masks;
    }
    const auto& nsp = out.nsp_logits.value();
    hits += (nsp[1] > nsp[0]) == trimmed.nsp_label;
  }
  if (with_masks) e.mlm_loss /= static_cast<double>(with_masks);
  if (!instances.empty()) e.nsp_acc = static_cast<double>(hits) / static_cast<double>(instances.size());
  return e;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt-%06llu.bin", static_cast<unsigned long long>(step));
  return dir / buf;
}

Checkpoint new_pretrain_checkpoint(EncoderConfig config, const Vocab& vocab, const NgramLexicon& lexicon,
                                   std::uint64_t seed) {
  config.vocab_size = vocab.size();
  config.ngram_vocab_size = lexicon.size();
  Checkpoint c;
  c.config = config;
  Rng rng = Rng::derive(seed, 0x1a17);
  c.params = init_params(config, rng);
  std::ostringstream v, l;
  vocab.write(v);
  lexicon.write(l);
  c.set_asset("vocab", v.str());
  c.set_asset("lexicon", l.str());
  return c;
}

namespace {

std::string instance_fingerprint(std::size_t n) { return "instances = " + std::to_string(n) + "\n"; }

// Keeps rows up to `step` from an earlier run's log.
std::vector<std::string> previous_rows(const std::filesystem::path& path, std::uint64_t step) {
  std::vector<std::string> rows;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find('\t'))) <= step) rows.push_back(line);
  }
  return rows;
}

}  // namespace

PretrainResult pretrain(std::span<const TrainingInstance> instances, Checkpoint start, const PretrainOptions& options,
                        const std::function<void(const MetricsRow&)>& on_log) {
  options.schedule.validate();
  if (options.batch_size == 0) throw TrainError("batch_size must be positive");
  if (options.log_every == 0) throw TrainError("log_every must be positive");
  if (instances.empty()) throw TrainError("no pretraining instances");
  const std::string settings = options.to_text() + instance_fingerprint(instances.size());
  if (start.step > 0) {
    const auto* prev = start.asset("train");
    if (!prev || *prev != settings)
      throw TrainError("cannot resume: training settings differ from the checkpoint's");
  }
  start.set_asset("train", settings);
  const std::uint64_t stop = options.stop_step ? options.stop_step : options.schedule.total_steps;
  if (stop > options.schedule.total_steps) throw TrainError("stop step is beyond the schedule");

  const Encoder encoder(start.config);
  for (const auto& inst : instances)
    for (auto id : inst.input_ids)
      if (id < 0 || static_cast<std::size_t>(id) >= start.config.vocab_size)
        throw TrainError("instance token id outside the model vocabulary");
  std::vector<TrainingInstance> data;
  data.reserve(instances.size());
  for (const auto& inst : instances) data.push_back(inst.trimmed());

  const bool files = !options.out_dir.empty();
  std::ofstream log_file;
  if (files) {
    std::filesystem::create_directories(options.out_dir);
    const auto path = options.out_dir / "metrics.tsv";
    const auto kept = previous_rows(path, start.step);
    log_file.open(path, std::ios::binary | std::ios::trunc);
    if (!log_file) throw TrainError("cannot write " + path.string());
    for (const auto& r : kept) log_file << r << '\n';
  }

  PretrainResult result;
  EpochSampler sampler(options.seed, data.size());
  std::vector<num::Array> grads;
  std::vector<std::size_t> batch(options.batch_size);
  double mlm_sum = 0.0;
  std::size_t nsp_hits = 0, seen = 0, steps_in_row = 0;

  const ExampleLoss loss = [&](ParamBinding& bind, std::size_t idx, Rng& rng) {
    ForwardOptions fo;
    fo.training = true;
    fo.rng = &rng;
    const auto& inst = data[idx];
    const auto out = encoder.forward(bind, EncoderInput::from(inst), fo);
    const auto l = pretrain_loss(out, inst);
    mlm_sum += l.mlm.value()[0] / static_cast<double>(options.batch_size);
    const auto& nsp = out.nsp_logits.value();
    nsp_hits += (nsp[1] > nsp[0]) == inst.nsp_label;
    ++seen;
    return l.total;
  };

  while (start.step < stop) {
    const std::uint64_t t = start.step;
    for (std::size_t b = 0; b < options.batch_size; ++b) batch[b] = sampler.at(t * options.batch_size + b);
    batch_gradients(start.params, batch, loss, options.seed, t, grads);
    adam_step(start.params, grads, start.optim, options.schedule, options.adam);
    start.step = start.optim.step;
    ++steps_in_row;
    const bool last = start.step == stop;
    if (start.step % options.log_every == 0 || last) {
      MetricsRow row{start.step, lr_at(start.step, options.schedule), mlm_sum / static_cast<double>(steps_in_row),
                     static_cast<double>(nsp_hits) / static_cast<double>(seen)};
      result.log.push_back(row);
      if (files) log_file << format_metrics_row(row) << '\n' << std::flush;
      if (on_log) on_log(row);
      mlm_sum = 0.0;
      nsp_hits = seen = steps_in_row = 0;
    }
    if (files && (last || (options.checkpoint_every && start.step % options.checkpoint_every == 0)))
      save_checkpoint(checkpoint_path(options.out_dir, start.step), start);
  }
  result.checkpoint = std::move(start);
  return result;
}

}  // namespace zengram
