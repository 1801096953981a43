#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "zengram/checkpoint.hpp"
#include "zengram/encoder.hpp"
#include "zengram/masking.hpp"

namespace zengram {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Linear warmup to peak_lr, then linear decay to 0 at total_steps.
struct Schedule {
  double peak_lr = 1e-4;
  std::uint64_t warmup_steps = 36000;
  std::uint64_t total_steps = 1000000;

  void validate() const;
  bool operator==(const Schedule&) const = default;
};

double lr_at(std::uint64_t t, const Schedule& schedule);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  bool operator==(const AdamConfig&) const = default;
};

/// False for biases, layernorm parameters and the relative-attention u, v.
bool applies_weight_decay(const std::string& name);

/// One bias-corrected Adam update with decoupled weight decay at lr_at(t + 1),
/// after which state.step is t + 1. Empty gradient arrays count as zero;
/// parameters with trainable[i] == false are left alone.
void adam_step(ParamStore& params, std::span<const num::Array> grads, OptimState& state, const Schedule& schedule,
               const AdamConfig& adam, const std::vector<bool>* trainable = nullptr);

/// Visits 0..n-1 in a fresh seeded permutation per epoch; the k-th draw
/// depends only on (seed, n, k).
class EpochSampler {
 public:
  EpochSampler(std::uint64_t seed, std::size_t n);
  std::size_t at(std::uint64_t k);

 private:
  std::uint64_t seed_;
  std::size_t n_;
  std::uint64_t epoch_ = ~std::uint64_t{0};
  std::vector<std::size_t> order_;
};

/// Loss of one example; `rng` drives dropout.
using ExampleLoss = std::function<num::Var(ParamBinding& params, std::size_t example, Rng& rng)>;

/// Sums per-example gradients in batch order and divides by the batch size.
/// Returns the mean loss.
double batch_gradients(const ParamStore& params, std::span<const std::size_t> batch, const ExampleLoss& loss,
                       std::uint64_t seed, std::uint64_t step, std::vector<num::Array>& grads);

struct PretrainOptions {
  Schedule schedule{1e-4, 200, 2000};
  AdamConfig adam;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  /// Stop after this step; 0 means schedule.total_steps.
  std::uint64_t stop_step = 0;
  std::size_t log_every = 10;
  /// Also write a checkpoint every this many steps; 0 writes only the last.
  std::size_t checkpoint_every = 0;
  /// Checkpoints and metrics.tsv go here; empty writes nothing.
  std::filesystem::path out_dir;

  /// Settings a resumed run must share with the run that wrote the checkpoint.
  std::string to_text() const;
};

struct MetricsRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  double mlm_loss = 0.0;  // mean over steps since the previous row
  double nsp_acc = 0.0;   // fraction of instances since the previous row
};

/// "step\tlr\tmlm_loss\tnsp_acc" with fixed formatting.
std::string format_metrics_row(const MetricsRow& row);

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsRow> log;
};

/// Fresh model with the vocabulary and lexicon attached.
Checkpoint new_pretrain_checkpoint(EncoderConfig config, const Vocab& vocab, const NgramLexicon& lexicon,
                                   std::uint64_t seed);

/// MLM + NSP training from `start` (fresh or resumed) up to the stop step.
/// A resumed run must use the same model config, options and instance count.
PretrainResult pretrain(std::span<const TrainingInstance> instances, Checkpoint start, const PretrainOptions& options,
                        const std::function<void(const MetricsRow&)>& on_log = {});

struct PretrainEval {
  double mlm_loss = 0.0;  // mean over instances with at least one masked position
  double nsp_acc = 0.0;
};

/// Inference-mode losses of `model` on fixed instances.
PretrainEval evaluate_pretrain(const Checkpoint& model, std::span<const TrainingInstance> instances);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint64_t step);

}  // namespace zengram
