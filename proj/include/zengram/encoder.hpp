#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "zengram/corpus.hpp"
#include "zengram/masking.hpp"
#include "zengram/matcher.hpp"
#include "zengram/numerics.hpp"
#include "zengram/params.hpp"
#include "zengram/rng.hpp"

namespace zengram {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How n-gram representations enter the character stream.
enum class IntegrationMode { kWeighted, kUnweighted, kOff };
enum class PositionMode { kRelative, kAbsolute };

std::string to_string(IntegrationMode mode);
std::string to_string(PositionMode mode);
IntegrationMode parse_integration_mode(const std::string& text);
PositionMode parse_position_mode(const std::string& text);

enum class TaskKind { kNone, kClassify, kLabel, kSpan };
std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& text);

struct EncoderConfig {
  std::size_t char_layers = 2;
  std::size_t ngram_layers = 2;
  std::size_t heads = 2;
  std::size_t hidden = 32;
  std::size_t ffn_dim = 128;
  std::size_t vocab_size = 0;
  std::size_t ngram_vocab_size = 0;
  std::size_t max_len = 64;
  std::size_t max_rel_dist = 128;
  IntegrationMode integration = IntegrationMode::kWeighted;
  PositionMode position = PositionMode::kRelative;
  double dropout = 0.1;
  /// Divide attention scores by sqrt(head_dim).
  bool scale_scores = true;
  TaskKind task = TaskKind::kNone;
  std::size_t task_labels = 0;

  std::size_t head_dim() const { return hidden / heads; }
  void validate() const;

  /// "tiny" (2, 2, 2, 32), "base" (12, 6, 12, 768) or "large" (24, 6, 16, 1024)
  /// as (char layers, n-gram layers, heads, hidden).
  static EncoderConfig preset(const std::string& name);

  /// "key = value" lines in a fixed key order.
  std::string to_text() const;
  static EncoderConfig from_text(const std::string& text);

  bool operator==(const EncoderConfig&) const = default;
};

/// Fresh parameters: N(0, 0.02) weights and embeddings, unit layernorm
/// gains, zero biases. Includes the task head when config.task is set.
ParamStore init_params(const EncoderConfig& config, Rng& rng);
/// Adds (or re-initializes) the task head parameters for config.task.
void init_task_head(ParamStore& params, const EncoderConfig& config, Rng& rng);
bool is_task_head_param(const std::string& name);

/// Sinusoidal relative position table with 2*max_rel_dist + 1 rows; row
/// (delta + max_rel_dist) holds sin(delta / 10000^(2t/d)) at column 2t and
/// the matching cos at 2t+1.
num::Array rel_pos_table(std::size_t max_rel_dist, std::size_t dim);

/// Table rows for offsets -(seq-1)..(seq-1), clamped to +-max_rel_dist.
num::Array rel_pos_window(const num::Array& table, std::size_t max_rel_dist, std::size_t seq);

struct AttentionWeights {
  num::Var wq, wk, wv, wo, bo;
  /// Relative-position terms; absent for content-only attention.
  std::optional<num::Var> wr, u, v;
};

struct AttentionTrace {
  std::vector<num::Var> scores;  // per head, unscaled relative scores
  std::vector<num::Var> probs;   // per head, after softmax
};

struct AttentionOptions {
  std::size_t heads = 1;
  bool scale_scores = true;
  double dropout = 0.0;
  Rng* rng = nullptr;
  std::size_t max_rel_dist = 128;
  /// Relative table (rel_pos_table) when weights carry wr/u/v.
  const num::Array* rel_table = nullptr;
};

/// Multi-head attention. With wr/u/v present the score of query i and key j is
/// (Q_i + u) . K_j + (Q_i + v) . (W_r R_{i-j}); otherwise Q_i . K_j. Keys with
/// key_mask == 0 get zero weight. Returns concat(heads) W_o + b_o.
num::Var attention(num::Var input, const AttentionWeights& w, std::span<const std::uint8_t> key_mask,
                   const AttentionOptions& options, AttentionTrace* trace = nullptr);

/// nu + sum_k p_{i,k} mu_k (weighted), nu + sum_k mu_k (unweighted), or nu.
num::Var integrate(num::Var nu, std::optional<num::Var> mu, const AssociationMap& association,
                   IntegrationMode mode);

/// Unpadded encoder input.
struct EncoderInput {
  std::span<const TokenId> ids;
  std::span<const std::uint8_t> segments;
  std::span<const std::uint8_t> attention_mask;
  const AssociationMap* association = nullptr;

  static EncoderInput from(const TrainingInstance& instance);
};

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout
  bool trace = false;
};

struct ForwardResult {
  num::Var sequence;     // (seq, hidden) final character states
  num::Var pooled;       // (1, hidden) tanh-pooled [CLS]
  num::Var mlm_logits;   // (seq, vocab)
  num::Var nsp_logits;   // (1, 2)
  std::vector<num::Var> ngram_states;           // per n-gram layer, (matches, hidden)
  std::vector<AttentionTrace> char_attention;   // filled when tracing
  std::vector<AttentionTrace> ngram_attention;  // filled when tracing
};

/// The character encoder with relative (or absolute) positions and
/// layer-wise n-gram integration, plus MLM/NSP/task heads.
class Encoder {
 public:
  explicit Encoder(EncoderConfig config);

  const EncoderConfig& config() const { return config_; }

  ForwardResult forward(ParamBinding& params, const EncoderInput& input, const ForwardOptions& options) const;

  /// Outputs of every n-gram encoder layer; empty when there are no matches.
  std::vector<num::Var> ngram_encoder_forward(ParamBinding& params, std::span<const NgramId> ngram_ids,
                                              const ForwardOptions& options,
                                              std::vector<AttentionTrace>* trace = nullptr) const;

  /// Task head logits: CLASSIFY (1, n) from the pooled vector, LABEL (seq, n)
  /// per position, SPAN (seq, 2) with start and end columns.
  num::Var task_head_forward(ParamBinding& params, const ForwardResult& states) const;

 private:
  AttentionWeights char_attention_weights(ParamBinding& params, std::size_t layer) const;
  AttentionWeights ngram_attention_weights(ParamBinding& params, std::size_t layer) const;

  EncoderConfig config_;
  num::Array rel_table_;
};

struct PretrainLoss {
  num::Var total;
  num::Var mlm;
  num::Var nsp;
};

/// Mean MLM cross-entropy over the instance's masked positions plus NSP
/// cross-entropy, unweighted.
PretrainLoss pretrain_loss(const ForwardResult& result, const TrainingInstance& instance);

/// Best (start, end) with start <= end, end - start < max_span, restricted
/// to positions where `allowed` is set; maximizes start + end logits.
std::pair<std::size_t, std::size_t> best_span(const num::Array& span_logits, std::span<const std::uint8_t> allowed,
                                              std::size_t max_span = 30);

}  // namespace zengram
