#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "zengram/checkpoint.hpp"
#include "zengram/metrics.hpp"
#include "zengram/train.hpp"

namespace zengram {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered label names; ids are positions.
struct LabelSet {
  std::vector<std::string> names;

  std::size_t size() const { return names.size(); }
  /// -1 when absent.
  int index_of(const std::string& name) const;
  std::string to_text() const;  // one name per line
  static LabelSet from_text(const std::string& text);
  bool operator==(const LabelSet&) const = default;
};

struct ClassifyExample {
  std::string label;
  std::u32string a;
  std::optional<std::u32string> b;
  /// Predicted probability of label "1", filled by predict().
  std::optional<double> score;
};

struct LabelExample {
  std::u32string chars;
  std::vector<std::string> tags;
};

/// Answer is context[start, end).
struct SpanExample {
  std::u32string context;
  std::u32string question;
  std::size_t start = 0;
  std::size_t end = 0;
};

struct TaskData {
  TaskKind kind = TaskKind::kClassify;
  std::vector<ClassifyExample> classify;
  std::vector<LabelExample> label;
  std::vector<SpanExample> span;

  std::size_t size() const;
};

/// Formats: classification "label<TAB>textA(<TAB>textB)"; labeling one
/// "char<TAB>tag" per line with blank lines between sentences; span
/// "context<TAB>question<TAB>start<TAB>end" with character offsets.
TaskData read_task_data(TaskKind kind, const std::filesystem::path& path);
void write_task_data(const TaskData& data, const std::filesystem::path& path);

/// Sorted distinct labels (classification) or tags (labeling).
LabelSet collect_labels(const TaskData& data);

/// Throws DatasetError naming the first example whose label is not in `labels`.
void check_labels(const TaskData& data, const LabelSet& labels, const std::string& what);

struct FinetuneOptions {
  TaskKind task = TaskKind::kClassify;
  Schedule schedule{5e-4, 20, 200};
  AdamConfig adam;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  bool freeze_encoder = false;
  bool zero_init_head = false;
  /// Record a history row every this many steps (and at steps 0 and last); 0 disables.
  std::size_t eval_every = 0;
  /// Stop as soon as training accuracy reaches 100 at an evaluation point.
  bool stop_when_perfect = false;
  double dropout = -1.0;  // negative keeps the pretrained setting
};

struct HistoryRow {
  std::uint64_t step = 0;
  double train_loss = 0.0;  // mean since the previous row
  Metrics train;
  Metrics dev;
};

struct FinetuneResult {
  Checkpoint model;
  LabelSet labels;
  std::vector<HistoryRow> history;
};

/// Encoder from `pretrained`, freshly initialized task head, Adam training.
FinetuneResult finetune(const Checkpoint& pretrained, const TaskData& train, const TaskData* dev,
                        const LabelSet& labels, const FinetuneOptions& options,
                        const std::function<void(const HistoryRow&)>& on_row = {});

/// Copy of `inputs` with labels, tags or answer offsets replaced by predictions.
TaskData predict(const Checkpoint& model, const TaskData& inputs);

/// CLASSIFY: accuracy (and mrr when the labels are 0/1 over text pairs);
/// LABEL: precision, recall, f1, token_accuracy, bio_repairs; SPAN: em, f1.
Metrics score(const TaskData& predicted, const TaskData& gold);

Metrics evaluate(const Checkpoint& model, const TaskData& gold);

/// "name value" lines.
std::string format_metrics(const Metrics& metrics);

}  // namespace zengram
