#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "jointseq/config.hpp"
#include "jointseq/metrics.hpp"
#include "jointseq/model.hpp"
#include "jointseq/synth_tasks.hpp"
#include "jointseq/tep.hpp"

namespace jointseq {

// One evaluated sample, as dumped to predictions.jsonl.
struct PredictionRecord {
  Task task;
  std::size_t index = 0;
  std::uint64_t seed = 0;
  TokenSeq tokens;
  std::string prediction;  // vocab.describe of the generated tokens
  std::string target;
  bool ended = false;
  std::optional<bool> correct;  // accuracy-scored tasks
  std::optional<double> iou;    // grounding
};

struct EvalRequest {
  std::vector<Task> tasks;
  PromptVariant variant = PromptVariant::tep();
  Split split = Split::kVal;
  std::size_t n = 200;  // samples per task
  std::uint64_t data_seed = 0;
  std::size_t max_len = 128;
};

struct EvalOutput {
  MetricReport report;
  std::vector<PredictionRecord> predictions;
};

// FNV-1a over the raw parameter bytes, hex.
std::string params_fingerprint(const ModelParams& params);

// Greedy constrained generation on samples 0..n-1 of each task's split.
EvalOutput evaluate(const ModelParams& params, const UnifiedVocab& vocab,
                    const EvalRequest& request, std::ostream* progress = nullptr);

// Per-task metrics from generated records alone; evaluate() uses it too.
MetricReport score_predictions(const UnifiedVocab& vocab,
                               const std::vector<PredictionRecord>& records);

std::string prediction_to_json(const PredictionRecord& record);

struct EvalFiles {
  std::filesystem::path json;
  std::filesystem::path csv;
  std::filesystem::path predictions;
};

// Writes <stem>.json, <stem>.csv (one row per task) and <stem>.predictions.jsonl.
EvalFiles write_eval_outputs(const std::filesystem::path& dir, const std::string& stem,
                             const EvalOutput& output, const PromptVariant& variant,
                             Split split, std::uint64_t seed);

std::string eval_stem(const PromptVariant& variant, Split split);

struct TrainOutcome {
  std::filesystem::path run_dir;
  bool reused = false;
  MetricReport report;
};

// <out_dir>/<config hash>-s<seed>
std::filesystem::path run_directory(const RunConfig& config);

// Trains, checkpoints and evaluates one run. A completed run directory with the
// same resolved config is reused unless `force` is set.
TrainOutcome cmd_train(const RunConfig& config, bool force = false,
                       std::ostream* progress = nullptr);

EvalOutput cmd_eval(const std::filesystem::path& checkpoint, const EvalRequest& request,
                    const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

struct AblationCell {
  PromptVariant variant = PromptVariant::tep();
  std::vector<Task> tasks;
  std::uint64_t seed = 0;
  RunConfig config;
};

// variants x task-count ladder x seeds, in that nesting order.
std::vector<AblationCell> ablation_grid(const RunConfig& config);

struct AblationResult {
  std::filesystem::path csv;
  std::vector<AblationCell> cells;
  std::vector<TrainOutcome> outcomes;
};

// One CSV row per cell with each task's primary metric (blank when the task
// was not evaluated).
std::string ablation_csv(const std::vector<AblationCell>& cells,
                         const std::vector<TrainOutcome>& outcomes);

AblationResult cmd_ablate(const RunConfig& config, bool force = false,
                          std::ostream* progress = nullptr);

// One <kind>.csv per subprompt kind.
std::vector<std::filesystem::path> cmd_analyze(const std::filesystem::path& checkpoint,
                                               const std::filesystem::path& out_dir);

// JSON line describing a generated sample; infer reads it back by task and seed.
std::string sample_to_json(const TaskSample& sample, const UnifiedVocab& vocab);
TaskSample sample_from_json(const UnifiedVocab& vocab, const std::string& line);

}  // namespace jointseq
