#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "jointseq/model.hpp"
#include "jointseq/synth_tasks.hpp"
#include "jointseq/task.hpp"
#include "jointseq/tep.hpp"

namespace jointseq {

struct TrainConfig {
  std::vector<Task> tasks;
  PromptVariant variant = PromptVariant::tep();
  std::size_t n_per_task = 1;
  std::size_t total_steps = 1000;
  double peak_lr = 1e-4;
  double warmup_ratio = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_opt = 1e-8;
  double weight_decay = 0.01;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  // Global gradient-norm clip; <= 0 disables clipping.
  double clip_norm = 1.0;
  // Mean over tasks (true) or plain sum of per-task gradients.
  bool mean_over_tasks = true;
  std::uint64_t seed = 0;

  // Throws Error(kConfigError).
  void validate() const;
};

struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static OptimizerState zeros_like(const ModelParams& params);
};

// Linear warmup to `peak` over ceil(warmup_ratio * total_steps) steps, then
// linear decay to zero at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, double warmup_ratio, double peak);

// One AdamW update with bias correction. Weight decay is decoupled and skips
// the PAD row of the token embedding.
void optimizer_step(ModelParams& params, const Gradients& grads, OptimizerState& state,
                    const TrainConfig& config, double lr);

// Per-task epochs without replacement, reshuffled on exhaustion.
class BalancedSampler {
 public:
  // One entry per active task; throws Error(kEmptyDataset) for a zero size.
  BalancedSampler(std::vector<std::size_t> dataset_sizes, std::uint64_t seed);

  // n indices per task, in task order.
  std::vector<std::vector<std::size_t>> next(std::size_t n);

  std::size_t n_tasks() const { return sizes_.size(); }

 private:
  void refill(std::size_t task);

  std::vector<std::size_t> sizes_;
  std::vector<std::vector<std::size_t>> order_;
  std::vector<std::size_t> cursor_;
  std::mt19937_64 rng_;
};

// A sample with its rendered prompt.
struct PreparedSample {
  TaskSample sample;
  TokenSeq prompt;
};

PreparedSample prepare_sample(const UnifiedVocab& vocab, const PromptVariant& variant,
                              TaskSample sample);

// batch[k] holds the samples of config.tasks[k].
using Batch = std::vector<std::vector<const PreparedSample*>>;

struct StepResult {
  std::vector<double> task_losses;  // aligned with config.tasks
  double aggregate_loss = 0.0;
  double grad_norm = 0.0;  // before clipping
  double lr = 0.0;
};

// Aggregated gradient of one balanced batch without applying it: every
// per-task mean gradient enters with weight 1/T (or 1 when summing), in task
// order. `losses` receives the per-task mean losses.
Gradients batch_gradients(const ModelParams& params, const Batch& batch,
                          const TrainConfig& config, std::size_t step,
                          std::vector<double>* losses);

// Gradient of the mean loss over one task's samples, computed on its own.
Gradients task_gradient(const ModelParams& params, const std::vector<const PreparedSample*>& samples,
                        Task task, const TrainConfig& config, std::size_t step,
                        double* loss);

// batch_gradients + clipping + optimizer_step at lr_at(step).
// Throws Error(kNonFiniteLoss) naming the task, step and sample seed.
StepResult train_step(ModelParams& params, OptimizerState& state, const Batch& batch,
                      const TrainConfig& config, std::size_t step);

// Seed of the dropout stream for one sample of one step.
std::uint64_t dropout_seed(std::uint64_t seed, std::size_t step, Task task, std::size_t index);

}  // namespace jointseq
