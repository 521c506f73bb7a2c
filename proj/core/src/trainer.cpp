#include "jointseq/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "jointseq/error.hpp"
#include "jointseq/rng.hpp"

namespace jointseq {

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& msg) {
    throw Error(ErrorCode::kConfigError, "train." + field + ": " + msg);
  };
  if (tasks.empty()) fail("tasks", "at least one task is required");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    for (std::size_t j = i + 1; j < tasks.size(); ++j) {
      if (tasks[i] == tasks[j]) fail("tasks", "duplicate task " + std::string(task_name(tasks[i])));
    }
  }
  if (n_per_task == 0) fail("n_per_task", "must be positive");
  if (total_steps == 0) fail("total_steps", "must be positive");
  if (!(peak_lr > 0.0)) fail("peak_lr", "must be positive");
  if (!(warmup_ratio > 0.0 && warmup_ratio < 1.0)) fail("warmup_ratio", "must lie in (0, 1)");
  if (!(beta1 > 0.0 && beta1 < 1.0)) fail("beta1", "must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) fail("beta2", "must lie in (0, 1)");
  if (!(eps_opt > 0.0)) fail("eps", "must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout", "must lie in [0, 1)");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    fail("label_smoothing", "must lie in [0, 1)");
  }
}

OptimizerState OptimizerState::zeros_like(const ModelParams& params) {
  OptimizerState s;
  for (const auto& t : params.tensors()) {
    s.m.emplace_back(t.shape(), 0.0);
    s.v.emplace_back(t.shape(), 0.0);
  }
  return s;
}

double lr_at(std::size_t step, std::size_t total_steps, double warmup_ratio, double peak) {
  if (total_steps == 0 || step >= total_steps) return 0.0;
  const auto warmup = static_cast<std::size_t>(
      std::ceil(warmup_ratio * static_cast<double>(total_steps)));
  if (warmup > 0 && step < warmup) {
    return peak * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (warmup >= total_steps) return peak;
  return peak * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

void optimizer_step(ModelParams& params, const Gradients& grads, OptimizerState& state,
                    const TrainConfig& config, double lr) {
  if (grads.tensors.size() != params.size() || state.m.size() != params.size()) {
    throw Error(ErrorCode::kShapeMismatch, "optimizer: slot counts differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  const double decay = lr * config.weight_decay;
  const std::size_t d = params.hyper().d_model;

  for (std::size_t slot = 0; slot < params.size(); ++slot) {
    const Tensor& g = grads.tensors[slot];
    require_shape(g, params.tensor(slot).shape(), "optimizer gradient");
    Tensor& p = params.mutable_tensor(slot);
    Tensor& m = state.m[slot];
    Tensor& v = state.v[slot];
    // The PAD row of the token table is the first d entries.
    const std::size_t no_decay_end = slot == params.tokens_slot() ? d : 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      if (i >= no_decay_end) p[i] -= decay * p[i];
      p[i] -= lr * mhat / (std::sqrt(vhat) + config.eps_opt);
    }
  }
}

BalancedSampler::BalancedSampler(std::vector<std::size_t> dataset_sizes, std::uint64_t seed)
    : sizes_(std::move(dataset_sizes)), rng_(seed) {
  if (sizes_.empty()) throw Error(ErrorCode::kEmptyDataset, "no active tasks");
  for (std::size_t k = 0; k < sizes_.size(); ++k) {
    if (sizes_[k] == 0) {
      throw Error(ErrorCode::kEmptyDataset, "task slot " + std::to_string(k) + " has no samples");
    }
  }
  order_.resize(sizes_.size());
  cursor_.assign(sizes_.size(), 0);
  for (std::size_t k = 0; k < sizes_.size(); ++k) refill(k);
}

void BalancedSampler::refill(std::size_t task) {
  auto& o = order_[task];
  o.resize(sizes_[task]);
  std::iota(o.begin(), o.end(), std::size_t{0});
  shuffle_in_place(o, rng_);
  cursor_[task] = 0;
}

std::vector<std::vector<std::size_t>> BalancedSampler::next(std::size_t n) {
  std::vector<std::vector<std::size_t>> out(sizes_.size());
  for (std::size_t k = 0; k < sizes_.size(); ++k) {
    out[k].reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (cursor_[k] == order_[k].size()) refill(k);
      out[k].push_back(order_[k][cursor_[k]++]);
    }
  }
  return out;
}

PreparedSample prepare_sample(const UnifiedVocab& vocab, const PromptVariant& variant,
                              TaskSample sample) {
  TokenSeq prompt = render_prompt(vocab, variant, sample.task, sample.instance_text);
  return PreparedSample{std::move(sample), std::move(prompt)};
}

std::uint64_t dropout_seed(std::uint64_t seed, std::size_t step, Task task, std::size_t index) {
  std::uint64_t s = derive_seed(seed, 0xd50f0000);
  s = derive_seed(s, step);
  s = derive_seed(s, static_cast<std::uint64_t>(task_index(task)));
  return derive_seed(s, index);
}

namespace {

// Adds weight * d(loss)/d(params) for one sample into `grads`; returns loss.
double accumulate_sample(const ModelParams& params, const PreparedSample& ps,
                         const TrainConfig& config, std::size_t step, std::size_t index,
                         double weight, Gradients& grads) {
  const ModelHyper& h = params.hyper();
  const EncoderInput input = assemble_encoder_input(ps.prompt, ps.sample, h.d_model, h.max_length);
  ForwardOptions opts;
  opts.train = config.dropout > 0.0;
  opts.dropout_seed = dropout_seed(config.seed, step, ps.sample.task, index);
  opts.dropout = config.dropout;
  ForwardPass pass(params, opts);
  forward(pass, input, decoder_input_for(ps.sample.target));
  Var loss = pass.loss(ps.sample.target, config.label_smoothing);
  const double value = pass.tape().value(loss).item();
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "task " << task_name(ps.sample.task) << " step " << step << " sample seed "
        << ps.sample.seed << " loss " << value;
    throw Error(ErrorCode::kNonFiniteLoss, msg.str());
  }
  pass.backward(loss, grads, weight);
  return value;
}

}  // namespace

Gradients task_gradient(const ModelParams& params,
                        const std::vector<const PreparedSample*>& samples, Task task,
                        const TrainConfig& config, std::size_t step, double* loss) {
  if (samples.empty()) throw Error(ErrorCode::kEmptyDataset, "empty task batch");
  Gradients g = Gradients::zeros_like(params);
  const double w = 1.0 / static_cast<double>(samples.size());
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i]->sample.task != task) {
      throw Error(ErrorCode::kShapeMismatch, "sample of the wrong task in task batch");
    }
    total += accumulate_sample(params, *samples[i], config, step, i, w, g);
  }
  if (loss) *loss = total * w;
  return g;
}

Gradients batch_gradients(const ModelParams& params, const Batch& batch,
                          const TrainConfig& config, std::size_t step,
                          std::vector<double>* losses) {
  if (batch.size() != config.tasks.size()) {
    throw Error(ErrorCode::kShapeMismatch, "batch does not match the active tasks");
  }
  Gradients g = Gradients::zeros_like(params);
  const double task_w =
      config.mean_over_tasks ? 1.0 / static_cast<double>(config.tasks.size()) : 1.0;
  if (losses) losses->assign(config.tasks.size(), 0.0);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& samples = batch[k];
    if (samples.empty()) throw Error(ErrorCode::kEmptyDataset, "empty task batch");
    const double w = task_w / static_cast<double>(samples.size());
    double total = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i]->sample.task != config.tasks[k]) {
        throw Error(ErrorCode::kShapeMismatch, "sample of the wrong task in task batch");
      }
      total += accumulate_sample(params, *samples[i], config, step, i, w, g);
    }
    if (losses) (*losses)[k] = total / static_cast<double>(samples.size());
  }
  return g;
}

StepResult train_step(ModelParams& params, OptimizerState& state, const Batch& batch,
                      const TrainConfig& config, std::size_t step) {
  StepResult r;
  Gradients g = batch_gradients(params, batch, config, step, &r.task_losses);
  double agg = 0.0;
  for (double l : r.task_losses) agg += l;
  r.aggregate_loss = agg / static_cast<double>(r.task_losses.size());
  r.grad_norm = std::sqrt(g.squared_norm());
  if (config.clip_norm > 0.0 && r.grad_norm > config.clip_norm) {
    g.scale(config.clip_norm / r.grad_norm);
  }
  r.lr = lr_at(step, config.total_steps, config.warmup_ratio, config.peak_lr);
  optimizer_step(params, g, state, config, r.lr);
  return r;
}

}  // namespace jointseq
