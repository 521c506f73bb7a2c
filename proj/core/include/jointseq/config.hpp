#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "jointseq/model.hpp"
#include "jointseq/synth_tasks.hpp"
#include "jointseq/task.hpp"
#include "jointseq/tep.hpp"
#include "jointseq/trainer.hpp"

namespace jointseq {

// Flat "section.key = value" configuration. Lines starting with '#' are
// comments; every key must appear in the schema.
struct RunConfig {
  ModelHyper model;
  int n_loc = 100;

  std::size_t train_size = 2000;  // per task
  std::size_t val_size = 200;
  std::size_t test_size = 200;
  std::uint64_t data_seed = 0;
  // Few/zero-shot protocol: shot_task gets shot_k training samples; 0 drops
  // it from training while keeping it in evaluation.
  std::optional<Task> shot_task;
  std::size_t shot_k = 0;

  TrainConfig train;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only

  Split eval_split = Split::kVal;
  std::vector<Task> eval_tasks;  // empty: training tasks plus shot_task
  std::optional<PromptVariant> eval_variant;
  std::size_t eval_max_len = 128;

  std::filesystem::path out_dir = "runs";

  std::vector<PromptVariant> ablate_variants;
  std::vector<int> ablate_task_counts;
  std::vector<std::uint64_t> ablate_seeds;

  // Tasks that receive training data.
  std::vector<Task> training_tasks() const;
  std::vector<Task> evaluation_tasks() const;
  PromptVariant evaluation_variant() const;
};

struct ConfigKey {
  std::string_view name;
  std::string_view default_value;
  std::string_view help;
};

const std::vector<ConfigKey>& config_schema();

// Throws Error(kConfigError) naming the field (and line when parsing text).
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
// Applies "key=value" overrides on top of `text`.
RunConfig parse_config(std::string_view text, const std::vector<std::string>& overrides);

// Every schema key with its resolved value, in schema order.
std::string resolved_config_text(const RunConfig& config);

// Hash of the resolved configuration without train.seed and run.out_dir, so
// seeds of one experiment share it.
std::string config_hash(const RunConfig& config);

// Task ladders used by the task-count ablation: 1 -> specialists
// {grounding, entailment, caption}; 3, 5, 7 -> nested multi-task sets.
std::vector<std::vector<Task>> task_ladder(int n_tasks);

}  // namespace jointseq
