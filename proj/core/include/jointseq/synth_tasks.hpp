#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "jointseq/box.hpp"
#include "jointseq/task.hpp"
#include "jointseq/tensor.hpp"
#include "jointseq/vocab.hpp"

namespace jointseq {

enum class Shape { kSquare, kCircle, kTriangle };
enum class Color { kRed, kGreen, kBlue, kYellow };

inline constexpr int kNumShapes = 3;
inline constexpr int kNumColors = 4;
inline constexpr int kGridSize = 8;
inline constexpr int kNumCells = kGridSize * kGridSize;
// occupied flag + shape one-hot + color one-hot
inline constexpr int kPatchCodeWidth = 1 + kNumShapes + kNumColors;

std::string_view shape_name(Shape s);
std::string_view color_name(Color c);

struct SceneObject {
  Shape shape;
  Color color;
  // Cell extents, half-open: columns [col0, col1), rows [row0, row1).
  int col0, row0, col1, row1;

  Box box() const;
  int area() const { return (col1 - col0) * (row1 - row0); }
  // "{color} {shape}"
  std::string label() const;
  bool covers(int row, int col) const {
    return row >= row0 && row < row1 && col >= col0 && col < col1;
  }
};

// An 8x8 grid holding 1-4 non-overlapping objects with distinct
// (shape, color) pairs.
struct Scene {
  std::uint64_t seed = 0;
  std::vector<SceneObject> objects;

  // Objects sorted by (row0, col0).
  std::vector<SceneObject> scan_order() const;
  const SceneObject* object_at(int row, int col) const;
  bool satisfies_invariants() const;
};

Scene gen_scene(std::uint64_t seed);

// kNumCells rows of width d_model, row-major over cells. An occupied cell
// carries the code [1 | shape one-hot | color one-hot] zero padded; empty
// cells are all zero. Requires d_model >= kPatchCodeWidth.
Tensor render_patches(const Scene& scene, std::size_t d_model);

enum class LabelSet { kClassNames, kEntailmentAnswers, kColors };

const std::vector<std::string>& closed_set_labels(LabelSet set);

struct TaskSample {
  Task task;
  std::uint64_t seed = 0;
  std::optional<std::string> instance_text;
  std::optional<Scene> scene;
  TokenSeq target;  // ends with EOS
  std::optional<LabelSet> closed_set;
  // Textual reference: caption, summary, class or answer; detection labels
  // joined by "; ".
  std::string target_text;
  // Grounding: the referent. Detection: every object in scan order.
  std::vector<Box> gold_boxes;
  std::vector<std::string> gold_labels;
};

// Grounding query resolution; throws Error(kAmbiguousReferent) unless exactly
// one object matches "the {color} {shape}".
const SceneObject& resolve_referent(const Scene& scene, std::string_view query);

std::string caption_for(const Scene& scene);

// Fully determined by (task, seed). Scenes that cannot host the task (no
// unique largest object, no singleton shape, ...) are redrawn from a derived
// seed stream.
TaskSample make_sample(const UnifiedVocab& vocab, Task task, std::uint64_t seed);

// Sample for a given scene, or nullopt when the scene cannot host the task.
// `choice_seed` drives the per-sample choices (referent, premise kind, ...).
std::optional<TaskSample> make_sample_for_scene(const UnifiedVocab& vocab, Task task,
                                                const Scene& scene,
                                                std::uint64_t choice_seed);

inline constexpr TokenId kPatchSlot = -1;
inline constexpr std::size_t kDefaultMaxLength = 1024;

// Encoder sequence: [BOS] prompt [SEP] patches [EOS]. Patch slots hold
// kPatchSlot in `tokens`; their vectors are the rows of `patches` in slot
// order, and row k is grid cell k.
struct EncoderInput {
  TokenSeq tokens;
  Tensor patches;  // n_patches x d_model, or empty

  std::size_t length() const { return tokens.size(); }
  std::size_t n_patches() const { return patches.empty() ? 0 : patches.rows(); }
};

EncoderInput assemble_encoder_input(const TokenSeq& prompt_tokens,
                                    const TaskSample& sample, std::size_t d_model,
                                    std::size_t max_length = kDefaultMaxLength);

// [BOS] + target without its final EOS.
TokenSeq decoder_input_for(const TokenSeq& target);

enum class Split { kTrain, kVal, kTest };

std::string_view split_name(Split split);
// Throws Error(kConfigError).
Split parse_split(std::string_view name);

// Seed of sample `index` in `split`; splits draw from disjoint streams.
std::uint64_t sample_seed(std::uint64_t data_seed, Split split, std::size_t index);

// Samples 0..n-1 of one task's split.
std::vector<TaskSample> make_split(const UnifiedVocab& vocab, Task task, Split split,
                                   std::size_t n, std::uint64_t data_seed);

}  // namespace jointseq
