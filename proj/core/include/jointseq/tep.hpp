#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "jointseq/task.hpp"
#include "jointseq/vocab.hpp"

namespace jointseq {

// The five parts of a task explanation prompt, in rendering order.
enum class Subprompt : int {
  kDataDescription = 0,
  kInputFormat = 1,
  kOutputFormat = 2,
  kOutputDescription = 3,
  kInstancePrompt = 4,
};

inline constexpr std::array<Subprompt, 5> kAllSubprompts = {
    Subprompt::kDataDescription, Subprompt::kInputFormat,
    Subprompt::kOutputFormat, Subprompt::kOutputDescription,
    Subprompt::kInstancePrompt,
};

std::string_view subprompt_name(Subprompt kind);
Subprompt parse_subprompt(std::string_view name);

struct TepTemplate {
  Task task;
  std::string data_description;
  std::string input_format;
  std::string output_format;
  std::string output_description;
  // Contains the literal "{}" exactly once when the task consumes text.
  std::string instance_prompt;

  const std::string& field(Subprompt kind) const;
  bool has_slot() const;
  std::string instantiate(std::optional<std::string_view> text) const;
};

// Throws Error(kUnknownTask) if `task` is not one of the seven.
const TepTemplate& template_for(Task task);

// FNV-1a 64 over every asset text in task then subprompt order, each
// followed by a zero byte.
std::uint64_t prompt_asset_checksum();

// Parts that can be removed in the subprompt ablation. kIoFormat removes
// both the input and the output format.
enum AblationPart : unsigned {
  kDropDataDescription = 1u << 0,
  kDropIoFormat = 1u << 1,
  kDropOutputDescription = 1u << 2,
  kDropInstancePrompt = 1u << 3,
};
inline constexpr unsigned kAllAblationParts = 0xFu;

class PromptVariant {
 public:
  enum class Kind { kTep, kBaseP, kOneHot, kTepOneHot, kTepAblated };

  static PromptVariant tep() { return PromptVariant(Kind::kTep, 0); }
  static PromptVariant base_prompt() { return PromptVariant(Kind::kBaseP, 0); }
  static PromptVariant one_hot() { return PromptVariant(Kind::kOneHot, 0); }
  static PromptVariant tep_one_hot() { return PromptVariant(Kind::kTepOneHot, 0); }
  // Throws Error(kInvalidVariant) for an empty or a full drop set.
  static PromptVariant tep_ablated(unsigned drop_set);

  // Accepts tep, basep, onehot, tep-onehot and tep-wo-<parts> where parts is
  // a '-' separated subset of {dd, io, od, ip}.
  static PromptVariant parse(std::string_view name);

  Kind kind() const { return kind_; }
  unsigned drop_set() const { return drop_; }
  std::string name() const;

  bool operator==(const PromptVariant&) const = default;

 private:
  PromptVariant(Kind kind, unsigned drop) : kind_(kind), drop_(drop) {}
  Kind kind_;
  unsigned drop_;
};

// Prompt token sequence for one instance. Instance text must be given exactly
// for the tasks that consume text.
TokenSeq render_prompt(const UnifiedVocab& vocab, const PromptVariant& variant,
                       Task task, std::optional<std::string_view> instance_text);

// Partition of the seven tasks by output-format homogeneity.
std::vector<std::vector<Task>> shared_format_groups();

// Index into the reserved group tokens that replaces subprompt `kind` of
// `task` in the structured one-hot prompt. Instance prompts have no group.
int group_token_index(Subprompt kind, Task task);

}  // namespace jointseq
