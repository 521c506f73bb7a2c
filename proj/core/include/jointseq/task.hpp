#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

namespace jointseq {

// Listing order of the seven tasks. Gradient accumulation, report rows and
// control-token assignment all follow this order.
enum class Task : int {
  kCaption = 0,
  kGrounding = 1,
  kEntailment = 2,
  kVqa = 3,
  kClassification = 4,
  kSummarization = 5,
  kDetection = 6,
};

inline constexpr std::size_t kNumTasks = 7;

inline constexpr std::array<Task, kNumTasks> kAllTasks = {
    Task::kCaption,        Task::kGrounding,     Task::kEntailment,
    Task::kVqa,            Task::kClassification, Task::kSummarization,
    Task::kDetection,
};

inline constexpr std::size_t task_index(Task t) {
  return static_cast<std::size_t>(t);
}

std::string_view task_name(Task t);

// Throws Error(kUnknownTask) for names outside the seven.
Task parse_task(std::string_view name);
std::optional<Task> try_parse_task(std::string_view name);

// Comma separated list, order preserved, duplicates rejected.
std::vector<Task> parse_task_list(std::string_view csv);

// Tasks whose input contains free text besides the image.
bool task_consumes_text(Task t);

bool task_uses_image(Task t);

// Tasks decoded against a closed label set.
bool task_has_closed_set(Task t);

}  // namespace jointseq
