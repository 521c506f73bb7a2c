#include "jointseq/task.hpp"

#include <algorithm>
#include <string>

#include "jointseq/error.hpp"

namespace jointseq {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonTextToken: return "NonTextToken";
    case ErrorCode::kNonLocationToken: return "NonLocationToken";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kUnknownTask: return "UnknownTask";
    case ErrorCode::kMissingInstanceText: return "MissingInstanceText";
    case ErrorCode::kUnexpectedInstanceText: return "UnexpectedInstanceText";
    case ErrorCode::kInvalidVariant: return "InvalidVariant";
    case ErrorCode::kAmbiguousReferent: return "AmbiguousReferent";
    case ErrorCode::kSequenceTooLong: return "SequenceTooLong";
    case ErrorCode::kInvalidHyper: return "InvalidHyper";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kEmptyTarget: return "EmptyTarget";
    case ErrorCode::kStaleTape: return "StaleTape";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kEmptyLabelSet: return "EmptyLabelSet";
    case ErrorCode::kInvalidPrefix: return "InvalidPrefix";
    case ErrorCode::kDegenerateBox: return "DegenerateBox";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kManifestMismatch: return "ManifestMismatch";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

namespace {

constexpr std::array<std::string_view, kNumTasks> kTaskNames = {
    "caption", "grounding",     "entailment", "vqa",
    "classification", "summarization", "detection",
};

}  // namespace

std::string_view task_name(Task t) { return kTaskNames.at(task_index(t)); }

std::optional<Task> try_parse_task(std::string_view name) {
  for (std::size_t i = 0; i < kNumTasks; ++i) {
    if (kTaskNames[i] == name) return static_cast<Task>(i);
  }
  return std::nullopt;
}

Task parse_task(std::string_view name) {
  if (auto t = try_parse_task(name)) return *t;
  throw Error(ErrorCode::kUnknownTask, "unknown task '" + std::string(name) + "'");
}

std::vector<Task> parse_task_list(std::string_view csv) {
  std::vector<Task> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    std::size_t end = csv.find(',', start);
    if (end == std::string_view::npos) end = csv.size();
    std::string_view item = csv.substr(start, end - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) {
      Task t = parse_task(item);
      if (std::find(out.begin(), out.end(), t) != out.end()) {
        throw Error(ErrorCode::kUnknownTask,
                    "duplicate task '" + std::string(item) + "'");
      }
      out.push_back(t);
    }
    start = end + 1;
  }
  return out;
}

bool task_consumes_text(Task t) {
  return t == Task::kGrounding || t == Task::kEntailment || t == Task::kVqa ||
         t == Task::kSummarization;
}

bool task_uses_image(Task t) { return t != Task::kSummarization; }

bool task_has_closed_set(Task t) {
  return t == Task::kClassification || t == Task::kEntailment ||
         t == Task::kVqa;
}

}  // namespace jointseq
