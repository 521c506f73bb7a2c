#include "jointseq/tep.hpp"

#include <algorithm>
#include <string>

#include "jointseq/error.hpp"

namespace jointseq {
namespace {

// Generated from core/assets/prompts/<task>/<subprompt>.txt; defines
// kPromptAssets[task][subprompt].
#include "prompt_assets.inc"

constexpr std::array<std::string_view, 5> kSubpromptNames = {
    "data_description", "input_format", "output_format", "output_description",
    "instance_prompt",
};

std::array<TepTemplate, kNumTasks> build_templates() {
  std::array<TepTemplate, kNumTasks> out;
  for (Task t : kAllTasks) {
    const auto& a = kPromptAssets[task_index(t)];
    out[task_index(t)] = TepTemplate{t,
                                     std::string(a[0]),
                                     std::string(a[1]),
                                     std::string(a[2]),
                                     std::string(a[3]),
                                     std::string(a[4])};
  }
  return out;
}

const std::array<TepTemplate, kNumTasks>& templates() {
  static const auto kTemplates = build_templates();
  return kTemplates;
}

void append(TokenSeq& out, const TokenSeq& more) {
  out.insert(out.end(), more.begin(), more.end());
}

}  // namespace

std::string_view subprompt_name(Subprompt kind) {
  return kSubpromptNames.at(static_cast<std::size_t>(kind));
}

Subprompt parse_subprompt(std::string_view name) {
  for (std::size_t i = 0; i < kSubpromptNames.size(); ++i) {
    if (kSubpromptNames[i] == name) return static_cast<Subprompt>(i);
  }
  throw Error(ErrorCode::kConfigError,
              "unknown subprompt kind '" + std::string(name) + "'");
}

const std::string& TepTemplate::field(Subprompt kind) const {
  switch (kind) {
    case Subprompt::kDataDescription: return data_description;
    case Subprompt::kInputFormat: return input_format;
    case Subprompt::kOutputFormat: return output_format;
    case Subprompt::kOutputDescription: return output_description;
    case Subprompt::kInstancePrompt: return instance_prompt;
  }
  throw Error(ErrorCode::kOutOfRange, "subprompt kind");
}

bool TepTemplate::has_slot() const {
  return instance_prompt.find("{}") != std::string::npos;
}

std::string TepTemplate::instantiate(std::optional<std::string_view> text) const {
  const auto pos = instance_prompt.find("{}");
  if (pos == std::string::npos) {
    if (text) {
      throw Error(ErrorCode::kUnexpectedInstanceText,
                  std::string(task_name(task)) + " takes no instance text");
    }
    return instance_prompt;
  }
  if (!text) {
    throw Error(ErrorCode::kMissingInstanceText,
                std::string(task_name(task)) + " requires instance text");
  }
  std::string out = instance_prompt;
  out.replace(pos, 2, *text);
  return out;
}

const TepTemplate& template_for(Task task) {
  const auto idx = static_cast<std::size_t>(task);
  if (idx >= kNumTasks) {
    throw Error(ErrorCode::kUnknownTask, "task index " + std::to_string(idx));
  }
  return templates()[idx];
}

std::uint64_t prompt_asset_checksum() {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ull;
  };
  for (Task t : kAllTasks) {
    for (Subprompt k : kAllSubprompts) {
      for (unsigned char c : template_for(t).field(k)) mix(c);
      mix(0);
    }
  }
  return h;
}

PromptVariant PromptVariant::tep_ablated(unsigned drop_set) {
  if (drop_set == 0 || (drop_set & ~kAllAblationParts) != 0 ||
      drop_set == kAllAblationParts) {
    throw Error(ErrorCode::kInvalidVariant,
                "drop set must be a non-empty proper subset of the four parts");
  }
  return PromptVariant(Kind::kTepAblated, drop_set);
}

PromptVariant PromptVariant::parse(std::string_view name) {
  if (name == "tep") return tep();
  if (name == "basep") return base_prompt();
  if (name == "onehot" || name == "one-hot") return one_hot();
  if (name == "tep-onehot" || name == "tep-one-hot") return tep_one_hot();
  constexpr std::string_view kPrefix = "tep-wo-";
  if (name.substr(0, kPrefix.size()) == kPrefix) {
    unsigned drop = 0;
    std::string_view rest = name.substr(kPrefix.size());
    while (!rest.empty()) {
      const auto dash = rest.find('-');
      const std::string_view part = rest.substr(0, dash);
      if (part == "dd") {
        drop |= kDropDataDescription;
      } else if (part == "io") {
        drop |= kDropIoFormat;
      } else if (part == "od") {
        drop |= kDropOutputDescription;
      } else if (part == "ip") {
        drop |= kDropInstancePrompt;
      } else {
        throw Error(ErrorCode::kInvalidVariant,
                    "unknown ablation part '" + std::string(part) + "'");
      }
      rest = dash == std::string_view::npos ? std::string_view{} : rest.substr(dash + 1);
    }
    return tep_ablated(drop);
  }
  throw Error(ErrorCode::kInvalidVariant,
              "unknown prompt variant '" + std::string(name) + "'");
}

std::string PromptVariant::name() const {
  switch (kind_) {
    case Kind::kTep: return "tep";
    case Kind::kBaseP: return "basep";
    case Kind::kOneHot: return "onehot";
    case Kind::kTepOneHot: return "tep-onehot";
    case Kind::kTepAblated: {
      std::string out = "tep-wo";
      if (drop_ & kDropDataDescription) out += "-dd";
      if (drop_ & kDropIoFormat) out += "-io";
      if (drop_ & kDropOutputDescription) out += "-od";
      if (drop_ & kDropInstancePrompt) out += "-ip";
      return out;
    }
  }
  return "?";
}

std::vector<std::vector<Task>> shared_format_groups() {
  std::vector<std::vector<Task>> groups(2);
  for (Task t : kAllTasks) {
    const int g = group_token_index(Subprompt::kOutputFormat, t) == 10 ? 0 : 1;
    groups[g].push_back(t);
  }
  return groups;
}

int group_token_index(Subprompt kind, Task task) {
  const int ti = static_cast<int>(task_index(task));
  switch (kind) {
    case Subprompt::kDataDescription:
      return ti;
    case Subprompt::kInputFormat:
      if (task == Task::kSummarization) return 9;
      return task_consumes_text(task) ? 8 : 7;
    case Subprompt::kOutputFormat:
      return (task == Task::kGrounding || task == Task::kDetection) ? 10 : 11;
    case Subprompt::kOutputDescription:
      return 12 + ti;
    case Subprompt::kInstancePrompt:
      break;
  }
  throw Error(ErrorCode::kInvalidVariant, "instance prompts have no group token");
}

TokenSeq render_prompt(const UnifiedVocab& vocab, const PromptVariant& variant,
                       Task task, std::optional<std::string_view> instance_text) {
  const TepTemplate& tpl = template_for(task);
  if (task_consumes_text(task) && !instance_text) {
    throw Error(ErrorCode::kMissingInstanceText,
                std::string(task_name(task)) + " requires instance text");
  }
  if (!task_consumes_text(task) && instance_text) {
    throw Error(ErrorCode::kUnexpectedInstanceText,
                std::string(task_name(task)) + " takes no instance text");
  }

  TokenSeq out;
  switch (variant.kind()) {
    case PromptVariant::Kind::kBaseP:
      return vocab.encode_text(tpl.instantiate(instance_text));

    case PromptVariant::Kind::kOneHot:
      out.push_back(vocab.task_token(task));
      if (instance_text) append(out, vocab.encode_text(*instance_text));
      return out;

    case PromptVariant::Kind::kTepOneHot:
      for (Subprompt k : {Subprompt::kDataDescription, Subprompt::kInputFormat,
                          Subprompt::kOutputFormat, Subprompt::kOutputDescription}) {
        out.push_back(vocab.group_token(group_token_index(k, task)));
        out.push_back(UnifiedVocab::kSep);
      }
      append(out, vocab.encode_text(tpl.instantiate(instance_text)));
      return out;

    case PromptVariant::Kind::kTep:
    case PromptVariant::Kind::kTepAblated: {
      const unsigned drop = variant.drop_set();
      std::vector<std::string> parts;
      if (!(drop & kDropDataDescription)) parts.push_back(tpl.data_description);
      if (!(drop & kDropIoFormat)) {
        parts.push_back(tpl.input_format);
        parts.push_back(tpl.output_format);
      }
      if (!(drop & kDropOutputDescription)) parts.push_back(tpl.output_description);
      if (!(drop & kDropInstancePrompt)) {
        parts.push_back(tpl.instantiate(instance_text));
      } else if (instance_text) {
        // The input text itself survives removal of its wrapper sentence.
        parts.emplace_back(*instance_text);
      }
      for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) out.push_back(UnifiedVocab::kSep);
        append(out, vocab.encode_text(parts[i]));
      }
      return out;
    }
  }
  throw Error(ErrorCode::kInvalidVariant, "unhandled variant");
}

}  // namespace jointseq
