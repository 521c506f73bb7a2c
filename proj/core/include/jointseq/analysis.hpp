#pragma once

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "jointseq/model.hpp"
#include "jointseq/tep.hpp"

namespace jointseq {

// Mean of the final encoder states of [BOS] text [EOS], eval mode.
// Throws Error(kSequenceTooLong).
std::vector<double> embed_subprompt(const ModelParams& params, const UnifiedVocab& vocab,
                                    std::string_view text);

// Throws Error(kZeroVector) when either vector has zero norm.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

struct SimilarityMatrix {
  Subprompt kind;
  std::vector<Task> tasks;
  std::vector<std::vector<double>> values;
  // Cells whose embedding had zero norm; their value is NaN.
  std::vector<std::pair<std::size_t, std::size_t>> degenerate;

  double at(Task a, Task b) const;
  // Header row and column of task names.
  std::string to_csv() const;
};

// Subprompt text of `kind` for `task`; the instance-prompt slot is emptied.
std::string subprompt_text(Subprompt kind, Task task);

SimilarityMatrix similarity_matrix(const ModelParams& params, const UnifiedVocab& vocab,
                                   Subprompt kind,
                                   const std::vector<Task>& tasks = {kAllTasks.begin(),
                                                                     kAllTasks.end()});

}  // namespace jointseq
