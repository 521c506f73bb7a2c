#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "jointseq/box.hpp"
#include "jointseq/decode.hpp"
#include "jointseq/vocab.hpp"

namespace jointseq {

// Intersection over union; throws Error(kDegenerateBox) for invalid boxes.
double iou(const Box& a, const Box& b);

// A malformed prediction (anything but four location tokens forming a valid
// box) counts as wrong.
bool grounding_correct(const UnifiedVocab& vocab, std::span<const TokenId> prediction,
                       const Box& gold, double threshold = 0.5);
double grounding_accuracy(const UnifiedVocab& vocab, const std::vector<TokenSeq>& predictions,
                          const std::vector<Box>& gold, double threshold = 0.5);

// Lowercased whitespace tokens.
std::vector<std::string> words(std::string_view text);

// Sentence BLEU-4 against one or more references. Clipped n-gram precisions
// for n = 1..4; a higher-order precision with no matches becomes
// 1 / (total + 1). No unigram match or an empty candidate gives 0. Brevity
// penalty uses the reference length closest to the candidate (shorter on
// ties).
double bleu4(std::string_view candidate, const std::vector<std::string>& references);
// Corpus BLEU-4: counts and lengths pooled before the same formula.
double corpus_bleu4(const std::vector<std::string>& candidates,
                    const std::vector<std::vector<std::string>>& references);

// F1 of n-gram overlap; 0 when there is no overlap (including both empty).
double rouge_n(std::string_view candidate, std::string_view reference, int n);
// F1 over the longest common subsequence of words.
double rouge_l(std::string_view candidate, std::string_view reference);

// TF-IDF n-gram consensus score with document frequencies taken over a
// reference corpus (one entry per evaluated item).
class CiderScorer {
 public:
  // Throws Error(kEmptyCorpus).
  explicit CiderScorer(std::vector<std::vector<std::string>> corpus);

  // 10 * mean over n = 1..4 of the cosine similarity between candidate and
  // reference vectors, averaged over the references. Zero vectors give 0.
  double score(std::string_view candidate, const std::vector<std::string>& references) const;

  // Mean score over candidates against the scorer's own corpus.
  double corpus_score(const std::vector<std::string>& candidates) const;

  double idf(const std::vector<std::string>& ngram) const;

 private:
  std::vector<std::vector<std::string>> corpus_;
  std::map<std::vector<std::string>, std::size_t> df_;
};

double cider_lite(const std::vector<std::string>& candidates,
                  const std::vector<std::vector<std::string>>& references);

struct DetectionScores {
  double map = 0.0;
  double mar = 0.0;
};

// Per-class greedy matching at IoU >= threshold. A class's predictions are
// ranked by their order among that scene's predictions of the class, then by
// scene index. AP is the mean of the
// precision at each true positive over the class's gold count; classes
// without gold boxes are skipped.
DetectionScores map_lite(const std::vector<std::vector<Detection>>& predictions,
                         const std::vector<std::vector<Detection>>& gold,
                         double threshold = 0.5);

struct MetricReport {
  // task -> metric -> value
  std::map<std::string, std::map<std::string, double>> values;
  std::map<std::string, std::size_t> counts;
  std::string fingerprint;

  std::string to_json() const;
  static MetricReport from_json(std::string_view text);
};

// Name of the metric reported as a task's headline number.
std::string_view primary_metric(Task task);

}  // namespace jointseq
