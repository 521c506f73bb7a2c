#include "jointseq/metrics.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "jointseq/error.hpp"

namespace jointseq {

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw Error(ErrorCode::kDegenerateBox, "iou of invalid box");
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

bool grounding_correct(const UnifiedVocab& vocab, std::span<const TokenId> prediction,
                       const Box& gold, double threshold) {
  const auto box = parse_box(vocab, prediction);
  return box && iou(*box, gold) >= threshold;
}

double grounding_accuracy(const UnifiedVocab& vocab, const std::vector<TokenSeq>& predictions,
                          const std::vector<Box>& gold, double threshold) {
  if (predictions.size() != gold.size()) {
    throw Error(ErrorCode::kShapeMismatch, "grounding: predictions vs gold");
  }
  if (gold.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (grounding_correct(vocab, predictions[i], gold[i], threshold)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

using Ngram = std::vector<std::string>;
using Counts = std::map<Ngram, std::size_t>;

Counts ngram_counts(const std::vector<std::string>& w, int n) {
  Counts c;
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + un <= w.size(); ++i) {
    ++c[Ngram(w.begin() + static_cast<long>(i), w.begin() + static_cast<long>(i + un))];
  }
  return c;
}

struct BleuStats {
  std::array<double, 4> matches{};
  std::array<double, 4> totals{};
  double cand_len = 0.0;
  double ref_len = 0.0;
};

void add_bleu_stats(const std::vector<std::string>& cand,
                    const std::vector<std::vector<std::string>>& refs, BleuStats& s) {
  for (int n = 1; n <= 4; ++n) {
    const Counts cc = ngram_counts(cand, n);
    Counts max_ref;
    for (const auto& r : refs) {
      for (const auto& [g, k] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], k);
    }
    double m = 0.0, t = 0.0;
    for (const auto& [g, k] : cc) {
      t += static_cast<double>(k);
      auto it = max_ref.find(g);
      if (it != max_ref.end()) m += static_cast<double>(std::min(k, it->second));
    }
    s.matches[static_cast<std::size_t>(n - 1)] += m;
    s.totals[static_cast<std::size_t>(n - 1)] += t;
  }
  s.cand_len += static_cast<double>(cand.size());
  // Closest reference length, the shorter one on ties.
  std::size_t best = 0;
  bool have = false;
  for (const auto& r : refs) {
    const auto diff = [&](std::size_t len) {
      return len > cand.size() ? len - cand.size() : cand.size() - len;
    };
    if (!have || diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) {
      best = r.size();
      have = true;
    }
  }
  s.ref_len += static_cast<double>(best);
}

double bleu_from_stats(const BleuStats& s) {
  if (s.cand_len == 0.0 || s.matches[0] == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double p;
    if (n > 0 && s.matches[n] == 0.0) {
      p = 1.0 / (s.totals[n] + 1.0);
    } else {
      p = s.matches[n] / s.totals[n];
    }
    log_sum += std::log(p);
  }
  const double bp = s.cand_len > s.ref_len ? 1.0 : std::exp(1.0 - s.ref_len / s.cand_len);
  return bp * std::exp(log_sum / 4.0);
}

std::vector<std::vector<std::string>> split_all(const std::vector<std::string>& texts) {
  std::vector<std::vector<std::string>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(words(t));
  return out;
}

double f1(double overlap, double cand_total, double ref_total) {
  if (overlap == 0.0) return 0.0;
  const double p = overlap / cand_total;
  const double r = overlap / ref_total;
  return 2.0 * p * r / (p + r);
}

}  // namespace

double bleu4(std::string_view candidate, const std::vector<std::string>& references) {
  if (references.empty()) throw Error(ErrorCode::kEmptyCorpus, "bleu4 without references");
  BleuStats s;
  add_bleu_stats(words(candidate), split_all(references), s);
  return bleu_from_stats(s);
}

double corpus_bleu4(const std::vector<std::string>& candidates,
                    const std::vector<std::vector<std::string>>& references) {
  if (candidates.size() != references.size()) {
    throw Error(ErrorCode::kShapeMismatch, "bleu: candidates vs references");
  }
  if (candidates.empty()) throw Error(ErrorCode::kEmptyCorpus, "corpus bleu of nothing");
  BleuStats s;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    add_bleu_stats(words(candidates[i]), split_all(references[i]), s);
  }
  return bleu_from_stats(s);
}

double rouge_n(std::string_view candidate, std::string_view reference, int n) {
  if (n < 1) throw Error(ErrorCode::kOutOfRange, "rouge n must be positive");
  const Counts c = ngram_counts(words(candidate), n);
  const Counts r = ngram_counts(words(reference), n);
  double overlap = 0.0, ct = 0.0, rt = 0.0;
  for (const auto& [g, k] : c) {
    ct += static_cast<double>(k);
    auto it = r.find(g);
    if (it != r.end()) overlap += static_cast<double>(std::min(k, it->second));
  }
  for (const auto& [g, k] : r) rt += static_cast<double>(k);
  return f1(overlap, ct, rt);
}

double rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = words(candidate);
  const auto r = words(reference);
  std::vector<std::size_t> prev(r.size() + 1, 0), cur(r.size() + 1, 0);
  for (std::size_t i = 1; i <= c.size(); ++i) {
    for (std::size_t j = 1; j <= r.size(); ++j) {
      cur[j] = c[i - 1] == r[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[r.size()]);
  return f1(lcs, static_cast<double>(c.size()), static_cast<double>(r.size()));
}

CiderScorer::CiderScorer(std::vector<std::vector<std::string>> corpus)
    : corpus_(std::move(corpus)) {
  if (corpus_.empty()) throw Error(ErrorCode::kEmptyCorpus, "cider corpus is empty");
  for (const auto& refs : corpus_) {
    std::map<Ngram, bool> seen;
    for (const auto& ref : refs) {
      const auto w = words(ref);
      for (int n = 1; n <= 4; ++n) {
        for (const auto& [g, _] : ngram_counts(w, n)) seen[g] = true;
      }
    }
    for (const auto& [g, _] : seen) ++df_[g];
  }
}

double CiderScorer::idf(const std::vector<std::string>& ngram) const {
  auto it = df_.find(ngram);
  const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
  return std::log(static_cast<double>(corpus_.size())) - std::log(std::max(1.0, df));
}

double CiderScorer::score(std::string_view candidate,
                          const std::vector<std::string>& references) const {
  if (references.empty()) return 0.0;
  const auto cw = words(candidate);
  double total = 0.0;
  for (int n = 1; n <= 4; ++n) {
    auto vec = [&](const std::vector<std::string>& w) {
      std::map<Ngram, double> v;
      const Counts c = ngram_counts(w, n);
      double len = 0.0;
      for (const auto& [g, k] : c) len += static_cast<double>(k);
      for (const auto& [g, k] : c) v[g] = static_cast<double>(k) / len * idf(g);
      return v;
    };
    const auto cv = vec(cw);
    double cn = 0.0;
    for (const auto& [g, x] : cv) cn += x * x;
    double sum = 0.0;
    for (const auto& ref : references) {
      const auto rv = vec(words(ref));
      double rn = 0.0, dot = 0.0;
      for (const auto& [g, x] : rv) {
        rn += x * x;
        auto it = cv.find(g);
        if (it != cv.end()) dot += x * it->second;
      }
      if (cn > 0.0 && rn > 0.0) sum += dot / (std::sqrt(cn) * std::sqrt(rn));
    }
    total += 10.0 * sum / static_cast<double>(references.size());
  }
  return total / 4.0;
}

double CiderScorer::corpus_score(const std::vector<std::string>& candidates) const {
  if (candidates.size() != corpus_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "cider: candidates vs corpus");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) s += score(candidates[i], corpus_[i]);
  return s / static_cast<double>(candidates.size());
}

double cider_lite(const std::vector<std::string>& candidates,
                  const std::vector<std::vector<std::string>>& references) {
  return CiderScorer(references).corpus_score(candidates);
}

DetectionScores map_lite(const std::vector<std::vector<Detection>>& predictions,
                         const std::vector<std::vector<Detection>>& gold, double threshold) {
  if (predictions.size() != gold.size()) {
    throw Error(ErrorCode::kShapeMismatch, "map: predictions vs gold scenes");
  }
  std::map<std::string, std::size_t> n_gold;
  for (const auto& scene : gold) {
    for (const auto& d : scene) ++n_gold[d.label];
  }
  DetectionScores out;
  if (n_gold.empty()) return out;

  for (const auto& [label, count] : n_gold) {
    // (rank within scene, scene) ordering.
    std::vector<std::pair<std::size_t, std::size_t>> order;  // (rank, scene)
    std::vector<std::vector<const Detection*>> per_scene(predictions.size());
    for (std::size_t s = 0; s < predictions.size(); ++s) {
      for (const auto& d : predictions[s]) {
        if (d.label == label) per_scene[s].push_back(&d);
      }
      for (std::size_t r = 0; r < per_scene[s].size(); ++r) order.emplace_back(r, s);
    }
    std::sort(order.begin(), order.end());
    std::vector<std::vector<bool>> used(gold.size());
    for (std::size_t s = 0; s < gold.size(); ++s) used[s].assign(gold[s].size(), false);

    double tp = 0.0, seen = 0.0, ap_sum = 0.0;
    for (auto [rank, s] : order) {
      const Detection& p = *per_scene[s][rank];
      seen += 1.0;
      if (!p.box.valid()) continue;
      int best = -1;
      double best_iou = threshold;
      for (std::size_t g = 0; g < gold[s].size(); ++g) {
        if (used[s][g] || gold[s][g].label != label) continue;
        const double v = iou(p.box, gold[s][g].box);
        if (v >= best_iou && (best < 0 || v > best_iou)) {
          best = static_cast<int>(g);
          best_iou = v;
        }
      }
      if (best >= 0) {
        used[s][static_cast<std::size_t>(best)] = true;
        tp += 1.0;
        ap_sum += tp / seen;
      }
    }
    out.map += ap_sum / static_cast<double>(count);
    out.mar += tp / static_cast<double>(count);
  }
  out.map /= static_cast<double>(n_gold.size());
  out.mar /= static_cast<double>(n_gold.size());
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["fingerprint"] = fingerprint;
  j["counts"] = counts;
  j["values"] = values;
  return j.dump(2);
}

MetricReport MetricReport::from_json(std::string_view text) {
  MetricReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.counts = j.at("counts").get<std::map<std::string, std::size_t>>();
    r.values = j.at("values").get<std::map<std::string, std::map<std::string, double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIoError, std::string("metric report: ") + e.what());
  }
  return r;
}

std::string_view primary_metric(Task task) {
  switch (task) {
    case Task::kCaption: return "cider";
    case Task::kSummarization: return "rouge_l";
    case Task::kDetection: return "map";
    case Task::kGrounding:
    case Task::kEntailment:
    case Task::kVqa:
    case Task::kClassification:
      return "accuracy";
  }
  return "accuracy";
}

}  // namespace jointseq
