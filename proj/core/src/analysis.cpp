#include "jointseq/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "jointseq/error.hpp"

namespace jointseq {

std::vector<double> embed_subprompt(const ModelParams& params, const UnifiedVocab& vocab,
                                    std::string_view text) {
  const EncoderInput input = text_only_input(vocab.encode_text(text));
  ForwardPass pass(params, ForwardOptions::inference());
  const Tensor& states = pass.tape().value(encode(pass, input));
  std::vector<double> out(states.cols(), 0.0);
  std::size_t n = 0;
  for (std::size_t r = 0; r < states.rows(); ++r) {
    if (!pass.encoder_valid[r]) continue;
    const auto row = states.row(r);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += row[c];
    ++n;
  }
  for (double& v : out) v /= static_cast<double>(n);
  return out;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kShapeMismatch, "cosine: lengths differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::kZeroVector, "cosine of a zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double SimilarityMatrix::at(Task a, Task b) const {
  std::size_t i = tasks.size(), j = tasks.size();
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    if (tasks[k] == a) i = k;
    if (tasks[k] == b) j = k;
  }
  if (i == tasks.size() || j == tasks.size()) {
    throw Error(ErrorCode::kUnknownTask, "task not in similarity matrix");
  }
  return values[i][j];
}

std::string SimilarityMatrix::to_csv() const {
  std::string out = subprompt_name(kind).data();
  for (Task t : tasks) out += "," + std::string(task_name(t));
  out += "\n";
  char buf[64];
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    out += task_name(tasks[i]);
    for (double v : values[i]) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::string subprompt_text(Subprompt kind, Task task) {
  std::string text = template_for(task).field(kind);
  if (kind == Subprompt::kInstancePrompt) {
    const auto pos = text.find("{}");
    if (pos != std::string::npos) text.erase(pos, 2);
  }
  return text;
}

SimilarityMatrix similarity_matrix(const ModelParams& params, const UnifiedVocab& vocab,
                                   Subprompt kind, const std::vector<Task>& tasks) {
  SimilarityMatrix m;
  m.kind = kind;
  m.tasks = tasks;
  std::vector<std::vector<double>> emb;
  emb.reserve(tasks.size());
  for (Task t : tasks) emb.push_back(embed_subprompt(params, vocab, subprompt_text(kind, t)));
  const std::size_t n = tasks.size();
  m.values.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double v;
      try {
        v = cosine_similarity(emb[i], emb[j]);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kZeroVector) throw;
        v = std::numeric_limits<double>::quiet_NaN();
        m.degenerate.emplace_back(i, j);
      }
      m.values[i][j] = v;
      m.values[j][i] = v;
    }
  }
  return m;
}

}  // namespace jointseq
