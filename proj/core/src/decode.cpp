#include "jointseq/decode.hpp"

#include <algorithm>
#include <limits>

#include "jointseq/error.hpp"

namespace jointseq {

LabelTrie LabelTrie::build(const std::vector<std::string>& labels, const UnifiedVocab& vocab) {
  if (labels.empty()) throw Error(ErrorCode::kEmptyLabelSet, "no labels");
  LabelTrie trie;
  trie.nodes_.emplace_back();
  for (const auto& label : labels) {
    const TokenSeq toks = vocab.encode_text(label);
    if (toks.empty()) throw Error(ErrorCode::kEmptyLabelSet, "empty label");
    int node = 0;
    for (TokenId t : toks) {
      auto it = trie.nodes_[static_cast<std::size_t>(node)].children.find(t);
      if (it == trie.nodes_[static_cast<std::size_t>(node)].children.end()) {
        const int next = static_cast<int>(trie.nodes_.size());
        trie.nodes_[static_cast<std::size_t>(node)].children.emplace(t, next);
        trie.nodes_.emplace_back();
        node = next;
      } else {
        node = it->second;
      }
    }
    if (!trie.nodes_[static_cast<std::size_t>(node)].terminal) ++trie.n_labels_;
    trie.nodes_[static_cast<std::size_t>(node)].terminal = true;
  }
  return trie;
}

int LabelTrie::child(int node, TokenId token) const {
  const auto& ch = nodes_.at(static_cast<std::size_t>(node)).children;
  auto it = ch.find(token);
  return it == ch.end() ? -1 : it->second;
}

std::vector<TokenId> LabelTrie::children(int node) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(node));
  std::vector<TokenId> out;
  out.reserve(n.children.size() + 1);
  if (n.terminal) out.push_back(UnifiedVocab::kEos);
  for (const auto& [tok, _] : n.children) out.push_back(tok);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<TokenId> LabelTrie::allowed_next(std::span<const TokenId> prefix) const {
  int node = 0;
  for (TokenId t : prefix) {
    node = child(node, t);
    if (node < 0) throw Error(ErrorCode::kInvalidPrefix, "prefix leaves the trie");
  }
  return children(node);
}

bool LabelTrie::accepts(std::span<const TokenId> seq) const {
  if (seq.empty() || seq.back() != UnifiedVocab::kEos) return false;
  int node = 0;
  for (TokenId t : seq.first(seq.size() - 1)) {
    node = child(node, t);
    if (node < 0) return false;
  }
  return terminal(node);
}

std::vector<TokenId> TrieConstraint::allowed(std::span<const TokenId> generated) const {
  return trie_.allowed_next(generated);
}

namespace {

std::vector<TokenId> location_ids(const UnifiedVocab& vocab) {
  std::vector<TokenId> out;
  out.reserve(static_cast<std::size_t>(vocab.n_loc()));
  for (TokenId t = vocab.loc_base(); t < vocab.total_size(); ++t) out.push_back(t);
  return out;
}

}  // namespace

std::vector<TokenId> BoxConstraint::allowed(std::span<const TokenId> generated) const {
  if (generated.size() < 4) {
    for (TokenId t : generated) {
      if (!vocab_.is_location(t)) throw Error(ErrorCode::kInvalidPrefix, "non-location in box");
    }
    return location_ids(vocab_);
  }
  if (generated.size() == 4) return {UnifiedVocab::kEos};
  throw Error(ErrorCode::kInvalidPrefix, "box already complete");
}

std::vector<TokenId> DetectionConstraint::allowed(std::span<const TokenId> generated) const {
  // Walk the grammar: each object is 4 locations then a label path.
  std::size_t i = 0;
  while (true) {
    // Object boundary: a new box or the end.
    if (i == generated.size()) {
      std::vector<TokenId> out{UnifiedVocab::kEos};
      const auto locs = location_ids(vocab_);
      out.insert(out.end(), locs.begin(), locs.end());
      return out;
    }
    for (int k = 0; k < 4; ++k, ++i) {
      if (i == generated.size()) return location_ids(vocab_);
      if (!vocab_.is_location(generated[i])) {
        throw Error(ErrorCode::kInvalidPrefix, "expected a location token");
      }
    }
    int node = 0;
    while (i < generated.size() && !vocab_.is_location(generated[i])) {
      node = labels_.child(node, generated[i]);
      if (node < 0) throw Error(ErrorCode::kInvalidPrefix, "label leaves the trie");
      ++i;
    }
    if (i == generated.size()) {
      // Inside or at the end of a label.
      std::vector<TokenId> out = labels_.children(node);
      if (labels_.terminal(node)) {
        const auto locs = location_ids(vocab_);
        out.insert(out.end(), locs.begin(), locs.end());
      }
      std::sort(out.begin(), out.end());
      return out;
    }
    if (!labels_.terminal(node)) {
      throw Error(ErrorCode::kInvalidPrefix, "box follows an incomplete label");
    }
  }
}

std::unique_ptr<DecodeConstraint> constraint_for(Task task, const UnifiedVocab& vocab) {
  switch (task) {
    case Task::kGrounding:
      return std::make_unique<BoxConstraint>(vocab);
    case Task::kDetection:
      return std::make_unique<DetectionConstraint>(
          vocab, LabelTrie::build(closed_set_labels(LabelSet::kClassNames), vocab));
    case Task::kClassification:
      return std::make_unique<TrieConstraint>(
          LabelTrie::build(closed_set_labels(LabelSet::kClassNames), vocab));
    case Task::kEntailment:
      return std::make_unique<TrieConstraint>(
          LabelTrie::build(closed_set_labels(LabelSet::kEntailmentAnswers), vocab));
    case Task::kVqa:
      return std::make_unique<TrieConstraint>(
          LabelTrie::build(closed_set_labels(LabelSet::kColors), vocab));
    case Task::kCaption:
    case Task::kSummarization:
      return nullptr;
  }
  throw Error(ErrorCode::kUnknownTask, "constraint_for");
}

TokenId greedy_pick(std::span<const double> logits, const std::vector<TokenId>& allowed) {
  TokenId best = -1;
  double best_v = -std::numeric_limits<double>::infinity();
  auto consider = [&](TokenId id) {
    const double v = logits[static_cast<std::size_t>(id)];
    // Strict comparison over ascending ids keeps the lowest id on ties.
    if (best < 0 || v > best_v) {
      best = id;
      best_v = v;
    }
  };
  if (allowed.empty()) {
    for (TokenId id = 0; id < static_cast<TokenId>(logits.size()); ++id) consider(id);
  } else {
    std::vector<TokenId> sorted = allowed;
    std::sort(sorted.begin(), sorted.end());
    for (TokenId id : sorted) {
      if (id < 0 || static_cast<std::size_t>(id) >= logits.size()) {
        throw Error(ErrorCode::kOutOfRange, "allowed id " + std::to_string(id));
      }
      consider(id);
    }
  }
  return best;
}

Generation generate(const ModelParams& params, const EncoderInput& input,
                    const DecodeConstraint* constraint, std::size_t max_len) {
  Generation gen;
  ForwardPass enc(params, ForwardOptions::inference());
  const Tensor memory = enc.tape().value(encode(enc, input));
  const std::vector<bool> valid = enc.encoder_valid;
  std::vector<std::pair<Tensor, Tensor>> cache;

  TokenSeq prefix{UnifiedVocab::kBos};
  for (std::size_t step = 0; step < max_len; ++step) {
    ForwardPass pass(params, ForwardOptions::inference());
    pass.cross_cache = &cache;
    // Once the cache holds keys and values the memory itself is not read.
    Var mem = pass.tape().constant(cache.empty() ? memory : Tensor());
    Var logits = decode(pass, mem, valid, prefix);
    const Tensor& lv = pass.tape().value(logits);
    const auto last = lv.row(lv.rows() - 1);

    std::vector<TokenId> allowed;
    if (constraint) {
      allowed = constraint->allowed(gen.tokens);
      gen.allowed_sizes.push_back(allowed.size());
    }
    const TokenId next = greedy_pick(last, allowed);
    if (next == UnifiedVocab::kEos) {
      gen.ended = true;
      break;
    }
    gen.tokens.push_back(next);
    prefix.push_back(next);
    if (prefix.size() >= params.hyper().max_length) break;
  }
  return gen;
}

std::optional<Box> parse_box(const UnifiedVocab& vocab, std::span<const TokenId> tokens) {
  if (tokens.size() != 4) return std::nullopt;
  for (TokenId t : tokens) {
    if (!vocab.is_location(t)) return std::nullopt;
  }
  Box b{vocab.dequantize_coord(tokens[0]), vocab.dequantize_coord(tokens[1]),
        vocab.dequantize_coord(tokens[2]), vocab.dequantize_coord(tokens[3])};
  if (!b.valid()) return std::nullopt;
  return b;
}

std::vector<Detection> parse_detections(const UnifiedVocab& vocab,
                                        std::span<const TokenId> tokens) {
  std::vector<Detection> out;
  std::size_t i = 0;
  while (i + 4 <= tokens.size()) {
    bool four_locs = true;
    for (std::size_t k = 0; k < 4; ++k) four_locs = four_locs && vocab.is_location(tokens[i + k]);
    if (!four_locs) break;
    // Degenerate boxes are kept; they simply never match a gold box.
    const Box box{vocab.dequantize_coord(tokens[i]), vocab.dequantize_coord(tokens[i + 1]),
                  vocab.dequantize_coord(tokens[i + 2]), vocab.dequantize_coord(tokens[i + 3])};
    i += 4;
    const std::size_t start = i;
    while (i < tokens.size() && vocab.is_text(tokens[i])) ++i;
    if (i < tokens.size() && !vocab.is_location(tokens[i])) break;
    std::string label = vocab.decode_text(tokens.subspan(start, i - start));
    if (!label.empty()) out.push_back(Detection{box, std::move(label)});
  }
  return out;
}

}  // namespace jointseq
