#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "jointseq/box.hpp"
#include "jointseq/model.hpp"
#include "jointseq/synth_tasks.hpp"
#include "jointseq/vocab.hpp"

namespace jointseq {

// Prefix tree over tokenized labels. A label is complete where the node
// carries the EOS edge.
class LabelTrie {
 public:
  // Throws Error(kEmptyLabelSet) for an empty set or an empty label.
  static LabelTrie build(const std::vector<std::string>& labels, const UnifiedVocab& vocab);

  // Sorted children of the node reached by `prefix`, EOS included when the
  // prefix spells a whole label. Throws Error(kInvalidPrefix).
  std::vector<TokenId> allowed_next(std::span<const TokenId> prefix) const;

  // Whether `seq` is a label followed by EOS.
  bool accepts(std::span<const TokenId> seq) const;

  std::size_t n_labels() const { return n_labels_; }
  std::size_t n_nodes() const { return nodes_.size(); }

  // Node walk used by grammar constraints; -1 when the edge does not exist.
  int child(int node, TokenId token) const;
  bool terminal(int node) const { return nodes_.at(static_cast<std::size_t>(node)).terminal; }
  std::vector<TokenId> children(int node) const;

 private:
  struct Node {
    std::map<TokenId, int> children;
    bool terminal = false;
  };
  std::vector<Node> nodes_;
  std::size_t n_labels_ = 0;
};

// Restricts the next token given the tokens generated so far.
class DecodeConstraint {
 public:
  virtual ~DecodeConstraint() = default;
  // Sorted allowed ids; never empty for a prefix the constraint produced.
  virtual std::vector<TokenId> allowed(std::span<const TokenId> generated) const = 0;
};

class TrieConstraint : public DecodeConstraint {
 public:
  explicit TrieConstraint(LabelTrie trie) : trie_(std::move(trie)) {}
  std::vector<TokenId> allowed(std::span<const TokenId> generated) const override;
  const LabelTrie& trie() const { return trie_; }

 private:
  LabelTrie trie_;
};

// Exactly four location tokens, then EOS.
class BoxConstraint : public DecodeConstraint {
 public:
  explicit BoxConstraint(const UnifiedVocab& vocab) : vocab_(vocab) {}
  std::vector<TokenId> allowed(std::span<const TokenId> generated) const override;

 private:
  UnifiedVocab vocab_;
};

// (four location tokens, class label)* then EOS.
class DetectionConstraint : public DecodeConstraint {
 public:
  DetectionConstraint(const UnifiedVocab& vocab, LabelTrie labels)
      : vocab_(vocab), labels_(std::move(labels)) {}
  std::vector<TokenId> allowed(std::span<const TokenId> generated) const override;

 private:
  UnifiedVocab vocab_;
  LabelTrie labels_;
};

// Constraint used at evaluation for `task`, or nullptr for free text.
std::unique_ptr<DecodeConstraint> constraint_for(Task task, const UnifiedVocab& vocab);

struct Generation {
  TokenSeq tokens;  // without the final EOS
  bool ended = false;  // stopped at EOS rather than max_len
  // Allowed-set size at each step (empty when unconstrained).
  std::vector<std::size_t> allowed_sizes;
};

// Greedy decoding. Disallowed tokens are masked before the argmax; ties go
// to the lowest id.
Generation generate(const ModelParams& params, const EncoderInput& input,
                    const DecodeConstraint* constraint, std::size_t max_len);

// Argmax of `logits` over `allowed` (all ids when empty), lowest id on ties.
TokenId greedy_pick(std::span<const double> logits, const std::vector<TokenId>& allowed);

// Box from exactly four location tokens; nullopt when malformed or
// degenerate.
std::optional<Box> parse_box(const UnifiedVocab& vocab, std::span<const TokenId> tokens);

struct Detection {
  Box box;
  std::string label;
};

// Objects of a detection sequence in order. Boxes are not validated; parsing
// stops at the first malformed piece.
std::vector<Detection> parse_detections(const UnifiedVocab& vocab,
                                        std::span<const TokenId> tokens);

}  // namespace jointseq
