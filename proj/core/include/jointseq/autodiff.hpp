#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "jointseq/tensor.hpp"

namespace jointseq {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode record of one forward pass. Nodes are appended in evaluation
// order, so reverse creation order is a valid topological order for replay.
// A tape built with record_grad = false only evaluates values.
class Tape {
 public:
  // Receives the tape and the node's own handle.
  using BackwardFn = std::function<void(Tape&, Var)>;

  explicit Tape(bool record_grad = true) : record_(record_grad) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  // Leaf bound to an externally owned tensor that must outlive the tape.
  // Its gradient is reported under `slot` by for_each_param_grad().
  Var parameter(const Tensor& value, std::size_t slot);

  Var push(Tensor value, BackwardFn backward);

  const Tensor& value(Var v) const;
  // Zero-initialised on first access.
  Tensor& grad(Var v);
  bool has_grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root) = seed (root must be a scalar) and replays the tape.
  void backward(Var root, double seed = 1.0);

  // (slot, gradient) for every parameter leaf reached by backward().
  template <typename Fn>
  void for_each_param_grad(Fn&& fn) const {
    for (const auto& n : nodes_) {
      if (n.param_slot >= 0 && !n.grad.empty()) fn(static_cast<std::size_t>(n.param_slot), n.grad);
    }
  }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    BackwardFn backward;
    int param_slot = -1;
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool record_;
};

namespace ops {

// x[n,k] . w[k,m] (+ b[m] when b is valid)
Var linear(Tape& t, Var x, Var w, Var b = {});
Var matmul(Tape& t, Var a, Var b);
// scale * a[n,k] . b[m,k]^T
Var matmul_nt(Tape& t, Var a, Var b, double scale = 1.0);
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
// Sum of a .* b over all elements; scalar result.
Var dot(Tape& t, Var a, Var b);
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5);
// Exact (erf) GELU.
Var gelu(Tape& t, Var x);
// Inverted dropout with keep-probability 1 - p; identity when p == 0.
Var dropout(Tape& t, Var x, double p, std::mt19937_64& rng);
// Rows of table[v,d] selected by ids; negative ids produce zero rows.
Var gather_rows(Tape& t, Var table, std::span<const std::int32_t> ids);
// out[n_rows, d] with out[positions[i]] = src[i] and zero elsewhere.
Var scatter_rows(Tape& t, Var src, std::span<const std::size_t> positions,
                 std::size_t n_rows);

enum class MaskKind { kNone, kCausal };

struct AttentionSpec {
  int n_heads = 1;
  MaskKind mask = MaskKind::kNone;
  // Per key position; false masks the key out. Empty means all valid.
  std::vector<bool> key_valid;
  // Relative-position clipping distance for the bias table.
  int rel_clip = 32;
};

// Multi-head attention core. q[Lq,d], k[Lk,d], v[Lk,d]; head h uses columns
// [h*dh, (h+1)*dh). Per head:
//   out_h = head_scale[h] * softmax(q_h k_h^T / sqrt(dh) + bias_h + mask) v_h
// where bias_h[i,j] = rel_bias[h, clip(j - i) + rel_clip] when rel_bias is
// valid and zero otherwise. Output columns are the concatenated heads.
Var attention(Tape& t, Var q, Var k, Var v, Var head_scale, Var rel_bias,
              const AttentionSpec& spec);

// Mean over non-PAD target positions of -sum_k q_k log softmax(logits)_k,
// q = (1 - eps) onehot(target) + eps / V. Throws kEmptyTarget when every
// target is PAD.
Var smoothed_cross_entropy(Tape& t, Var logits, std::span<const std::int32_t> targets,
                           double eps, std::int32_t pad_id = 0);

}  // namespace ops

// Plain, tape-free multi-head attention used by the op above and exposed for
// inspection. `probs` holds n_heads blocks of Lq x Lk row-stochastic rows.
struct AttentionResult {
  Tensor output;
  Tensor context;  // head outputs before head scaling
  std::vector<Tensor> probs;
};

AttentionResult attention_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                                  const Tensor* head_scale, const Tensor* rel_bias,
                                  const ops::AttentionSpec& spec);

}  // namespace jointseq
