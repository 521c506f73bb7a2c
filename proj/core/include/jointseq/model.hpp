#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "jointseq/autodiff.hpp"
#include "jointseq/synth_tasks.hpp"
#include "jointseq/tensor.hpp"
#include "jointseq/vocab.hpp"

namespace jointseq {

struct ModelHyper {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_enc = 2;
  std::size_t n_dec = 2;
  std::size_t d_ff = 256;
  std::size_t vocab_size = 386;
  std::size_t max_length = kDefaultMaxLength;
  int rel_clip = 32;
  double dropout = 0.1;

  // Throws Error(kInvalidHyper).
  void validate() const;
  bool operator==(const ModelHyper&) const = default;
};

// Parameter tensors in a fixed registration order. Slot indices of the named
// blocks are kept so the forward pass does not look names up.
class ModelParams {
 public:
  struct AttnSlots {
    std::size_t q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b, head_scale;
    std::optional<std::size_t> rel_bias;
  };
  struct LnSlots {
    std::size_t gain, bias;
  };
  struct FfnSlots {
    std::size_t w1, b1, w2, b2;
  };
  struct EncoderLayer {
    LnSlots ln1, ln2;
    AttnSlots attn;
    FfnSlots ffn;
  };
  struct DecoderLayer {
    LnSlots ln1, ln2, ln3;
    AttnSlots self_attn, cross_attn;
    FfnSlots ffn;
  };

  // Zero-valued parameters laid out for `hyper`.
  explicit ModelParams(const ModelHyper& hyper);

  const ModelHyper& hyper() const { return hyper_; }
  std::size_t size() const { return tensors_.size(); }
  std::size_t n_scalars() const;

  const Tensor& tensor(std::size_t slot) const { return tensors_.at(slot); }
  // Mutable access invalidates tapes built from earlier values.
  Tensor& mutable_tensor(std::size_t slot);
  const std::string& name(std::size_t slot) const { return names_.at(slot); }
  std::optional<std::size_t> find(const std::string& name) const;
  const std::vector<Tensor>& tensors() const { return tensors_; }

  // Bumped by every mutable access.
  std::uint64_t version() const { return version_; }
  void touch() { ++version_; }

  std::size_t tokens_slot() const { return tokens_; }
  std::size_t patch_proj_slot() const { return patch_proj_; }
  std::size_t patch_pos_slot() const { return patch_pos_; }
  const std::vector<EncoderLayer>& encoder_layers() const { return enc_; }
  const std::vector<DecoderLayer>& decoder_layers() const { return dec_; }
  LnSlots encoder_final_ln() const { return enc_final_; }
  LnSlots decoder_final_ln() const { return dec_final_; }

  // Whether the slot is a weight matrix (Xavier initialised) as opposed to a
  // bias, norm parameter, head scale or relative bias.
  bool is_matrix(std::size_t slot) const { return matrix_.at(slot); }

  bool operator==(const ModelParams& o) const {
    return hyper_ == o.hyper_ && names_ == o.names_ && tensors_ == o.tensors_;
  }

 private:
  std::size_t add(const std::string& name, std::vector<std::size_t> shape, bool matrix);
  AttnSlots add_attention(const std::string& prefix, bool with_rel_bias);
  LnSlots add_ln(const std::string& prefix);
  FfnSlots add_ffn(const std::string& prefix);

  ModelHyper hyper_;
  std::vector<Tensor> tensors_;
  std::vector<std::string> names_;
  std::vector<bool> matrix_;
  std::map<std::string, std::size_t> index_;
  std::size_t tokens_ = 0, patch_proj_ = 0, patch_pos_ = 0;
  std::vector<EncoderLayer> enc_;
  std::vector<DecoderLayer> dec_;
  LnSlots enc_final_{}, dec_final_{};
  std::uint64_t version_ = 0;
};

// Xavier uniform for weight matrices, unit norm gains, head scales 1, zero
// biases and relative-position tables. Deterministic in `seed`.
ModelParams init_params(const ModelHyper& hyper, std::uint64_t seed);

// Gradients aligned slot by slot with ModelParams.
struct Gradients {
  std::vector<Tensor> tensors;

  static Gradients zeros_like(const ModelParams& params);
  void add_scaled(const Gradients& other, double s);
  double squared_norm() const;
  void scale(double s);
};

struct ForwardOptions {
  bool train = false;  // enables dropout
  std::uint64_t dropout_seed = 0;
  bool record = true;  // false builds a value-only tape
  // Overrides hyper().dropout when set.
  std::optional<double> dropout;

  // Eval mode, value-only tape.
  static ForwardOptions inference() {
    ForwardOptions o;
    o.record = false;
    return o;
  }
};

// One forward pass and the tape that recorded it.
class ForwardPass {
 public:
  ForwardPass(const ModelParams& params, const ForwardOptions& options);

  Tape& tape() { return tape_; }
  const ModelParams& params() const { return *params_; }
  Var param(std::size_t slot) const { return param_vars_.at(slot); }
  std::mt19937_64* dropout_rng() { return train_ ? &rng_ : nullptr; }
  double dropout_p() const { return train_ ? dropout_ : 0.0; }

  Var encoder_out;
  std::vector<bool> encoder_valid;
  Var logits;

  // Cross-attention keys and values per decoder layer for a fixed memory.
  // When set on a value-only pass, decode() fills it on first use and reuses
  // it afterwards.
  std::vector<std::pair<Tensor, Tensor>>* cross_cache = nullptr;

  // Appends the smoothed cross-entropy of `logits` against `target`.
  Var loss(const TokenSeq& target, double label_smoothing);

  // Reverse-mode pass from `root` (a scalar). Adds seed * d(root)/d(param)
  // into `grads`. Throws Error(kStaleTape) when the parameters changed since
  // the forward pass, or when the tape was already consumed or never
  // recorded.
  void backward(Var root, Gradients& grads, double seed = 1.0);

 private:
  const ModelParams* params_;
  std::uint64_t version_;
  bool train_;
  double dropout_;
  bool consumed_ = false;
  std::mt19937_64 rng_;
  Tape tape_;
  std::vector<Var> param_vars_;
};

// Final (normed) encoder states. PAD tokens are masked out as keys.
Var encode(ForwardPass& pass, const EncoderInput& input);
// Logits (dec_len x vocab_size) for a decoder input starting with BOS,
// attending over `memory` whose valid keys are `memory_valid`.
Var decode(ForwardPass& pass, Var memory, const std::vector<bool>& memory_valid,
           const TokenSeq& decoder_input);

// Encoder + decoder; sets pass.encoder_out and pass.logits.
Var forward(ForwardPass& pass, const EncoderInput& input, const TokenSeq& decoder_input);

// Convenience: eval-mode logits without recording gradients.
Tensor forward_logits(const ModelParams& params, const EncoderInput& input,
                      const TokenSeq& decoder_input);

// Encoder input consisting of text tokens only: [BOS] tokens [EOS].
EncoderInput text_only_input(const TokenSeq& tokens);

}  // namespace jointseq
