#include "jointseq/model.hpp"

#include <cmath>
#include <string>

#include "jointseq/error.hpp"
#include "jointseq/rng.hpp"

namespace jointseq {

void ModelHyper::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidHyper, msg); };
  if (d_model == 0 || n_heads == 0 || d_ff == 0) fail("dimensions must be positive");
  if (d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
         std::to_string(n_heads));
  }
  if (n_enc == 0 || n_dec == 0) fail("need at least one encoder and one decoder layer");
  if (d_model < static_cast<std::size_t>(kPatchCodeWidth)) {
    fail("d_model must be at least the patch code width " + std::to_string(kPatchCodeWidth));
  }
  if (vocab_size < 4) fail("vocab_size too small");
  if (max_length < 2) fail("max_length too small");
  if (rel_clip < 1) fail("rel_clip must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
}

ModelParams::ModelParams(const ModelHyper& hyper) : hyper_(hyper) {
  hyper_.validate();
  const std::size_t d = hyper.d_model;
  tokens_ = add("embed.tokens", {hyper.vocab_size, d}, true);
  patch_proj_ = add("embed.patch_proj", {d, d}, true);
  patch_pos_ = add("embed.patch_pos", {static_cast<std::size_t>(kNumCells), d}, true);
  for (std::size_t l = 0; l < hyper.n_enc; ++l) {
    const std::string p = "encoder." + std::to_string(l) + ".";
    EncoderLayer layer;
    layer.ln1 = add_ln(p + "ln1");
    layer.attn = add_attention(p + "attn", true);
    layer.ln2 = add_ln(p + "ln2");
    layer.ffn = add_ffn(p + "ffn");
    enc_.push_back(layer);
  }
  enc_final_ = add_ln("encoder.final_ln");
  for (std::size_t l = 0; l < hyper.n_dec; ++l) {
    const std::string p = "decoder." + std::to_string(l) + ".";
    DecoderLayer layer;
    layer.ln1 = add_ln(p + "ln1");
    layer.self_attn = add_attention(p + "self_attn", true);
    layer.ln2 = add_ln(p + "ln2");
    layer.cross_attn = add_attention(p + "cross_attn", false);
    layer.ln3 = add_ln(p + "ln3");
    layer.ffn = add_ffn(p + "ffn");
    dec_.push_back(layer);
  }
  dec_final_ = add_ln("decoder.final_ln");
}

std::size_t ModelParams::add(const std::string& name, std::vector<std::size_t> shape,
                             bool matrix) {
  const std::size_t slot = tensors_.size();
  tensors_.emplace_back(std::move(shape), 0.0);
  names_.push_back(name);
  matrix_.push_back(matrix);
  index_.emplace(name, slot);
  return slot;
}

ModelParams::AttnSlots ModelParams::add_attention(const std::string& prefix,
                                                  bool with_rel_bias) {
  const std::size_t d = hyper_.d_model;
  AttnSlots s{};
  s.q_w = add(prefix + ".q.w", {d, d}, true);
  s.q_b = add(prefix + ".q.b", {d}, false);
  s.k_w = add(prefix + ".k.w", {d, d}, true);
  s.k_b = add(prefix + ".k.b", {d}, false);
  s.v_w = add(prefix + ".v.w", {d, d}, true);
  s.v_b = add(prefix + ".v.b", {d}, false);
  s.o_w = add(prefix + ".o.w", {d, d}, true);
  s.o_b = add(prefix + ".o.b", {d}, false);
  s.head_scale = add(prefix + ".head_scale", {hyper_.n_heads}, false);
  if (with_rel_bias) {
    s.rel_bias = add(prefix + ".rel_bias",
                     {hyper_.n_heads, static_cast<std::size_t>(2 * hyper_.rel_clip + 1)}, false);
  }
  return s;
}

ModelParams::LnSlots ModelParams::add_ln(const std::string& prefix) {
  LnSlots s{};
  s.gain = add(prefix + ".gain", {hyper_.d_model}, false);
  s.bias = add(prefix + ".bias", {hyper_.d_model}, false);
  return s;
}

ModelParams::FfnSlots ModelParams::add_ffn(const std::string& prefix) {
  FfnSlots s{};
  s.w1 = add(prefix + ".w1", {hyper_.d_model, hyper_.d_ff}, true);
  s.b1 = add(prefix + ".b1", {hyper_.d_ff}, false);
  s.w2 = add(prefix + ".w2", {hyper_.d_ff, hyper_.d_model}, true);
  s.b2 = add(prefix + ".b2", {hyper_.d_model}, false);
  return s;
}

std::size_t ModelParams::n_scalars() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

Tensor& ModelParams::mutable_tensor(std::size_t slot) {
  ++version_;
  return tensors_.at(slot);
}

std::optional<std::size_t> ModelParams::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

ModelParams init_params(const ModelHyper& hyper, std::uint64_t seed) {
  ModelParams params(hyper);
  for (std::size_t slot = 0; slot < params.size(); ++slot) {
    Tensor& t = params.mutable_tensor(slot);
    const std::string& name = params.name(slot);
    if (params.is_matrix(slot)) {
      // Each tensor draws from its own stream so adding a layer does not
      // shift the others.
      std::mt19937_64 rng(derive_seed(seed, slot));
      const double fan_in = static_cast<double>(t.shape()[0]);
      const double fan_out = static_cast<double>(t.shape()[1]);
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : t.values()) v = (2.0 * uniform01(rng) - 1.0) * a;
    } else if (ends_with(name, ".gain") || ends_with(name, ".head_scale")) {
      t.fill(1.0);
    } else {
      t.fill(0.0);
    }
  }
  // The PAD embedding stays zero: PAD never enters a sequence as content.
  auto pad_row = params.mutable_tensor(params.tokens_slot()).row(UnifiedVocab::kPad);
  std::fill(pad_row.begin(), pad_row.end(), 0.0);
  return params;
}

Gradients Gradients::zeros_like(const ModelParams& params) {
  Gradients g;
  g.tensors.reserve(params.size());
  for (const auto& t : params.tensors()) g.tensors.emplace_back(t.shape(), 0.0);
  return g;
}

void Gradients::add_scaled(const Gradients& other, double s) {
  if (other.tensors.size() != tensors.size()) {
    throw Error(ErrorCode::kShapeMismatch, "gradient slot count");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    require_shape(other.tensors[i], tensors[i].shape(), "gradient");
    for (std::size_t j = 0; j < tensors[i].size(); ++j) tensors[i][j] += s * other.tensors[i][j];
  }
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const auto& t : tensors) {
    for (double v : t.values()) s += v * v;
  }
  return s;
}

void Gradients::scale(double s) {
  for (auto& t : tensors) {
    for (double& v : t.values()) v *= s;
  }
}

ForwardPass::ForwardPass(const ModelParams& params, const ForwardOptions& options)
    : params_(&params),
      version_(params.version()),
      train_(options.train),
      dropout_(options.dropout.value_or(params.hyper().dropout)),
      rng_(options.dropout_seed),
      tape_(options.record) {
  param_vars_.reserve(params.size());
  for (std::size_t slot = 0; slot < params.size(); ++slot) {
    param_vars_.push_back(tape_.parameter(params.tensor(slot), slot));
  }
}

Var ForwardPass::loss(const TokenSeq& target, double label_smoothing) {
  if (!logits.valid()) throw Error(ErrorCode::kStaleTape, "loss() before forward()");
  return ops::smoothed_cross_entropy(tape_, logits, target, label_smoothing,
                                     UnifiedVocab::kPad);
}

void ForwardPass::backward(Var root, Gradients& grads, double seed) {
  if (!tape_.recording()) throw Error(ErrorCode::kStaleTape, "tape did not record gradients");
  if (consumed_) throw Error(ErrorCode::kStaleTape, "tape already consumed by backward()");
  if (params_->version() != version_) {
    throw Error(ErrorCode::kStaleTape, "parameters changed after the forward pass");
  }
  if (grads.tensors.size() != params_->size()) {
    throw Error(ErrorCode::kShapeMismatch, "gradient buffer does not match parameters");
  }
  consumed_ = true;
  tape_.backward(root, seed);
  tape_.for_each_param_grad([&](std::size_t slot, const Tensor& g) {
    Tensor& dst = grads.tensors[slot];
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

namespace {

Var layer_norm(ForwardPass& p, Var x, const ModelParams::LnSlots& ln) {
  return ops::layer_norm(p.tape(), x, p.param(ln.gain), p.param(ln.bias));
}

Var drop(ForwardPass& p, Var x) {
  auto* rng = p.dropout_rng();
  if (!rng) return x;
  return ops::dropout(p.tape(), x, p.dropout_p(), *rng);
}

Var attention_block(ForwardPass& p, Var x_normed, Var memory,
                    const ModelParams::AttnSlots& s, const ops::AttentionSpec& spec,
                    std::pair<Tensor, Tensor>* kv_cache = nullptr, bool cache_ready = false) {
  Tape& t = p.tape();
  Var q = ops::linear(t, x_normed, p.param(s.q_w), p.param(s.q_b));
  Var k, v;
  if (cache_ready) {
    k = t.constant(kv_cache->first);
    v = t.constant(kv_cache->second);
  } else {
    k = ops::linear(t, memory, p.param(s.k_w), p.param(s.k_b));
    v = ops::linear(t, memory, p.param(s.v_w), p.param(s.v_b));
    if (kv_cache) *kv_cache = {t.value(k), t.value(v)};
  }
  Var rel = s.rel_bias ? p.param(*s.rel_bias) : Var{};
  Var ctx = ops::attention(t, q, k, v, p.param(s.head_scale), rel, spec);
  return ops::linear(t, ctx, p.param(s.o_w), p.param(s.o_b));
}

Var ffn_block(ForwardPass& p, Var x_normed, const ModelParams::FfnSlots& s) {
  Tape& t = p.tape();
  Var h = ops::gelu(t, ops::linear(t, x_normed, p.param(s.w1), p.param(s.b1)));
  return ops::linear(t, h, p.param(s.w2), p.param(s.b2));
}

Var residual(ForwardPass& p, Var x, Var branch) {
  return ops::add(p.tape(), x, drop(p, branch));
}

void check_length(std::size_t len, const ModelHyper& h, const char* what) {
  if (len > h.max_length) {
    throw Error(ErrorCode::kSequenceTooLong, std::string(what) + " length " +
                                                 std::to_string(len) + " exceeds " +
                                                 std::to_string(h.max_length));
  }
}

}  // namespace

Var encode(ForwardPass& pass, const EncoderInput& input) {
  const ModelParams& params = pass.params();
  const ModelHyper& h = params.hyper();
  check_length(input.length(), h, "encoder input");
  if (input.length() == 0) throw Error(ErrorCode::kShapeMismatch, "empty encoder input");
  Tape& t = pass.tape();

  std::vector<std::size_t> patch_positions;
  std::vector<bool> valid(input.length(), true);
  for (std::size_t i = 0; i < input.length(); ++i) {
    const TokenId id = input.tokens[i];
    if (id == kPatchSlot) {
      patch_positions.push_back(i);
    } else {
      if (id < 0 || static_cast<std::size_t>(id) >= h.vocab_size) {
        throw Error(ErrorCode::kOutOfRange, "encoder token " + std::to_string(id));
      }
      if (id == UnifiedVocab::kPad) valid[i] = false;
    }
  }
  if (patch_positions.size() != input.n_patches()) {
    throw Error(ErrorCode::kShapeMismatch, "patch slot count " +
                                               std::to_string(patch_positions.size()) +
                                               " vs patches " +
                                               std::to_string(input.n_patches()));
  }
  if (patch_positions.size() > static_cast<std::size_t>(kNumCells)) {
    throw Error(ErrorCode::kShapeMismatch, "more patches than grid cells");
  }

  Var x = ops::gather_rows(t, pass.param(params.tokens_slot()), input.tokens);
  if (!patch_positions.empty()) {
    require_shape(input.patches, {patch_positions.size(), h.d_model}, "patches");
    Var patches = t.constant(input.patches);
    Var proj = ops::matmul(t, patches, pass.param(params.patch_proj_slot()));
    std::vector<TokenId> cells(patch_positions.size());
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<TokenId>(i);
    Var pos = ops::gather_rows(t, pass.param(params.patch_pos_slot()), cells);
    Var patch_emb = ops::add(t, proj, pos);
    x = ops::add(t, x, ops::scatter_rows(t, patch_emb, patch_positions, input.length()));
  }
  x = drop(pass, x);

  ops::AttentionSpec spec;
  spec.n_heads = static_cast<int>(h.n_heads);
  spec.rel_clip = h.rel_clip;
  spec.key_valid = valid;
  for (const auto& layer : params.encoder_layers()) {
    Var hn = layer_norm(pass, x, layer.ln1);
    x = residual(pass, x, attention_block(pass, hn, hn, layer.attn, spec));
    x = residual(pass, x, ffn_block(pass, layer_norm(pass, x, layer.ln2), layer.ffn));
  }
  Var out = layer_norm(pass, x, params.encoder_final_ln());
  pass.encoder_out = out;
  pass.encoder_valid = std::move(valid);
  return out;
}

Var decode(ForwardPass& pass, Var memory, const std::vector<bool>& memory_valid,
           const TokenSeq& decoder_input) {
  const ModelParams& params = pass.params();
  const ModelHyper& h = params.hyper();
  check_length(decoder_input.size(), h, "decoder input");
  if (decoder_input.empty() || decoder_input.front() != UnifiedVocab::kBos) {
    throw Error(ErrorCode::kShapeMismatch, "decoder input must start with BOS");
  }
  for (TokenId id : decoder_input) {
    if (id < 0 || static_cast<std::size_t>(id) >= h.vocab_size) {
      throw Error(ErrorCode::kOutOfRange, "decoder token " + std::to_string(id));
    }
  }
  Tape& t = pass.tape();
  Var tokens = pass.param(params.tokens_slot());
  Var x = drop(pass, ops::gather_rows(t, tokens, decoder_input));

  ops::AttentionSpec self_spec;
  self_spec.n_heads = static_cast<int>(h.n_heads);
  self_spec.rel_clip = h.rel_clip;
  self_spec.mask = ops::MaskKind::kCausal;
  ops::AttentionSpec cross_spec;
  cross_spec.n_heads = static_cast<int>(h.n_heads);
  cross_spec.rel_clip = h.rel_clip;
  cross_spec.key_valid = memory_valid;

  auto* cache = pass.cross_cache;
  if (cache && pass.tape().recording()) {
    throw Error(ErrorCode::kStaleTape, "cross-attention cache on a recording tape");
  }
  const bool cache_ready = cache && cache->size() == params.decoder_layers().size();
  if (cache && !cache_ready) cache->assign(params.decoder_layers().size(), {});

  for (std::size_t l = 0; l < params.decoder_layers().size(); ++l) {
    const auto& layer = params.decoder_layers()[l];
    Var hn = layer_norm(pass, x, layer.ln1);
    x = residual(pass, x, attention_block(pass, hn, hn, layer.self_attn, self_spec));
    Var hc = layer_norm(pass, x, layer.ln2);
    x = residual(pass, x, attention_block(pass, hc, memory, layer.cross_attn, cross_spec,
                                          cache ? &(*cache)[l] : nullptr, cache_ready));
    x = residual(pass, x, ffn_block(pass, layer_norm(pass, x, layer.ln3), layer.ffn));
  }
  Var hf = layer_norm(pass, x, params.decoder_final_ln());
  // Tied output projection, scaled so initial logits stay near uniform.
  Var logits =
      ops::matmul_nt(t, hf, tokens, 1.0 / std::sqrt(static_cast<double>(h.d_model)));
  pass.logits = logits;
  return logits;
}

Var forward(ForwardPass& pass, const EncoderInput& input, const TokenSeq& decoder_input) {
  Var memory = encode(pass, input);
  return decode(pass, memory, pass.encoder_valid, decoder_input);
}

Tensor forward_logits(const ModelParams& params, const EncoderInput& input,
                      const TokenSeq& decoder_input) {
  ForwardPass pass(params, ForwardOptions::inference());
  Var logits = forward(pass, input, decoder_input);
  return pass.tape().value(logits);
}

EncoderInput text_only_input(const TokenSeq& tokens) {
  EncoderInput in;
  in.tokens.reserve(tokens.size() + 2);
  in.tokens.push_back(UnifiedVocab::kBos);
  in.tokens.insert(in.tokens.end(), tokens.begin(), tokens.end());
  in.tokens.push_back(UnifiedVocab::kEos);
  return in;
}

}  // namespace jointseq
