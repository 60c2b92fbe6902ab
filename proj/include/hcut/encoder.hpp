#pragma once

#include <optional>
#include <string>

#include "hcut/tape.hpp"

namespace hcut {

struct ModelConfig {
  size_t num_layers = 2;
  size_t hidden_dim = 32;
  size_t num_heads = 2;
  size_t ffn_dim = 64;
  size_t vocab_size = 8;
  size_t max_len = 24;
  size_t num_classes = 2;

  size_t head_dim() const { return hidden_dim / num_heads; }
  void validate() const;
};

/// One span cut: rows [start, start+length) of the hidden matrix at `layer`.
struct SpanMask {
  size_t layer = 0;
  size_t start = 0;
  size_t length = 0;
};

struct LayerParams {
  Matrix wq, wk, wv, wo;          // hidden_dim × hidden_dim
  Matrix bq, bk, bv, bo;          // 1 × hidden_dim
  Matrix ln1_gain, ln1_bias;      // 1 × hidden_dim
  Matrix ffn_w1, ffn_b1;          // hidden_dim × ffn_dim, 1 × ffn_dim
  Matrix ffn_w2, ffn_b2;          // ffn_dim × hidden_dim, 1 × hidden_dim
  Matrix ln2_gain, ln2_bias;      // 1 × hidden_dim
};

struct EncoderParams {
  Matrix tok_emb;                 // vocab_size × hidden_dim
  Matrix pos_emb;                 // max_len × hidden_dim
  std::vector<LayerParams> layers;
  Matrix cls_w, cls_b;            // hidden_dim × num_classes, 1 × num_classes

  static EncoderParams init(const ModelConfig& cfg, Rng& rng, double init_std = 0.1);
  static EncoderParams zeros(const ModelConfig& cfg);

  // Named tensor manifest in a fixed order shared by the optimizer state,
  // the gradient collection and the checkpoint payload.
  std::vector<std::pair<std::string, Matrix*>> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;
};

struct LayerVars {
  Var wq, wk, wv, wo, bq, bk, bv, bo;
  Var ln1_gain, ln1_bias, ffn_w1, ffn_b1, ffn_w2, ffn_b2, ln2_gain, ln2_bias;
};

struct ParamVars {
  Var tok_emb, pos_emb;
  std::vector<LayerVars> layers;
  Var cls_w, cls_b;
};

/// Registers every parameter tensor as a tape leaf so gradients can be read
/// back per tensor after backward().
ParamVars bind_params(Tape& t, const EncoderParams& p);

struct LayerRecord {
  Matrix hidden;        // post-FFN, post-cut
  Tensor3 attention;    // num_heads × L × L
  std::optional<SpanMask> span;
};

// Per-layer hook, invoked once after each feed-forward sublayer. It receives
// the layer index, the post-FFN hidden values, the original padding mask and
// the layer's attention tensor. The modification it requests is expressed as
// an elementwise 0/1 mask over the hidden matrix (so gradients stay exact);
// the attention mask it returns governs the NEXT layer's attention only —
// cut masks do not accumulate across layers, each hook starts again from the
// padding mask.
struct HookResult {
  std::optional<Matrix> hidden_mul_mask;
  MaskFlags attn_mask;
  std::optional<SpanMask> span;
};
using CutHook = std::function<HookResult(size_t layer, const Matrix& hidden,
                                         const MaskFlags& pad_mask, const Tensor3& attention)>;

Var embed(Tape& t, const ModelConfig& cfg, const ParamVars& pv,
          const std::vector<size_t>& token_ids);

// Post-layer-norm multi-head self-attention. Key positions with mask 0
// receive zero attention from every query. Returns the sublayer output and
// the full attention tensor.
std::pair<Var, Tensor3> attention_sublayer(Tape& t, const ModelConfig& cfg, const LayerVars& lv,
                                           Var hidden, const MaskFlags& attn_mask);

Var ffn_sublayer(Tape& t, const LayerVars& lv, Var hidden);

struct EncodeResult {
  Var hidden;                       // final L × D hidden matrix
  std::vector<LayerRecord> layers;  // one record per layer
  std::vector<Var> layer_outputs;   // tape handles of each layer's hidden
};

EncodeResult encode(Tape& t, const ModelConfig& cfg, const ParamVars& pv,
                    const std::vector<size_t>& token_ids, const MaskFlags& pad_mask,
                    const CutHook& hook = nullptr);

// Logits from first-position pooling: the sequence-start slot feeds the
// classifier.
Var classify_head(Tape& t, const ParamVars& pv, Var final_hidden);

}  // namespace hcut
