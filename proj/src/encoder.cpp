#include "hcut/encoder.hpp"

namespace hcut {

void ModelConfig::validate() const {
  if (num_layers < 1 || hidden_dim < 1 || num_heads < 1 || ffn_dim < 1 || vocab_size < 1 ||
      num_classes < 1)
    throw ConfigError("model config: all counts must be >= 1");
  if (hidden_dim % num_heads != 0)
    throw ConfigError("model config: hidden_dim must be divisible by num_heads");
  if (max_len < 2) throw ConfigError("model config: max_len must be >= 2");
}

namespace {

Matrix gaussian(size_t rows, size_t cols, Rng& rng, double std) {
  Matrix m(rows, cols);
  for (size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, std);
  return m;
}

}  // namespace

EncoderParams EncoderParams::zeros(const ModelConfig& cfg) {
  cfg.validate();
  EncoderParams p;
  const size_t d = cfg.hidden_dim;
  p.tok_emb = Matrix(cfg.vocab_size, d);
  p.pos_emb = Matrix(cfg.max_len, d);
  p.layers.resize(cfg.num_layers);
  for (auto& l : p.layers) {
    l.wq = l.wk = l.wv = l.wo = Matrix(d, d);
    l.bq = l.bk = l.bv = l.bo = Matrix(1, d);
    l.ln1_gain = Matrix(1, d, 1.0);
    l.ln1_bias = Matrix(1, d);
    l.ffn_w1 = Matrix(d, cfg.ffn_dim);
    l.ffn_b1 = Matrix(1, cfg.ffn_dim);
    l.ffn_w2 = Matrix(cfg.ffn_dim, d);
    l.ffn_b2 = Matrix(1, d);
    l.ln2_gain = Matrix(1, d, 1.0);
    l.ln2_bias = Matrix(1, d);
  }
  p.cls_w = Matrix(d, cfg.num_classes);
  p.cls_b = Matrix(1, cfg.num_classes);
  return p;
}

EncoderParams EncoderParams::init(const ModelConfig& cfg, Rng& rng, double init_std) {
  EncoderParams p = zeros(cfg);
  p.tok_emb = gaussian(cfg.vocab_size, cfg.hidden_dim, rng, init_std);
  p.pos_emb = gaussian(cfg.max_len, cfg.hidden_dim, rng, init_std);
  for (auto& l : p.layers) {
    l.wq = gaussian(cfg.hidden_dim, cfg.hidden_dim, rng, init_std);
    l.wk = gaussian(cfg.hidden_dim, cfg.hidden_dim, rng, init_std);
    l.wv = gaussian(cfg.hidden_dim, cfg.hidden_dim, rng, init_std);
    l.wo = gaussian(cfg.hidden_dim, cfg.hidden_dim, rng, init_std);
    l.ffn_w1 = gaussian(cfg.hidden_dim, cfg.ffn_dim, rng, init_std);
    l.ffn_w2 = gaussian(cfg.ffn_dim, cfg.hidden_dim, rng, init_std);
  }
  p.cls_w = gaussian(cfg.hidden_dim, cfg.num_classes, rng, init_std);
  return p;
}

std::vector<std::pair<std::string, Matrix*>> EncoderParams::tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  out.emplace_back("tok_emb", &tok_emb);
  out.emplace_back("pos_emb", &pos_emb);
  for (size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    LayerParams& l = layers[i];
    out.emplace_back(p + "wq", &l.wq);
    out.emplace_back(p + "wk", &l.wk);
    out.emplace_back(p + "wv", &l.wv);
    out.emplace_back(p + "wo", &l.wo);
    out.emplace_back(p + "bq", &l.bq);
    out.emplace_back(p + "bk", &l.bk);
    out.emplace_back(p + "bv", &l.bv);
    out.emplace_back(p + "bo", &l.bo);
    out.emplace_back(p + "ln1_gain", &l.ln1_gain);
    out.emplace_back(p + "ln1_bias", &l.ln1_bias);
    out.emplace_back(p + "ffn_w1", &l.ffn_w1);
    out.emplace_back(p + "ffn_b1", &l.ffn_b1);
    out.emplace_back(p + "ffn_w2", &l.ffn_w2);
    out.emplace_back(p + "ffn_b2", &l.ffn_b2);
    out.emplace_back(p + "ln2_gain", &l.ln2_gain);
    out.emplace_back(p + "ln2_bias", &l.ln2_bias);
  }
  out.emplace_back("cls_w", &cls_w);
  out.emplace_back("cls_b", &cls_b);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> EncoderParams::tensors() const {
  auto mut = const_cast<EncoderParams*>(this)->tensors();
  std::vector<std::pair<std::string, const Matrix*>> out;
  out.reserve(mut.size());
  for (auto& [name, ptr] : mut) out.emplace_back(name, ptr);
  return out;
}

ParamVars bind_params(Tape& t, const EncoderParams& p) {
  ParamVars pv;
  pv.tok_emb = t.leaf(p.tok_emb, &p.tok_emb);
  pv.pos_emb = t.leaf(p.pos_emb, &p.pos_emb);
  for (const LayerParams& l : p.layers) {
    LayerVars lv;
    lv.wq = t.leaf(l.wq, &l.wq);
    lv.wk = t.leaf(l.wk, &l.wk);
    lv.wv = t.leaf(l.wv, &l.wv);
    lv.wo = t.leaf(l.wo, &l.wo);
    lv.bq = t.leaf(l.bq, &l.bq);
    lv.bk = t.leaf(l.bk, &l.bk);
    lv.bv = t.leaf(l.bv, &l.bv);
    lv.bo = t.leaf(l.bo, &l.bo);
    lv.ln1_gain = t.leaf(l.ln1_gain, &l.ln1_gain);
    lv.ln1_bias = t.leaf(l.ln1_bias, &l.ln1_bias);
    lv.ffn_w1 = t.leaf(l.ffn_w1, &l.ffn_w1);
    lv.ffn_b1 = t.leaf(l.ffn_b1, &l.ffn_b1);
    lv.ffn_w2 = t.leaf(l.ffn_w2, &l.ffn_w2);
    lv.ffn_b2 = t.leaf(l.ffn_b2, &l.ffn_b2);
    lv.ln2_gain = t.leaf(l.ln2_gain, &l.ln2_gain);
    lv.ln2_bias = t.leaf(l.ln2_bias, &l.ln2_bias);
    pv.layers.push_back(lv);
  }
  pv.cls_w = t.leaf(p.cls_w, &p.cls_w);
  pv.cls_b = t.leaf(p.cls_b, &p.cls_b);
  return pv;
}

Var embed(Tape& t, const ModelConfig& cfg, const ParamVars& pv,
          const std::vector<size_t>& token_ids) {
  if (token_ids.size() > cfg.max_len) throw DataError("embed: sequence longer than max_len");
  for (size_t id : token_ids)
    if (id >= cfg.vocab_size) throw DataError("embed: token id out of vocabulary range");
  std::vector<size_t> positions(token_ids.size());
  for (size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  return t.add(t.gather_rows(pv.tok_emb, token_ids), t.gather_rows(pv.pos_emb, positions));
}

std::pair<Var, Tensor3> attention_sublayer(Tape& t, const ModelConfig& cfg, const LayerVars& lv,
                                           Var hidden, const MaskFlags& attn_mask) {
  const size_t len = t.value(hidden).rows();
  if (attn_mask.size() != len) throw ShapeError("attention_sublayer: mask length mismatch");
  const size_t dh = cfg.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Var q = t.add_row_broadcast(t.matmul(hidden, lv.wq), lv.bq);
  const Var k = t.add_row_broadcast(t.matmul(hidden, lv.wk), lv.bk);
  const Var v = t.add_row_broadcast(t.matmul(hidden, lv.wv), lv.bv);

  Tensor3 attention(cfg.num_heads, len, len);
  std::vector<Var> head_outs;
  for (size_t h = 0; h < cfg.num_heads; ++h) {
    const Var qh = t.slice_cols(q, h * dh, dh);
    const Var kh = t.slice_cols(k, h * dh, dh);
    const Var vh = t.slice_cols(v, h * dh, dh);
    const Var scores = t.scale(t.matmul_nt(qh, kh), att_scale);
    const Var weights = t.softmax_rows_masked(scores, attn_mask);
    attention.set_slice(h, t.value(weights));
    head_outs.push_back(t.matmul(weights, vh));
  }
  const Var merged = t.add_row_broadcast(t.matmul(t.concat_cols(head_outs), lv.wo), lv.bo);
  const Var out = t.layer_norm_rows(t.add(hidden, merged), lv.ln1_gain, lv.ln1_bias);
  return {out, attention};
}

Var ffn_sublayer(Tape& t, const LayerVars& lv, Var hidden) {
  const Var h1 = t.gelu(t.add_row_broadcast(t.matmul(hidden, lv.ffn_w1), lv.ffn_b1));
  const Var h2 = t.add_row_broadcast(t.matmul(h1, lv.ffn_w2), lv.ffn_b2);
  return t.layer_norm_rows(t.add(hidden, h2), lv.ln2_gain, lv.ln2_bias);
}

EncodeResult encode(Tape& t, const ModelConfig& cfg, const ParamVars& pv,
                    const std::vector<size_t>& token_ids, const MaskFlags& pad_mask,
                    const CutHook& hook) {
  if (pad_mask.size() != token_ids.size()) throw ShapeError("encode: pad mask length mismatch");
  const size_t len = token_ids.size();

  EncodeResult result;
  Var hidden = embed(t, cfg, pv, token_ids);
  // Each layer's attention uses the mask returned by the previous layer's
  // hook; the hook itself always starts from the padding mask (cuts are
  // scoped to the immediately following layer).
  MaskFlags attn_mask = pad_mask;
  for (size_t m = 0; m < cfg.num_layers; ++m) {
    auto [after_attn, attention] = attention_sublayer(t, cfg, pv.layers[m], hidden, attn_mask);
    Var after_ffn = ffn_sublayer(t, pv.layers[m], after_attn);

    LayerRecord record;
    record.attention = attention;
    MaskFlags next_mask = pad_mask;
    if (hook) {
      HookResult hr = hook(m, t.value(after_ffn), pad_mask, attention);
      if (hr.attn_mask.size() != len)
        throw ContractError("encode: hook returned a mask of the wrong length");
      if (hr.hidden_mul_mask) {
        if (!hr.hidden_mul_mask->same_shape(t.value(after_ffn)))
          throw ContractError("encode: hook returned a hidden mask of the wrong shape");
        after_ffn = t.mul_mask(after_ffn, *hr.hidden_mul_mask);
      }
      next_mask = std::move(hr.attn_mask);
      record.span = hr.span;
    }
    record.hidden = t.value(after_ffn);
    result.layers.push_back(std::move(record));
    result.layer_outputs.push_back(after_ffn);
    hidden = after_ffn;
    attn_mask = std::move(next_mask);
  }
  result.hidden = hidden;
  return result;
}

Var classify_head(Tape& t, const ParamVars& pv, Var final_hidden) {
  if (t.value(final_hidden).rows() == 0) throw ShapeError("classify_head: empty hidden matrix");
  const Var pooled = t.slice_rows(final_hidden, 0, 1);
  return t.add_row_broadcast(t.matmul(pooled, pv.cls_w), pv.cls_b);
}

}  // namespace hcut
