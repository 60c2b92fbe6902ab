#include "hcut/cut.hpp"

#include <algorithm>
#include <cmath>

namespace hcut {

void CutConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("cut config: alpha must lie in (0, 1)");
  if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("cut config: beta must lie in (0, 1]");
  if (num_aug < 1 || num_aug > 4) throw ConfigError("cut config: num_aug must lie in [1, 4]");
  if (!(dropblock_dim_fraction > 0.0 && dropblock_dim_fraction <= 1.0))
    throw ConfigError("cut config: dropblock_dim_fraction must lie in (0, 1]");
}

size_t span_length(size_t valid_len, double alpha) {
  if (valid_len < 2) throw ContractError("span_length: need at least two valid positions");
  const size_t rounded =
      static_cast<size_t>(std::floor(alpha * static_cast<double>(valid_len) + 0.5));
  return std::min(std::max<size_t>(rounded, 1), valid_len - 1);
}

std::vector<size_t> candidate_set(const ImportanceScores& scores, double beta,
                                  const MaskFlags& valid) {
  if (scores.values.size() != valid.size())
    throw ShapeError("candidate_set: scores/mask length mismatch");
  std::vector<size_t> pool;
  size_t valid_len = 0;
  for (size_t i = 0; i < valid.size(); ++i) {
    if (!valid[i]) continue;
    ++valid_len;
    if (i >= 1) pool.push_back(i);
  }
  if (pool.empty()) throw DegenerateError("candidate_set: no valid non-first positions");

  const size_t want = static_cast<size_t>(
      std::ceil(beta * static_cast<double>(valid_len) - 1e-9));
  const size_t take = std::min(std::max<size_t>(want, 1), pool.size());

  std::sort(pool.begin(), pool.end(), [&](size_t a, size_t b) {
    if (scores.values[a] != scores.values[b]) return scores.values[a] > scores.values[b];
    return a < b;
  });
  pool.resize(take);
  std::sort(pool.begin(), pool.end());
  return pool;
}

size_t select_start(const std::vector<size_t>& candidates, const ImportanceScores& scores,
                    bool reverse, const MaskFlags& valid, Rng& rng) {
  if (candidates.empty()) throw ContractError("select_start: empty candidate set");

  if (reverse) {
    std::vector<size_t> complement;
    for (size_t i = 1; i < valid.size(); ++i) {
      if (!valid[i]) continue;
      if (!std::binary_search(candidates.begin(), candidates.end(), i)) complement.push_back(i);
    }
    if (!complement.empty()) return complement[rng.uniform_index(complement.size())];
    return candidates[rng.uniform_index(candidates.size())];
  }

  std::vector<double> weights(candidates.size());
  double total = 0.0;
  for (size_t j = 0; j < candidates.size(); ++j) {
    weights[j] = scores.values[candidates[j]];
    total += weights[j];
  }
  if (total <= 0.0) return candidates[rng.uniform_index(candidates.size())];
  return candidates[rng.weighted_index(weights)];
}

std::pair<Matrix, MaskFlags> apply_cut(const Matrix& hidden, const MaskFlags& attn_mask,
                                       const SpanMask& span) {
  if (attn_mask.size() != hidden.rows()) throw ShapeError("apply_cut: mask length mismatch");
  if (span.start == 0) throw ContractError("apply_cut: span may not touch position 0");
  size_t valid_len = 0;
  for (uint8_t f : attn_mask) valid_len += f ? 1 : 0;
  if (span.start >= valid_len) throw ContractError("apply_cut: span start outside valid region");
  const size_t length = std::min(span.length, valid_len - span.start);

  Matrix out = hidden;
  MaskFlags mask = attn_mask;
  for (size_t r = span.start; r < span.start + length; ++r) {
    for (size_t c = 0; c < out.cols(); ++c) out.at(r, c) = 0.0;
    mask[r] = 0;
  }
  return {std::move(out), std::move(mask)};
}

AugmentedForward augmented_forward(Tape& t, const ModelConfig& cfg, const ParamVars& pv,
                                   const Example& ex, const CutConfig& cut,
                                   const StrategyResources& res, Rng& rng) {
  AugmentedForward result;
  if (!cut.enabled) {
    EncodeResult enc = encode(t, cfg, pv, ex.ids, ex.mask);
    result.logits = classify_head(t, pv, enc.hidden);
    result.layers = std::move(enc.layers);
    return result;
  }
  cut.validate();

  if (cut.dropblock) {
    DropBlockForward db =
        dropblock_forward(t, cfg, pv, ex, cut.alpha, cut.dropblock_dim_fraction, rng);
    result.logits = db.logits;
    return result;
  }

  if (cut.strategy == StrategyKind::Lime && res.lime == nullptr)
    throw ConfigError("augmented_forward: LIME strategy needs a precomputed table");

  const size_t valid_len = ex.valid_len();
  CutHook hook = [&](size_t layer, const Matrix& hidden, const MaskFlags& pad_mask,
                     const Tensor3& attention) -> HookResult {
    ImportanceScores scores;
    // The Random strategy treats every span as equally important, so the
    // candidate set covers all valid starts regardless of beta.
    double beta = cut.beta;
    switch (cut.strategy) {
      case StrategyKind::Random:
        scores = random_scores(hidden.rows(), pad_mask);
        beta = 1.0;
        break;
      case StrategyKind::Attention:
        scores = attention_scores(attention, pad_mask);
        break;
      case StrategyKind::Gradient:
        if (res.grad_cache != nullptr && res.grad_cache->ready) {
          scores = gradient_scores(*res.grad_cache, layer, hidden.rows(), pad_mask);
        } else {  // before the first optimizer step there is nothing cached
          scores = random_scores(hidden.rows(), pad_mask);
          beta = 1.0;
        }
        break;
      case StrategyKind::Gem:
        scores = gem_scores(hidden, pad_mask);
        break;
      case StrategyKind::Lime: {
        const std::vector<double>* row = res.lime->find(ex.id);
        if (row == nullptr)
          throw ConfigError("augmented_forward: example missing from LIME table");
        scores.source = StrategyKind::Lime;
        scores.values.assign(hidden.rows(), 0.0);
        for (size_t i = 0; i < hidden.rows() && i < row->size(); ++i)
          scores.values[i] = pad_mask[i] ? (*row)[i] : 0.0;
        break;
      }
    }

    const auto candidates = candidate_set(scores, beta, pad_mask);
    const size_t start = select_start(candidates, scores, cut.reverse, pad_mask, rng);
    const size_t length = std::min(span_length(valid_len, cut.alpha), valid_len - start);
    const SpanMask span{layer, start, length};

    Matrix mul(hidden.rows(), hidden.cols(), 1.0);
    MaskFlags next_mask = pad_mask;
    for (size_t r = span.start; r < span.start + span.length; ++r) {
      for (size_t c = 0; c < mul.cols(); ++c) mul.at(r, c) = 0.0;
      next_mask[r] = 0;
    }

    HookResult hr;
    hr.hidden_mul_mask = std::move(mul);
    hr.attn_mask = std::move(next_mask);
    hr.span = span;
    return hr;
  };

  EncodeResult enc = encode(t, cfg, pv, ex.ids, ex.mask, hook);
  result.logits = classify_head(t, pv, enc.hidden);
  for (const LayerRecord& rec : enc.layers)
    if (rec.span) result.spans.push_back(*rec.span);
  result.layers = std::move(enc.layers);
  return result;
}

}  // namespace hcut
