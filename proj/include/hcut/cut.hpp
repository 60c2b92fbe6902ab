#pragma once

#include "hcut/strategies.hpp"

namespace hcut {

struct CutConfig {
  bool enabled = true;
  double alpha = 0.1;   // span ratio: l = max(1, round(alpha·L_valid))
  double beta = 0.4;    // candidate-set ratio
  StrategyKind strategy = StrategyKind::Attention;
  bool reverse = false;        // "-R": sample outside the candidate set
  size_t num_aug = 1;          // N
  bool dropblock = false;      // ablation baseline instead of whole-row cuts
  double dropblock_dim_fraction = 0.5;

  void validate() const;
};

// l = max(1, round(alpha·L_valid)) with half-up rounding, capped at
// L_valid − 1 so at least one position survives.
size_t span_length(size_t valid_len, double alpha);

// The ⌈beta·L_valid⌉ valid positions (position 0 and padding excluded) with
// the highest scores; ties go to the lower index. Returned ascending.
std::vector<size_t> candidate_set(const ImportanceScores& scores, double beta,
                                  const MaskFlags& valid);

// reverse=false: sample from candidates proportionally to their scores
// (uniform when all candidate scores are zero). reverse=true: sample
// uniformly from the valid non-first positions outside the candidate set,
// falling back to the candidates when that complement is empty.
size_t select_start(const std::vector<size_t>& candidates, const ImportanceScores& scores,
                    bool reverse, const MaskFlags& valid, Rng& rng);

// Zeroes rows [start, start+length) and clears their attention-mask flags;
// every other row and flag is returned bit-identical. The span is clipped at
// the end of the valid region; a span touching position 0 is a contract
// violation.
std::pair<Matrix, MaskFlags> apply_cut(const Matrix& hidden, const MaskFlags& attn_mask,
                                       const SpanMask& span);

struct StrategyResources {
  const GradCache* grad_cache = nullptr;
  const LimeTable* lime = nullptr;
};

struct AugmentedForward {
  Var logits;
  std::vector<SpanMask> spans;      // one per layer when cutting is active
  std::vector<LayerRecord> layers;  // post-cut records of the augmented pass
};

// One augmented pass: encode with a hook that, at every layer, scores tokens
// with the configured strategy from that layer's own attention/hidden state,
// samples a span start from the candidate set and cuts the span. With the
// config disabled this is exactly the plain forward pass.
AugmentedForward augmented_forward(Tape& t, const ModelConfig& cfg, const ParamVars& pv,
                                   const Example& ex, const CutConfig& cut,
                                   const StrategyResources& res, Rng& rng);

}  // namespace hcut
