#pragma once

#include <cstdint>
#include <unordered_map>

#include "hcut/data.hpp"
#include "hcut/encoder.hpp"

namespace hcut {

enum class StrategyKind { Random, Attention, Gradient, Gem, Lime };

std::string strategy_name(StrategyKind kind);
StrategyKind strategy_from_name(const std::string& name);

/// Per-token saliency feeding span selection. Padding positions carry 0 and
/// every value is nonnegative.
struct ImportanceScores {
  std::vector<double> values;
  StrategyKind source = StrategyKind::Random;
  int layer = -1;  // -1 = not layer specific
};

// Head-averaged total attention received by each token:
// a_i = (1/P) Σ_heads Σ_{valid queries k} A[h][k][i].
ImportanceScores attention_scores(const Tensor3& attention, const MaskFlags& pad_mask);

// Mean absolute gradient of each layer's hidden matrix, refreshed after
// every optimizer step and aggregated over that step's examples. Absent
// before the first step; callers fall back to Random then.
struct GradCache {
  std::vector<std::vector<double>> per_layer;  // [layer][position]
  bool ready = false;
};

ImportanceScores gradient_scores(const GradCache& cache, size_t layer, size_t len,
                                 const MaskFlags& pad_mask);

// Geometric token importance: novelty (orthogonal residual against the other
// valid rows), significance (alignment with the mean row) and uniqueness
// (one minus the closest cosine), multiplied together.
ImportanceScores gem_scores(const Matrix& hidden, const MaskFlags& pad_mask);

// Equal positive score at every valid position.
ImportanceScores random_scores(size_t len, const MaskFlags& pad_mask);

// Frozen per-example token scores computed once before training.
struct LimeTable {
  std::unordered_map<int64_t, std::vector<double>> scores;

  const std::vector<double>* find(int64_t example_id) const {
    auto it = scores.find(example_id);
    return it == scores.end() ? nullptr : &it->second;
  }

  void write_tsv(const std::string& path) const;
};

// Trains a logistic bag-of-words classifier on the training split, then
// explains each example with a locally weighted linear surrogate fit on
// num_perturb keep/drop copies (tokens kept independently with probability
// 0.5, sample weights exp(−hamming/L)). Scores are the absolute surrogate
// coefficients.
LimeTable lime_precompute(const std::vector<Example>& train, const Vocab& vocab,
                          size_t num_classes, size_t surrogate_epochs, size_t num_perturb,
                          Rng& rng);

// DropBlock ablation: per layer, zero one random span restricted to a random
// subset of ceil(dim_fraction·D) hidden dimensions; attention masks are left
// untouched so partial information survives.
struct DropBlockForward {
  Var logits;
  std::vector<Matrix> cell_masks;  // per-layer 0/1 masks actually applied
};
DropBlockForward dropblock_forward(Tape& t, const ModelConfig& cfg, const ParamVars& pv,
                                   const Example& ex, double alpha, double dim_fraction,
                                   Rng& rng);

}  // namespace hcut
