#pragma once

#include <vector>

#include "hcut/common.hpp"

namespace hcut {

/// The three objective terms and their weighted combination.
struct LossBreakdown {
  double l_ori = 0.0;
  double l_aug = 0.0;
  double l_js = 0.0;
  double total = 0.0;
};

// −log softmax(logits)[label], stabilized with max subtraction.
double cross_entropy(const std::vector<double>& logits, size_t label);

std::vector<double> softmax(const std::vector<double>& logits);

// Σ p·ln(p/q) with 0·ln0 = 0 and both arguments floored at 1e-12 before the
// logs.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

// Consistency term: the average prediction over the original and all
// augmented views is treated as a constant target, and each augmented
// prediction pays its KL divergence to it.
double js_consistency(const std::vector<double>& p_ori,
                      const std::vector<std::vector<double>>& p_augs);

// Combines per-view cross-entropies and the consistency term as
// total = l_ori + gamma·Σ(aug CE) + eta·l_js.
LossBreakdown total_loss(double l_ori, const std::vector<double>& aug_ce, double l_js,
                         double gamma, double eta);

constexpr double kProbFloor = 1e-12;

}  // namespace hcut
