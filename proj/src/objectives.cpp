#include "hcut/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace hcut {

double cross_entropy(const std::vector<double>& logits, size_t label) {
  if (label >= logits.size()) throw DataError("cross_entropy: label out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  return mx + std::log(sum) - logits[label];
}

std::vector<double> softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: support size mismatch");
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;  // 0·ln0 = 0
    kl += p[i] * (std::log(std::max(p[i], kProbFloor)) - std::log(std::max(q[i], kProbFloor)));
  }
  return kl;
}

double js_consistency(const std::vector<double>& p_ori,
                      const std::vector<std::vector<double>>& p_augs) {
  if (p_augs.empty()) throw ContractError("js_consistency: no augmented predictions");
  const size_t c = p_ori.size();
  std::vector<double> p_avg = p_ori;
  for (const auto& p : p_augs) {
    if (p.size() != c) throw ShapeError("js_consistency: support size mismatch");
    for (size_t i = 0; i < c; ++i) p_avg[i] += p[i];
  }
  const double inv = 1.0 / static_cast<double>(p_augs.size() + 1);
  for (double& v : p_avg) v *= inv;

  double total = 0.0;
  for (const auto& p : p_augs) total += kl_divergence(p, p_avg);
  return total;
}

LossBreakdown total_loss(double l_ori, const std::vector<double>& aug_ce, double l_js,
                         double gamma, double eta) {
  if (gamma < 0.0 || eta < 0.0) throw ConfigError("total_loss: gamma and eta must be >= 0");
  LossBreakdown b;
  b.l_ori = l_ori;
  for (double ce : aug_ce) b.l_aug += ce;
  b.l_js = l_js;
  b.total = b.l_ori + gamma * b.l_aug + eta * b.l_js;
  return b;
}

}  // namespace hcut
