#include "hcut/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "hcut/cut.hpp"
#include "hcut/objectives.hpp"

namespace hcut {

std::string strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Random: return "random";
    case StrategyKind::Attention: return "attention";
    case StrategyKind::Gradient: return "gradient";
    case StrategyKind::Gem: return "gem";
    case StrategyKind::Lime: return "lime";
  }
  throw ConfigError("strategy_name: unknown strategy");
}

StrategyKind strategy_from_name(const std::string& name) {
  if (name == "random") return StrategyKind::Random;
  if (name == "attention") return StrategyKind::Attention;
  if (name == "gradient") return StrategyKind::Gradient;
  if (name == "gem") return StrategyKind::Gem;
  if (name == "lime") return StrategyKind::Lime;
  throw ConfigError("unknown strategy '" + name + "'");
}

ImportanceScores attention_scores(const Tensor3& attention, const MaskFlags& pad_mask) {
  const size_t heads = attention.d0();
  const size_t len = attention.d1();
  if (attention.d2() != len || pad_mask.size() != len)
    throw ShapeError("attention_scores: tensor/mask shape mismatch");

  ImportanceScores s;
  s.source = StrategyKind::Attention;
  s.values.assign(len, 0.0);
  for (size_t h = 0; h < heads; ++h)
    for (size_t k = 0; k < len; ++k) {
      if (!pad_mask[k]) continue;  // only valid query rows contribute
      for (size_t i = 0; i < len; ++i) s.values[i] += attention.at(h, k, i);
    }
  const double inv_heads = 1.0 / static_cast<double>(heads);
  for (size_t i = 0; i < len; ++i) s.values[i] = pad_mask[i] ? s.values[i] * inv_heads : 0.0;
  return s;
}

ImportanceScores gradient_scores(const GradCache& cache, size_t layer, size_t len,
                                 const MaskFlags& pad_mask) {
  if (layer >= cache.per_layer.size()) throw ContractError("gradient_scores: layer out of range");
  ImportanceScores s;
  s.source = StrategyKind::Gradient;
  s.layer = static_cast<int>(layer);
  s.values.assign(len, 0.0);
  const auto& row = cache.per_layer[layer];
  for (size_t i = 0; i < len && i < row.size(); ++i)
    s.values[i] = pad_mask[i] ? row[i] : 0.0;
  return s;
}

namespace {

double dot(const double* a, const double* b, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double norm(const double* a, size_t n) { return std::sqrt(dot(a, a, n)); }

double cosine(const double* a, const double* b, size_t n) {
  const double na = norm(a, n), nb = norm(b, n);
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return dot(a, b, n) / (na * nb);
}

}  // namespace

ImportanceScores gem_scores(const Matrix& hidden, const MaskFlags& pad_mask) {
  const size_t len = hidden.rows();
  const size_t dim = hidden.cols();
  if (pad_mask.size() != len) throw ShapeError("gem_scores: mask length mismatch");
  std::vector<size_t> valid;
  for (size_t i = 0; i < len; ++i)
    if (pad_mask[i]) valid.push_back(i);
  if (valid.size() < 2) throw DegenerateError("gem_scores: need at least two valid rows");

  std::vector<double> mean(dim, 0.0);
  for (size_t i : valid)
    for (size_t c = 0; c < dim; ++c) mean[c] += hidden.at(i, c);
  for (double& v : mean) v /= static_cast<double>(valid.size());

  ImportanceScores s;
  s.source = StrategyKind::Gem;
  s.values.assign(len, 0.0);

  std::vector<double> residual(dim);
  std::vector<std::vector<double>> basis;
  for (size_t i : valid) {
    // Novelty: residual of h_i against an orthonormal basis of the other
    // valid rows (modified Gram-Schmidt).
    basis.clear();
    for (size_t j : valid) {
      if (j == i) continue;
      std::vector<double> v(hidden.row(j), hidden.row(j) + dim);
      for (const auto& b : basis) {
        const double proj = dot(v.data(), b.data(), dim);
        for (size_t c = 0; c < dim; ++c) v[c] -= proj * b[c];
      }
      const double nv = norm(v.data(), dim);
      if (nv > 1e-12) {
        for (double& x : v) x /= nv;
        basis.push_back(std::move(v));
      }
    }
    for (size_t c = 0; c < dim; ++c) residual[c] = hidden.at(i, c);
    for (const auto& b : basis) {
      const double proj = dot(residual.data(), b.data(), dim);
      for (size_t c = 0; c < dim; ++c) residual[c] -= proj * b[c];
    }
    const double novelty = norm(residual.data(), dim) / std::max(norm(hidden.row(i), dim), 1e-12);

    const double significance = std::max(0.0, cosine(hidden.row(i), mean.data(), dim));

    double max_cos = -1.0;
    for (size_t j : valid) {
      if (j != i) max_cos = std::max(max_cos, cosine(hidden.row(i), hidden.row(j), dim));
    }
    const double uniqueness = std::clamp(1.0 - max_cos, 0.0, 1.0);

    s.values[i] = novelty * significance * uniqueness;
  }
  return s;
}

ImportanceScores random_scores(size_t len, const MaskFlags& pad_mask) {
  if (pad_mask.size() != len) throw ShapeError("random_scores: mask length mismatch");
  ImportanceScores s;
  s.source = StrategyKind::Random;
  s.values.assign(len, 0.0);
  for (size_t i = 0; i < len; ++i) s.values[i] = pad_mask[i] ? 1.0 : 0.0;
  return s;
}

void LimeTable::write_tsv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("lime table: cannot open " + path);
  out << "example_id\ttoken_index\tscore\n";
  std::vector<int64_t> ids;
  ids.reserve(scores.size());
  for (const auto& [id, _] : scores) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  for (int64_t id : ids) {
    const auto& row = scores.at(id);
    for (size_t i = 0; i < row.size(); ++i)
      out << id << '\t' << i << '\t' << row[i] << '\n';
  }
}

namespace {

// Logistic bag-of-words classifier over content-token counts.
struct BowClassifier {
  Matrix w;  // vocab × classes
  std::vector<double> b;

  std::vector<double> logits(const std::vector<size_t>& content_ids) const {
    std::vector<double> z = b;
    for (size_t id : content_ids)
      for (size_t c = 0; c < z.size(); ++c) z[c] += w.at(id, c);
    return z;
  }
};

bool is_content(size_t id) {
  return id != Vocab::kPad && id != Vocab::kBos && id != Vocab::kEos;
}

std::vector<size_t> content_positions(const Example& ex) {
  std::vector<size_t> out;
  for (size_t i = 0; i < ex.ids.size(); ++i)
    if (ex.mask[i] && is_content(ex.ids[i])) out.push_back(i);
  return out;
}

BowClassifier train_bow(const std::vector<Example>& train, size_t vocab_size, size_t num_classes,
                        size_t epochs) {
  BowClassifier clf;
  clf.w = Matrix(vocab_size, num_classes);
  clf.b.assign(num_classes, 0.0);
  const double lr = 0.1;
  for (size_t e = 0; e < epochs; ++e) {
    for (const Example& ex : train) {
      std::vector<size_t> ids;
      for (size_t p : content_positions(ex)) ids.push_back(ex.ids[p]);
      const auto p = softmax(clf.logits(ids));
      for (size_t c = 0; c < num_classes; ++c) {
        const double g = p[c] - (c == ex.label ? 1.0 : 0.0);
        clf.b[c] -= lr * g;
        for (size_t id : ids) clf.w.at(id, c) -= lr * g;
      }
    }
  }
  return clf;
}

// Weighted ridge regression via Gaussian elimination with partial pivoting.
// Returns coefficients for the p predictors (intercept excluded).
std::vector<double> weighted_linear_fit(const std::vector<std::vector<uint8_t>>& z,
                                        const std::vector<double>& y,
                                        const std::vector<double>& w) {
  const size_t n = z.size();
  const size_t p = z.empty() ? 0 : z[0].size();
  const size_t dim = p + 1;  // intercept first
  std::vector<std::vector<double>> a(dim, std::vector<double>(dim + 1, 0.0));
  for (size_t s = 0; s < n; ++s) {
    std::vector<double> x(dim, 0.0);
    x[0] = 1.0;
    for (size_t j = 0; j < p; ++j) x[1 + j] = z[s][j];
    for (size_t r = 0; r < dim; ++r) {
      if (x[r] == 0.0) continue;
      const double wr = w[s] * x[r];
      for (size_t c = 0; c < dim; ++c) a[r][c] += wr * x[c];
      a[r][dim] += wr * y[s];
    }
  }
  for (size_t r = 1; r < dim; ++r) a[r][r] += 1e-9;  // tiny ridge, keeps the solve well posed

  for (size_t col = 0; col < dim; ++col) {
    size_t pivot = col;
    for (size_t r = col + 1; r < dim; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    std::swap(a[col], a[pivot]);
    if (std::abs(a[col][col]) < 1e-15) continue;
    const double inv = 1.0 / a[col][col];
    for (size_t c = col; c <= dim; ++c) a[col][c] *= inv;
    for (size_t r = 0; r < dim; ++r) {
      if (r == col || a[r][col] == 0.0) continue;
      const double f = a[r][col];
      for (size_t c = col; c <= dim; ++c) a[r][c] -= f * a[col][c];
    }
  }
  std::vector<double> beta(p, 0.0);
  for (size_t j = 0; j < p; ++j) beta[j] = a[1 + j][dim];
  return beta;
}

}  // namespace

LimeTable lime_precompute(const std::vector<Example>& train, const Vocab& vocab,
                          size_t num_classes, size_t surrogate_epochs, size_t num_perturb,
                          Rng& rng) {
  if (num_perturb < 100) throw ConfigError("lime_precompute: num_perturb must be >= 100");
  if (train.empty()) throw DataError("lime_precompute: empty training split");

  const BowClassifier clf = train_bow(train, vocab.size(), num_classes, surrogate_epochs);

  LimeTable table;
  std::vector<std::vector<uint8_t>> z(num_perturb);
  std::vector<double> y(num_perturb), w(num_perturb);
  for (const Example& ex : train) {
    std::vector<double> row(ex.ids.size(), 0.0);
    const auto positions = content_positions(ex);
    if (positions.empty()) {  // nothing to perturb, keep zero scores
      table.scores[ex.id] = row;
      continue;
    }
    const double kernel_width = static_cast<double>(ex.valid_len());

    for (size_t s = 0; s < num_perturb; ++s) {
      z[s].assign(positions.size(), 0);
      std::vector<size_t> kept;
      size_t dropped = 0;
      for (size_t j = 0; j < positions.size(); ++j) {
        if (rng.next_double() < 0.5) {
          z[s][j] = 1;
          kept.push_back(ex.ids[positions[j]]);
        } else {
          ++dropped;
        }
      }
      // Target is the classifier's gold-class score, which is exactly
      // linear in the keep indicators, so the surrogate can recover the
      // per-token weights.
      y[s] = clf.logits(kept)[ex.label];
      w[s] = std::exp(-static_cast<double>(dropped) / kernel_width);
    }
    const auto beta = weighted_linear_fit(z, y, w);
    for (size_t j = 0; j < positions.size(); ++j) row[positions[j]] = std::abs(beta[j]);
    table.scores[ex.id] = row;
  }
  return table;
}

DropBlockForward dropblock_forward(Tape& t, const ModelConfig& cfg, const ParamVars& pv,
                                   const Example& ex, double alpha, double dim_fraction,
                                   Rng& rng) {
  if (!(dim_fraction > 0.0 && dim_fraction <= 1.0))
    throw ConfigError("dropblock_forward: dim_fraction must lie in (0, 1]");
  const size_t valid_len = ex.valid_len();
  const size_t dim = cfg.hidden_dim;
  const size_t n_dims = static_cast<size_t>(
      std::ceil(dim_fraction * static_cast<double>(dim) - 1e-9));

  DropBlockForward result;
  CutHook hook = [&](size_t, const Matrix& hidden, const MaskFlags& pad_mask,
                     const Tensor3&) -> HookResult {
    const size_t len_cut = span_length(valid_len, alpha);
    const size_t start = 1 + rng.uniform_index(valid_len - len_cut);

    std::vector<size_t> dims(dim);
    for (size_t i = 0; i < dim; ++i) dims[i] = i;
    for (size_t i = 0; i < n_dims; ++i) {
      const size_t j = i + rng.uniform_index(dim - i);
      std::swap(dims[i], dims[j]);
    }

    Matrix mask(hidden.rows(), hidden.cols(), 1.0);
    for (size_t r = start; r < start + len_cut; ++r)
      for (size_t i = 0; i < n_dims; ++i) mask.at(r, dims[i]) = 0.0;

    result.cell_masks.push_back(mask);
    HookResult hr;
    hr.hidden_mul_mask = std::move(mask);
    hr.attn_mask = pad_mask;  // DropBlock never touches the attention mask
    return hr;
  };

  EncodeResult enc = encode(t, cfg, pv, ex.ids, ex.mask, hook);
  result.logits = classify_head(t, pv, enc.hidden);
  return result;
}

}  // namespace hcut
