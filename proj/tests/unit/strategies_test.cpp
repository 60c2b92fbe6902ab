#include <cmath>

#include "doctest.h"
#include "hcut/cut.hpp"
#include "hcut/strategies.hpp"
#include "test_helpers.hpp"

using namespace hcut;

namespace {

Tensor3 uniform_attention(size_t heads, size_t len) {
  return Tensor3(heads, len, len, 1.0 / static_cast<double>(len));
}

}  // namespace

TEST_CASE("attention_scores of doubly-uniform rows") {
  const auto s = attention_scores(uniform_attention(1, 2), MaskFlags{1, 1});
  CHECK(s.values[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.values[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("attention_scores averages heads") {
  Tensor3 att(2, 2, 2);
  // Head 0 sends all attention to token 0; head 1 is uniform.
  att.at(0, 0, 0) = 1.0;
  att.at(0, 1, 0) = 1.0;
  for (size_t q = 0; q < 2; ++q)
    for (size_t k = 0; k < 2; ++k) att.at(1, q, k) = 0.5;
  const auto s = attention_scores(att, MaskFlags{1, 1});
  CHECK(s.values[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(s.values[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("attention_scores of identity attention is one everywhere") {
  Tensor3 att(2, 4, 4);
  for (size_t h = 0; h < 2; ++h)
    for (size_t i = 0; i < 4; ++i) att.at(h, i, i) = 1.0;
  const auto s = attention_scores(att, MaskFlags(4, 1));
  for (double v : s.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("attention_scores mass equals the valid query count") {
  Rng rng(19);
  for (int trial = 0; trial < 300; ++trial) {
    const size_t heads = 1 + rng.uniform_index(3);
    const size_t len = 2 + rng.uniform_index(6);
    MaskFlags mask(len, 1);
    const size_t pad = rng.uniform_index(len - 1);
    for (size_t i = len - pad; i < len; ++i) mask[i] = 0;

    // Rows normalized over valid keys, exactly like the encoder produces.
    Tensor3 att(heads, len, len);
    for (size_t h = 0; h < heads; ++h) {
      const Matrix logits = test::random_matrix(len, len, rng, 3.0);
      const Matrix rows = softmax_rows(logits, mask);
      att.set_slice(h, rows);
    }
    const auto s = attention_scores(att, mask);

    double mass = 0.0;
    size_t valid_queries = 0;
    for (size_t i = 0; i < len; ++i) {
      mass += s.values[i];
      if (mask[i]) ++valid_queries;
      if (!mask[i]) CHECK(s.values[i] == 0.0);
      CHECK(s.values[i] >= 0.0);
    }
    CHECK(std::abs(mass - static_cast<double>(valid_queries)) < 1e-9);

    // Direct double-sum oracle.
    for (size_t i = 0; i < len; ++i) {
      double acc = 0.0;
      for (size_t h = 0; h < heads; ++h)
        for (size_t k = 0; k < len; ++k)
          if (mask[k]) acc += att.at(h, k, i);
      acc /= static_cast<double>(heads);
      if (!mask[i]) acc = 0.0;
      CHECK(std::abs(s.values[i] - acc) < 1e-12);
    }
  }
}

TEST_CASE("gradient_scores reads the cache and zeroes padding") {
  GradCache cache;
  cache.per_layer = {{0.5, 0.25, 0.0, 0.75}, {0.1, 0.2, 0.3, 0.4}};
  cache.ready = true;
  const auto s = gradient_scores(cache, 1, 4, MaskFlags{1, 1, 1, 0});
  CHECK(s.values == std::vector<double>{0.1, 0.2, 0.3, 0.0});
  CHECK_THROWS_AS(gradient_scores(cache, 5, 4, MaskFlags(4, 1)), ContractError);
}

TEST_CASE("all-zero gradient cache produces all-zero scores") {
  GradCache cache;
  cache.per_layer = {{0.0, 0.0, 0.0}};
  cache.ready = true;
  for (double v : gradient_scores(cache, 0, 3, MaskFlags(3, 1)).values) CHECK(v == 0.0);
}

TEST_CASE("per-position gradient cache matches a finite-difference oracle") {
  // One layer; the loss reads only position 0, so every other position's
  // hidden gradient is exactly zero (constant path), and position 0 must
  // match finite differences of the classifier head.
  ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.hidden_dim = 8;
  cfg.num_heads = 2;
  cfg.ffn_dim = 12;
  cfg.vocab_size = 10;
  cfg.max_len = 6;
  cfg.num_classes = 2;
  Rng init(23);
  const EncoderParams p = EncoderParams::init(cfg, init);
  const std::vector<size_t> ids{1, 5, 6, 7, 2};
  const MaskFlags mask(5, 1);

  Tape t;
  const ParamVars pv = bind_params(t, p);
  const EncodeResult enc = encode(t, cfg, pv, ids, mask);
  const Var loss = t.cross_entropy_logits(classify_head(t, pv, enc.hidden), 1);
  t.backward(loss);
  const Matrix& g = t.grad(enc.layer_outputs[0]);
  REQUIRE_FALSE(g.empty());

  const Matrix hv = t.value(enc.layer_outputs[0]);
  const auto loss_at = [&](const Matrix& h) {
    Tape t2;
    const ParamVars pv2 = bind_params(t2, p);
    return t2.scalar(t2.cross_entropy_logits(classify_head(t2, pv2, t2.leaf(h)), 1));
  };
  for (size_t r = 0; r < hv.rows(); ++r) {
    double mean_abs_fd = 0.0, mean_abs_g = 0.0;
    for (size_t c = 0; c < hv.cols(); ++c) {
      Matrix up = hv, down = hv;
      up.at(r, c) += 1e-5;
      down.at(r, c) -= 1e-5;
      const double fd = (loss_at(up) - loss_at(down)) / 2e-5;
      CHECK(std::abs(g.at(r, c) - fd) < 1e-6);
      mean_abs_fd += std::abs(fd);
      mean_abs_g += std::abs(g.at(r, c));
    }
    if (r != 0) {  // constant path: only position 0 feeds the loss
      CHECK(mean_abs_g == 0.0);
      CHECK(mean_abs_fd == 0.0);
    }
  }
}

TEST_CASE("gem_scores components") {
  SUBCASE("mutually orthogonal rows have full novelty") {
    // Rows are orthogonal, so each residual equals the row itself and the
    // score reduces to significance × uniqueness, computable by hand.
    Matrix h(3, 6);
    h.at(0, 0) = 2.0;
    h.at(1, 1) = 1.0;
    h.at(2, 2) = 3.0;
    const auto s = gem_scores(h, MaskFlags(3, 1));
    for (size_t i = 0; i < 3; ++i) {
      // significance: cos(h_i, mean); uniqueness: 1 - max cos = 1 here.
      std::vector<double> mean{2.0 / 3, 1.0 / 3, 1.0, 0, 0, 0};
      double dot = 0, nm = 0, nh = 0;
      for (size_t c = 0; c < 6; ++c) {
        dot += h.at(i, c) * mean[c];
        nm += mean[c] * mean[c];
        nh += h.at(i, c) * h.at(i, c);
      }
      const double sig = std::max(0.0, dot / std::sqrt(nm * nh));
      CHECK(s.values[i] == doctest::Approx(1.0 * sig * 1.0).epsilon(1e-12));
    }
  }
  SUBCASE("duplicate rows have zero uniqueness and zero score") {
    Rng rng(24);
    Matrix h = test::random_matrix(4, 6, rng);
    for (size_t c = 0; c < 6; ++c) h.at(2, c) = h.at(1, c);
    const auto s = gem_scores(h, MaskFlags(4, 1));
    CHECK(s.values[1] == 0.0);
    CHECK(s.values[2] == 0.0);
  }
  SUBCASE("fewer than two valid rows is a degenerate-input error") {
    CHECK_THROWS_AS(gem_scores(Matrix(3, 4), MaskFlags{1, 0, 0}), DegenerateError);
  }
}

TEST_CASE("gem novelty matches a normal-equations least-squares oracle") {
  Rng rng(25);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix h = test::random_matrix(4, 8, rng);
    const MaskFlags mask(4, 1);
    const auto s = gem_scores(h, mask);

    for (size_t i = 0; i < 4; ++i) {
      // Solve min_x || B^T x - h_i || with B the other rows, via normal
      // equations, then reassemble novelty·significance·uniqueness.
      std::vector<size_t> others;
      for (size_t j = 0; j < 4; ++j)
        if (j != i) others.push_back(j);
      const size_t k = others.size();
      std::vector<std::vector<double>> gram(k, std::vector<double>(k + 1, 0.0));
      for (size_t a = 0; a < k; ++a) {
        for (size_t b = 0; b < k; ++b)
          for (size_t c = 0; c < 8; ++c)
            gram[a][b] += h.at(others[a], c) * h.at(others[b], c);
        for (size_t c = 0; c < 8; ++c) gram[a][k] += h.at(others[a], c) * h.at(i, c);
      }
      for (size_t col = 0; col < k; ++col) {  // gaussian elimination
        size_t piv = col;
        for (size_t r = col + 1; r < k; ++r)
          if (std::abs(gram[r][col]) > std::abs(gram[piv][col])) piv = r;
        std::swap(gram[col], gram[piv]);
        for (size_t r = 0; r < k; ++r) {
          if (r == col) continue;
          const double f = gram[r][col] / gram[col][col];
          for (size_t c2 = col; c2 <= k; ++c2) gram[r][c2] -= f * gram[col][c2];
        }
      }
      std::vector<double> x(k);
      for (size_t a = 0; a < k; ++a) x[a] = gram[a][k] / gram[a][a];

      double res2 = 0.0, hn2 = 0.0;
      for (size_t c = 0; c < 8; ++c) {
        double fit = 0.0;
        for (size_t a = 0; a < k; ++a) fit += x[a] * h.at(others[a], c);
        res2 += (h.at(i, c) - fit) * (h.at(i, c) - fit);
        hn2 += h.at(i, c) * h.at(i, c);
      }
      const double novelty = std::sqrt(res2) / std::max(std::sqrt(hn2), 1e-12);

      std::vector<double> mean(8, 0.0);
      for (size_t j = 0; j < 4; ++j)
        for (size_t c = 0; c < 8; ++c) mean[c] += h.at(j, c) / 4.0;
      double dm = 0, nm = 0;
      for (size_t c = 0; c < 8; ++c) {
        dm += h.at(i, c) * mean[c];
        nm += mean[c] * mean[c];
      }
      const double sig = std::max(0.0, dm / std::sqrt(nm * hn2));
      double max_cos = -1.0;
      for (size_t j : others) {
        double dj = 0, nj = 0;
        for (size_t c = 0; c < 8; ++c) {
          dj += h.at(i, c) * h.at(j, c);
          nj += h.at(j, c) * h.at(j, c);
        }
        max_cos = std::max(max_cos, dj / std::sqrt(nj * hn2));
      }
      const double uniq = std::clamp(1.0 - max_cos, 0.0, 1.0);
      CHECK(std::abs(s.values[i] - novelty * sig * uniq) < 1e-9);
    }
  }
}

TEST_CASE("random_scores is constant on valid positions and zero on padding") {
  const auto s = random_scores(5, MaskFlags{1, 1, 1, 0, 0});
  CHECK(s.values[0] > 0.0);
  CHECK(s.values[0] == s.values[1]);
  CHECK(s.values[1] == s.values[2]);
  CHECK(s.values[3] == 0.0);
  CHECK(s.values[4] == 0.0);
}

namespace {

// Corpus whose label is fully determined by the presence of "hot": the
// trained bag-of-words classifier must concentrate its weight there.
std::vector<Example> planted_corpus(const Vocab& vocab, size_t max_len, size_t count, Rng& rng) {
  std::vector<Example> out;
  const std::vector<std::string> noise{"n0", "n1", "n2", "n3"};
  for (size_t i = 0; i < count; ++i) {
    const bool hot = (i % 2 == 0);
    std::string text;
    for (int w = 0; w < 3; ++w) text += noise[rng.uniform_index(noise.size())] + " ";
    if (hot) text += "hot";
    out.push_back(make_example(text, hot ? 1 : 0, static_cast<int64_t>(i), vocab, max_len));
  }
  return out;
}

}  // namespace

TEST_CASE("lime gives the planted token the strictly largest score") {
  Rng rng(29);
  std::vector<std::string> texts;
  for (int i = 0; i < 40; ++i) {
    std::string t = "n0 n1 n2 n3";
    if (i % 2 == 0) t += " hot";
    texts.push_back(t);
  }
  const Vocab vocab = Vocab::build(texts);
  auto corpus = planted_corpus(vocab, 8, 40, rng);

  Rng lime_rng(31);
  const LimeTable table = lime_precompute(corpus, vocab, 2, 20, 100000, lime_rng);
  const size_t hot_id = vocab.lookup("hot");
  REQUIRE(hot_id != Vocab::kUnk);

  for (const Example& ex : corpus) {
    const auto* row = table.find(ex.id);
    REQUIRE(row != nullptr);
    // Specials are never words: zero coefficients at <s> and </s>.
    CHECK((*row)[0] == 0.0);
    CHECK((*row)[ex.valid_len() - 1] == 0.0);
    for (size_t i = 0; i < ex.ids.size(); ++i) {
      if (!ex.mask[i]) CHECK((*row)[i] == 0.0);
    }
    size_t hot_pos = SIZE_MAX;
    for (size_t i = 0; i < ex.ids.size(); ++i)
      if (ex.ids[i] == hot_id) hot_pos = i;
    if (hot_pos == SIZE_MAX) continue;
    for (size_t i = 0; i < row->size(); ++i) {
      if (i == hot_pos) continue;
      CHECK((*row)[hot_pos] > (*row)[i]);
    }
  }
}

TEST_CASE("lime rejects too few perturbations") {
  Rng rng(33);
  const Vocab vocab = Vocab::build({"a b"});
  auto corpus = std::vector<Example>{make_example("a b", 0, 0, vocab, 8)};
  CHECK_THROWS_AS(lime_precompute(corpus, vocab, 2, 5, 0, rng), ConfigError);
  CHECK_THROWS_AS(lime_precompute(corpus, vocab, 2, 5, 99, rng), ConfigError);
}

TEST_CASE("dropblock zeroes span cells in a dimension subset and keeps the mask") {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_dim = 16;
  cfg.num_heads = 2;
  cfg.ffn_dim = 24;
  cfg.vocab_size = 10;
  cfg.max_len = 8;
  cfg.num_classes = 2;
  Rng init(35);
  const EncoderParams p = EncoderParams::init(cfg, init);
  Example ex;
  ex.ids = {1, 5, 6, 7, 8, 2};
  ex.mask.assign(6, 1);
  ex.label = 0;
  ex.id = 3;

  SUBCASE("dim_fraction one equals a whole-row cut on values") {
    Tape t;
    Rng rng(77);
    const auto db = dropblock_forward(t, cfg, bind_params(t, p), ex, 0.3, 1.0, rng);
    REQUIRE(db.cell_masks.size() == 2);
    for (const Matrix& m : db.cell_masks) {
      size_t zero_rows = 0;
      for (size_t r = 0; r < m.rows(); ++r) {
        bool all_zero = true, all_one = true;
        for (size_t c = 0; c < m.cols(); ++c)
          (m.at(r, c) == 0.0 ? all_one : all_zero) = false;
        CHECK((all_zero || all_one));
        if (all_zero) {
          ++zero_rows;
          CHECK(r >= 1);
        }
      }
      CHECK(zero_rows == span_length(6, 0.3));
    }
  }
  SUBCASE("dim_fraction half zeroes exactly l x D/2 cells per layer") {
    Tape t;
    Rng rng(78);
    const auto db = dropblock_forward(t, cfg, bind_params(t, p), ex, 0.3, 0.5, rng);
    for (const Matrix& m : db.cell_masks) {
      size_t zeros = 0;
      for (size_t i = 0; i < m.size(); ++i)
        if (m.data()[i] == 0.0) ++zeros;
      CHECK(zeros == span_length(6, 0.3) * 8);
    }
  }
  SUBCASE("seeded runs reproduce the identical zero pattern") {
    Tape t1, t2;
    Rng r1(79), r2(79);
    const auto a = dropblock_forward(t1, cfg, bind_params(t1, p), ex, 0.3, 0.5, r1);
    const auto b = dropblock_forward(t2, cfg, bind_params(t2, p), ex, 0.3, 0.5, r2);
    for (size_t m = 0; m < a.cell_masks.size(); ++m) CHECK(a.cell_masks[m] == b.cell_masks[m]);
    CHECK(t1.value(a.logits) == t2.value(b.logits));
  }
}
