#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hcut/config_json.hpp"
#include "hcut/trainkit.hpp"
#include "test_helpers.hpp"

using namespace hcut;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Two-token toy task: the second token decides the class.
struct ToyTask {
  Vocab vocab;
  std::vector<Example> train, dev;

  ToyTask() {
    std::vector<std::string> texts;
    std::vector<size_t> labels;
    for (int i = 0; i < 24; ++i) {
      const bool pos = (i % 2 == 0);
      texts.push_back(pos ? "it was good" : "it was bad");
      labels.push_back(pos ? 1 : 0);
    }
    vocab = Vocab::build(texts);
    for (size_t i = 0; i < texts.size(); ++i) {
      const Example ex = make_example(texts[i], labels[i], static_cast<int64_t>(i), vocab, 8);
      (i < 16 ? train : dev).push_back(ex);
    }
  }

  Model make_model(uint64_t seed) const {
    Model m;
    m.config.num_layers = 1;
    m.config.hidden_dim = 16;
    m.config.num_heads = 2;
    m.config.ffn_dim = 24;
    m.config.vocab_size = vocab.size();
    m.config.max_len = 8;
    m.config.num_classes = 2;
    Rng rng = Rng::derive(seed, {0x1417});
    m.params = EncoderParams::init(m.config, rng, 0.1);
    m.vocab = vocab;
    return m;
  }
};

}  // namespace

TEST_CASE("lr_at boundary and closed-form values") {
  CHECK(lr_at(0, 100, 1e-5, 0.06) == 0.0);
  CHECK(lr_at(6, 100, 1e-5, 0.06) == 1e-5);  // warmup end hits the peak
  CHECK(lr_at(53, 100, 1e-5, 0.06) == doctest::Approx(1e-5 * (100.0 - 53.0) / (100.0 - 6.0)).epsilon(1e-15));
  CHECK(lr_at(100, 100, 1e-5, 0.06) == 0.0);
  CHECK_THROWS_AS(lr_at(101, 100, 1e-5, 0.06), ContractError);
}

TEST_CASE("lr schedule is continuous at the warmup/decay junction") {
  const size_t total = 500;
  const double peak = 3e-4;
  const size_t warmup = static_cast<size_t>(std::ceil(0.06 * total));
  const double before = lr_at(warmup - 1, total, peak, 0.06);
  const double at = lr_at(warmup, total, peak, 0.06);
  const double after = lr_at(warmup + 1, total, peak, 0.06);
  CHECK(at == peak);
  CHECK(std::abs(at - before) < peak / static_cast<double>(warmup) + 1e-18);
  CHECK(std::abs(after - at) < peak / static_cast<double>(total - warmup) + 1e-18);
}

TEST_CASE("adam with a zero gradient leaves parameters unchanged and decays moments") {
  Matrix w = Matrix::from_rows({{1.0, -2.0}});
  std::vector<std::pair<std::string, Matrix*>> manifest{{"w", &w}};
  AdamState st = adam_init(manifest);

  const Matrix w_before = w;
  adam_step(manifest, {Matrix(1, 2)}, st, 1e-3);
  CHECK(w == w_before);

  // Once the moments are primed, a zero gradient decays them by the betas.
  adam_step(manifest, {Matrix::from_rows({{0.5, 0.5}})}, st, 0.0);
  const double m_before = st.m[0].at(0, 0);
  const double v_before = st.v[0].at(0, 0);
  adam_step(manifest, {Matrix(1, 2)}, st, 0.0);
  CHECK(st.m[0].at(0, 0) == doctest::Approx(0.9 * m_before).epsilon(1e-15));
  CHECK(st.v[0].at(0, 0) == doctest::Approx(0.999 * v_before).epsilon(1e-15));
}

TEST_CASE("first adam step matches the closed form") {
  Matrix w = Matrix::from_rows({{0.2, -0.4}});
  const Matrix w0 = w;
  std::vector<std::pair<std::string, Matrix*>> manifest{{"w", &w}};
  AdamState st = adam_init(manifest);
  const Matrix g = Matrix::from_rows({{0.03, -1.7}});
  const double lr = 1e-2;
  adam_step(manifest, {g}, st, lr);
  for (size_t c = 0; c < 2; ++c) {
    const double m_hat = g.at(0, c);        // m / (1 - beta1)
    const double v_hat = g.at(0, c) * g.at(0, c);
    const double expect = w0.at(0, c) - lr * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(w.at(0, c) == doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("adam rejects non-finite gradients") {
  Matrix w(1, 2);
  std::vector<std::pair<std::string, Matrix*>> manifest{{"w", &w}};
  AdamState st = adam_init(manifest);
  Matrix g(1, 2);
  g.at(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adam_step(manifest, {g}, st, 1e-3), NumericError);
}

TEST_CASE("adam runs are bit-identical") {
  Rng rng(3);
  Matrix w1 = test::random_matrix(3, 3, rng);
  Matrix w2 = w1;
  std::vector<std::pair<std::string, Matrix*>> m1{{"w", &w1}}, m2{{"w", &w2}};
  AdamState s1 = adam_init(m1), s2 = adam_init(m2);
  for (int i = 0; i < 20; ++i) {
    Rng gr(static_cast<uint64_t>(i));
    const Matrix g = test::random_matrix(3, 3, gr);
    adam_step(m1, {g}, s1, 1e-3);
    adam_step(m2, {g}, s2, 1e-3);
  }
  CHECK(w1 == w2);
}

TEST_CASE("plain fine-tuning reaches the separable toy task and matches a reference loop") {
  const ToyTask toy;
  TrainConfig cfg;
  cfg.peak_lr = 5e-3;
  cfg.epochs = 12;
  cfg.batch_size = 8;
  cfg.seed = 5;
  cfg.gamma = 0.0;
  cfg.eta = 0.0;
  cfg.cut.enabled = false;

  Model model = toy.make_model(5);
  const MetricsReport report = train(cfg, model, toy.train, toy.dev, nullptr, nullptr);
  CHECK(report.final_dev == 1.0);

  // Reference loop without any of the augmentation machinery: identical
  // shuffles, batch means, schedule and optimizer. Losses and final
  // parameters must agree bit for bit.
  Model ref = toy.make_model(5);
  auto manifest = ref.params.tensors();
  AdamState adam = adam_init(manifest);
  const size_t n = toy.train.size();
  const size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const size_t total_steps = cfg.epochs * steps_per_epoch;
  size_t step = 0;
  std::vector<double> ref_epoch_loss;
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng = Rng::derive(cfg.seed, {0xE70C, epoch});
    for (size_t i = n; i-- > 1;) std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);
    double sum_loss = 0.0;
    for (size_t start = 0; start < n; start += cfg.batch_size) {
      const size_t end = std::min(start + cfg.batch_size, n);
      const double inv = 1.0 / static_cast<double>(end - start);
      std::vector<Matrix> grads;
      for (auto& [name, ptr] : manifest) grads.emplace_back(ptr->rows(), ptr->cols());
      for (size_t bi = start; bi < end; ++bi) {
        const Example& ex = toy.train[order[bi]];
        Tape t;
        const ParamVars pv = bind_params(t, ref.params);
        const EncodeResult enc = encode(t, ref.config, pv, ex.ids, ex.mask);
        const Var loss = t.cross_entropy_logits(classify_head(t, pv, enc.hidden), ex.label);
        sum_loss += t.scalar(loss);
        t.backward(loss);
        for (size_t i = 0; i < manifest.size(); ++i) {
          const Matrix g = t.grad_of_param(manifest[i].second);
          for (size_t j = 0; j < g.size(); ++j) grads[i].data()[j] += inv * g.data()[j];
        }
      }
      ++step;
      adam_step(manifest, grads, adam, lr_at(step, total_steps, cfg.peak_lr, cfg.warmup_ratio));
    }
    ref_epoch_loss.push_back(sum_loss / static_cast<double>(n));
  }
  for (size_t e = 0; e < cfg.epochs; ++e) CHECK(report.epochs[e].l_ori == ref_epoch_loss[e]);
  const auto got = model.params.tensors();
  const auto want = ref.params.tensors();
  for (size_t i = 0; i < got.size(); ++i) CHECK(*got[i].second == *want[i].second);
}

TEST_CASE("seeded runs write byte-identical metrics") {
  const ToyTask toy;
  TrainConfig cfg;
  cfg.peak_lr = 2e-3;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 9;
  cfg.cut.enabled = true;
  cfg.cut.strategy = StrategyKind::Attention;

  const std::string p1 = temp_path("hcut_metrics_a.jsonl");
  const std::string p2 = temp_path("hcut_metrics_b.jsonl");
  std::remove(p1.c_str());
  std::remove(p2.c_str());
  Model m1 = toy.make_model(9);
  Model m2 = toy.make_model(9);
  const MetricsReport r1 = train(cfg, m1, toy.train, toy.dev, nullptr, nullptr, p1);
  const MetricsReport r2 = train(cfg, m2, toy.train, toy.dev, nullptr, nullptr, p2);
  CHECK(slurp(p1) == slurp(p2));
  CHECK(r1.to_jsonl() == r2.to_jsonl());
  CHECK(!slurp(p1).empty());
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("evaluate counts argmax-correct predictions") {
  const ToyTask toy;
  Model model = toy.make_model(5);
  SUBCASE("hand confusion cases") {
    TrainConfig cfg;
    cfg.peak_lr = 5e-3;
    cfg.epochs = 12;
    cfg.batch_size = 8;
    cfg.seed = 5;
    cfg.gamma = 0.0;
    cfg.eta = 0.0;
    cfg.cut.enabled = false;
    train(cfg, model, toy.train, toy.dev, nullptr, nullptr);
    CHECK(evaluate(model, toy.dev) == 1.0);

    // Permuting the labels of a balanced binary split complements accuracy.
    std::vector<Example> flipped = toy.dev;
    for (Example& ex : flipped) ex.label = 1 - ex.label;
    CHECK(evaluate(model, flipped) == doctest::Approx(1.0 - evaluate(model, toy.dev)));
  }
  SUBCASE("evaluate is invariant to example order") {
    const double base = evaluate(model, toy.dev);
    std::vector<Example> shuffled = toy.dev;
    std::swap(shuffled[0], shuffled[5]);
    std::swap(shuffled[2], shuffled[7]);
    CHECK(evaluate(model, shuffled) == base);
  }
  SUBCASE("three-example manual count") {
    std::vector<Example> three{toy.dev[0], toy.dev[1], toy.dev[2]};
    const auto preds = predict(model, three);
    size_t manual = 0;
    for (size_t i = 0; i < 3; ++i)
      if (preds[i] == three[i].label) ++manual;
    CHECK(evaluate(model, three) == doctest::Approx(static_cast<double>(manual) / 3.0));
  }
}

TEST_CASE("matthews correlation hand cases") {
  CHECK(matthews_corr(5, 5, 0, 0) == 1.0);
  CHECK(matthews_corr(10, 0, 5, 0) == 0.0);  // all-one-class prediction
  CHECK(matthews_corr(6, 3, 1, 2) == doctest::Approx(0.478).epsilon(1e-3));
}

TEST_CASE("spearman correlation hand cases") {
  CHECK(spearman_corr({1, 2, 3, 4}, {1, 2, 3, 4}) == 1.0);
  CHECK(spearman_corr({1, 2, 3, 4}, {4, 3, 2, 1}) == -1.0);
  // Tie case against the rank-then-Pearson oracle: ranks of xs are
  // [1, 2.5, 2.5, 4], so r = 4.5 / sqrt(4.5 * 5) = 3 / sqrt(10).
  CHECK(std::abs(spearman_corr({1, 2, 2, 3}, {1, 2, 3, 4}) - 3.0 / std::sqrt(10.0)) < 1e-12);
  bool degenerate = false;
  CHECK(spearman_corr({1, 1, 1}, {1, 2, 3}, &degenerate) == 0.0);
  CHECK(degenerate);
}

TEST_CASE("checkpoint round trip is byte-identical and metric preserving") {
  const ToyTask toy;
  Model model = toy.make_model(21);
  TrainConfig cfg;
  cfg.seed = 21;

  const std::string p1 = temp_path("hcut_ckpt_a.bin");
  const std::string p2 = temp_path("hcut_ckpt_b.bin");
  save_checkpoint(model, cfg, p1);
  LoadedCheckpoint loaded = load_checkpoint(p1);
  save_checkpoint(loaded.model, loaded.train, p2);
  CHECK(slurp(p1) == slurp(p2));
  CHECK(evaluate(model, toy.dev) == evaluate(loaded.model, toy.dev));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint corruption is rejected") {
  const ToyTask toy;
  Model model = toy.make_model(22);
  TrainConfig cfg;
  const std::string path = temp_path("hcut_ckpt_corrupt.bin");
  save_checkpoint(model, cfg, path);
  const std::string original = slurp(path);

  SUBCASE("bad magic") {
    std::string bytes = original;
    bytes[0] = 'X';
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("bad version") {
    std::string bytes = original;
    bytes[4] = 9;
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("corrupted header byte") {
    std::string bytes = original;
    bytes[20] = '~';  // inside the JSON header
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("truncated payload") {
    std::string bytes = original.substr(0, original.size() - 9);
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("manifest shape disagreeing with the model config") {
    // Rewrite the header with a wrong row count for the first tensor.
    const uint64_t header_len =
        static_cast<uint64_t>(static_cast<uint8_t>(original[8])) |
        (static_cast<uint64_t>(static_cast<uint8_t>(original[9])) << 8);
    nlohmann::json header = nlohmann::json::parse(original.substr(16, header_len));
    header["manifest"][0]["rows"] = header["manifest"][0]["rows"].get<size_t>() + 1;
    const std::string new_header = header.dump();
    std::string bytes = original.substr(0, 8);
    for (int i = 0; i < 8; ++i)
      bytes.push_back(static_cast<char>((new_header.size() >> (8 * i)) & 0xff));
    bytes += new_header;
    bytes += original.substr(16 + header_len);
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  std::remove(path.c_str());
}

TEST_CASE("inspect_attention writes normalized weights in position order") {
  const ToyTask toy;
  const Model model = toy.make_model(23);
  const std::string path = temp_path("hcut_attn.csv");

  SUBCASE("single-position sequence has weight one") {
    Example ex;
    ex.ids = {Vocab::kBos};
    ex.mask = {1};
    inspect_attention(model, ex, path);
    std::ifstream in(path);
    std::string header, row;
    std::getline(in, header);
    CHECK(header == "token,position,weight");
    std::getline(in, row);
    CHECK(row == "<s>,0,1");
  }
  SUBCASE("uniform attention from an all-zero model") {
    Model zero = model;
    zero.params = EncoderParams::zeros(zero.config);
    const Example ex = make_example("it was good", 1, 0, toy.vocab, 8);
    inspect_attention(zero, ex, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    size_t rows = 0;
    while (std::getline(in, line)) {
      const size_t c2 = line.rfind(',');
      CHECK(std::stod(line.substr(c2 + 1)) ==
            doctest::Approx(1.0 / static_cast<double>(ex.valid_len())).epsilon(1e-12));
      ++rows;
    }
    CHECK(rows == ex.valid_len());
  }
  SUBCASE("weights sum to one and repeated runs are byte-identical") {
    const Example ex = make_example("it was good", 1, 0, toy.vocab, 8, 8);  // padded
    inspect_attention(model, ex, path);
    const std::string first = slurp(path);
    inspect_attention(model, ex, path);
    CHECK(slurp(path) == first);

    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    double sum = 0.0;
    size_t rows = 0;
    while (std::getline(in, line)) {
      sum += std::stod(line.substr(line.rfind(',') + 1));
      ++rows;
    }
    CHECK(rows == ex.valid_len());  // padding rows excluded
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
  std::remove(path.c_str());
}

TEST_CASE("config json round trip preserves every field") {
  TrainConfig cfg;
  cfg.peak_lr = 1.25e-3;
  cfg.epochs = 7;
  cfg.seed = 123;
  cfg.cut.strategy = StrategyKind::Gem;
  cfg.cut.reverse = true;
  cfg.cut.num_aug = 3;
  const TrainConfig back = train_config_from_json(to_json(cfg));
  CHECK(to_json(back).dump() == to_json(cfg).dump());

  SpuriousSpec spec;
  spec.rho_train = 0.9;
  spec.seed = 77;
  CHECK(to_json(spurious_spec_from_json(to_json(spec))).dump() == to_json(spec).dump());
}
