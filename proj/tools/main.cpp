// Command-line front end: data generation, training, evaluation, the
// ablation grid driver, attention inspection and the gradient check.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "hcut/config_json.hpp"
#include "hcut/trainkit.hpp"

namespace fs = std::filesystem;
using namespace hcut;

namespace {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  const nlohmann::json j = load_json_file(path);
  if (j.contains("model")) rc.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) rc.train = train_config_from_json(j.at("train"));
  if (j.contains("cut")) rc.train.cut = cut_config_from_json(j.at("cut"), rc.train.cut);
  return rc;
}

struct LoadedData {
  std::vector<Example> train, dev, ood;
  bool has_ood = false;
  Vocab vocab;
  size_t num_classes = 0;
};

std::vector<Example> tokenize_split(const TextDataset& ds, const Vocab& vocab, size_t max_len) {
  std::vector<Example> out;
  out.reserve(ds.size());
  for (size_t i = 0; i < ds.size(); ++i)
    out.push_back(make_example(ds.texts[i], ds.labels[i], static_cast<int64_t>(i), vocab, max_len));
  return out;
}

LoadedData load_data_dir(const std::string& dir, size_t max_len) {
  const fs::path base(dir);
  if (!fs::exists(base / "train.tsv") || !fs::exists(base / "dev.tsv"))
    throw DataError("data directory needs train.tsv and dev.tsv: " + dir);
  const TextDataset train_ds = read_tsv((base / "train.tsv").string());
  const TextDataset dev_ds = read_tsv((base / "dev.tsv").string());
  if (train_ds.size() == 0) throw DataError("empty training split in " + dir);

  LoadedData data;
  data.vocab = Vocab::build(train_ds.texts);
  data.num_classes = train_ds.num_classes();
  data.train = tokenize_split(train_ds, data.vocab, max_len);
  data.dev = tokenize_split(dev_ds, data.vocab, max_len);
  if (fs::exists(base / "ood.tsv")) {
    data.ood = tokenize_split(read_tsv((base / "ood.tsv").string()), data.vocab, max_len);
    data.has_ood = true;
  }
  return data;
}

Model build_model(const ModelConfig& base, const LoadedData& data, const TrainConfig& tc) {
  Model m;
  m.config = base;
  m.config.vocab_size = data.vocab.size();
  m.config.num_classes = data.num_classes;
  m.config.validate();
  Rng rng = Rng::derive(tc.seed, {0x1417});
  m.params = EncoderParams::init(m.config, rng, tc.init_std);
  m.vocab = data.vocab;
  return m;
}

struct TrainOutcome {
  Model model;
  MetricsReport report;
};

TrainOutcome run_training(const ModelConfig& mc, const TrainConfig& tc, const LoadedData& data,
                          const std::string& out_dir, bool quiet) {
  TrainOutcome out{build_model(mc, data, tc), {}};

  LimeTable lime;
  const bool needs_lime =
      tc.cut.enabled && !tc.cut.dropblock && tc.cut.strategy == StrategyKind::Lime;
  if (needs_lime) {
    Rng lime_rng = Rng::derive(tc.seed, {0x117E});
    lime = lime_precompute(data.train, data.vocab, data.num_classes, tc.lime_surrogate_epochs,
                           tc.lime_num_perturb, lime_rng);
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      lime.write_tsv((fs::path(out_dir) / "lime_scores.tsv").string());
    }
  }

  std::string metrics_path;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
    std::remove(metrics_path.c_str());  // fresh log per run
  }
  out.report = train(tc, out.model, data.train, data.dev, data.has_ood ? &data.ood : nullptr,
                     needs_lime ? &lime : nullptr, metrics_path);
  if (!quiet) {
    for (const EpochRecord& r : out.report.epochs) {
      std::cout << "epoch " << r.epoch << " l_ori=" << r.l_ori << " l_aug=" << r.l_aug
                << " l_js=" << r.l_js << " train_acc=" << r.train_acc << " dev=" << r.dev_metric;
      if (r.ood_metric) std::cout << " ood=" << *r.ood_metric;
      std::cout << "\n";
    }
  }
  if (!out_dir.empty()) save_checkpoint(out.model, tc, (fs::path(out_dir) / "model.hcut").string());
  return out;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir, uint64_t seed,
                 bool seed_given) {
  SpuriousSpec spec = spurious_spec_from_json(load_json_file(spec_path));
  if (seed_given) spec.seed = seed;
  const SpuriousBenchmark bench = generate_spurious_benchmark(spec);
  fs::create_directories(out_dir);
  write_tsv(bench.train, (fs::path(out_dir) / "train.tsv").string());
  write_tsv(bench.dev, (fs::path(out_dir) / "dev.tsv").string());
  write_tsv(bench.ood, (fs::path(out_dir) / "ood.tsv").string());
  std::ofstream prov((fs::path(out_dir) / "spec.json").string());
  prov << to_json(spec).dump(2) << "\n";
  std::cout << "wrote " << bench.train.size() << "/" << bench.dev.size() << "/"
            << bench.ood.size() << " examples to " << out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& metric) {
  const LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  const TextDataset ds = read_tsv(data_path);
  if (ds.size() == 0) throw DataError("eval: empty dataset");
  const auto examples = tokenize_split(ds, ckpt.model.vocab, ckpt.model.config.max_len);

  if (metric == "acc") {
    std::cout << "acc " << evaluate(ckpt.model, examples) << "\n";
    return 0;
  }
  const auto preds = predict(ckpt.model, examples);
  if (metric == "mcc") {
    if (ckpt.model.config.num_classes != 2)
      throw DataError("eval: matthews correlation needs a binary task");
    size_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] == 1 && examples[i].label == 1) ++tp;
      if (preds[i] == 0 && examples[i].label == 0) ++tn;
      if (preds[i] == 1 && examples[i].label == 0) ++fp;
      if (preds[i] == 0 && examples[i].label == 1) ++fn;
    }
    std::cout << "mcc " << matthews_corr(tp, tn, fp, fn) << "\n";
    return 0;
  }
  if (metric == "spearman") {
    std::vector<double> xs, ys;
    for (size_t i = 0; i < preds.size(); ++i) {
      xs.push_back(static_cast<double>(preds[i]));
      ys.push_back(static_cast<double>(examples[i].label));
    }
    bool degenerate = false;
    const double rho = spearman_corr(xs, ys, &degenerate);
    std::cout << "spearman " << rho << (degenerate ? " (degenerate: zero rank variance)" : "")
              << "\n";
    return 0;
  }
  throw ConfigError("eval: unknown metric '" + metric + "'");
}

int cmd_ablate(const RunConfig& rc, const std::string& grid, const std::string& data_dir,
               const std::string& out_dir) {
  const LoadedData data = load_data_dir(data_dir, rc.model.max_len);
  fs::create_directories(out_dir);

  struct Row {
    std::string value;
    TrainConfig tc;
  };
  std::vector<Row> rows;
  const auto with = [&](const std::string& label, auto&& tweak) {
    TrainConfig tc = rc.train;
    tc.cut.enabled = true;
    tweak(tc);
    rows.push_back({label, tc});
  };
  if (grid == "alpha") {
    for (double a : {0.05, 0.1, 0.2, 0.3, 0.4}) {
      char label[8];
      std::snprintf(label, sizeof label, "%.2f", a);
      with(label, [a](TrainConfig& tc) { tc.cut.alpha = a; });
    }
  } else if (grid == "beta") {
    for (double b : {0.1, 0.2, 0.4, 0.6}) {
      char label[8];
      std::snprintf(label, sizeof label, "%.1f", b);
      with(label, [b](TrainConfig& tc) { tc.cut.beta = b; });
    }
  } else if (grid == "strategy") {
    const std::vector<std::pair<std::string, StrategyKind>> reversible{
        {"lime", StrategyKind::Lime},
        {"gem", StrategyKind::Gem},
        {"gradient", StrategyKind::Gradient},
        {"attention", StrategyKind::Attention}};
    with("random", [](TrainConfig& tc) { tc.cut.strategy = StrategyKind::Random; });
    for (const auto& [name, kind] : reversible) {
      with(name, [k = kind](TrainConfig& tc) { tc.cut.strategy = k; });
      with(name + "-R", [k = kind](TrainConfig& tc) {
        tc.cut.strategy = k;
        tc.cut.reverse = true;
      });
    }
    with("dropblock", [](TrainConfig& tc) { tc.cut.dropblock = true; });
  } else {
    throw ConfigError("ablate: unknown grid '" + grid + "'");
  }

  const std::string csv_path = (fs::path(out_dir) / ("ablate_" + grid + ".csv")).string();
  std::ofstream csv(csv_path);
  if (!csv) throw DataError("ablate: cannot open " + csv_path);
  csv << "grid,value,seed,dev_acc,ood_acc\n";
  csv.precision(6);
  for (const Row& row : rows) {
    for (uint64_t s = 0; s < 3; ++s) {
      TrainConfig tc = row.tc;
      tc.seed = rc.train.seed + s;
      const TrainOutcome out = run_training(rc.model, tc, data, "", /*quiet=*/true);
      csv << grid << ',' << row.value << ',' << tc.seed << ',' << out.report.final_dev << ',';
      if (out.report.final_ood) csv << *out.report.final_ood;
      csv << "\n";
      csv.flush();
      std::cout << grid << "=" << row.value << " seed=" << tc.seed
                << " dev=" << out.report.final_dev;
      if (out.report.final_ood) std::cout << " ood=" << *out.report.final_ood;
      std::cout << "\n";
    }
  }
  std::cout << "wrote " << csv_path << "\n";
  return 0;
}

int cmd_inspect(const std::string& ckpt_path, const std::string& text, const std::string& out) {
  const LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  const Example ex = make_example(text, 0, 0, ckpt.model.vocab, ckpt.model.config.max_len);
  inspect_attention(ckpt.model, ex, out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_grad_check(const RunConfig& rc) {
  // Deterministic synthetic batch: random in-vocabulary tokens under the
  // config seed, full max_len sequences.
  ModelConfig mc = rc.model;
  mc.validate();
  TrainConfig tc = rc.train;
  // Span starts must not move while parameters are perturbed, so the check
  // always samples with the Random strategy; the gradient path through a cut
  // is the same whichever strategy chose it.
  tc.cut.strategy = StrategyKind::Random;
  tc.cut.dropblock = false;

  Model model;
  model.config = mc;
  Rng init = Rng::derive(tc.seed, {0x1417});
  model.params = EncoderParams::init(mc, init, tc.init_std);

  Rng data_rng = Rng::derive(tc.seed, {0xDA7A});
  std::vector<Example> batch;
  for (int i = 0; i < 2; ++i) {
    Example ex;
    ex.ids.push_back(Vocab::kBos);
    for (size_t p = 0; p + 2 < mc.max_len; ++p)
      ex.ids.push_back(4 + data_rng.uniform_index(mc.vocab_size - 4));
    ex.ids.push_back(Vocab::kEos);
    ex.mask.assign(ex.ids.size(), 1);
    ex.label = data_rng.uniform_index(mc.num_classes);
    ex.id = i;
    batch.push_back(ex);
  }

  const GradCheckReport report = objective_grad_check(tc, model, batch, nullptr, 1e-4);
  std::cout << "loss " << report.loss << "\nmax_rel_err " << report.max_rel_err << "\n";
  if (!(report.max_rel_err < 1e-6)) {
    std::cerr << "gradient check failed tolerance 1e-6\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HiddenCut training laboratory"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the spurious-correlation benchmark");
  std::string gen_spec, gen_out = "data";
  uint64_t gen_seed = 0;
  gen->add_option("--spec", gen_spec, "benchmark spec JSON")->required();
  gen->add_option("--out", gen_out, "output directory");
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "override the spec seed");

  // train
  auto* tr = app.add_subcommand("train", "fine-tune a model");
  std::string tr_config, tr_data = "data", tr_out = "run";
  double tr_alpha = 0, tr_beta = 0, tr_gamma = 0, tr_eta = 0;
  std::string tr_strategy;
  uint64_t tr_seed = 0;
  size_t tr_num_aug = 0;
  bool tr_reverse = false, tr_dropblock = false;
  tr->add_option("--config", tr_config, "run config JSON");
  auto* o_alpha = tr->add_option("--alpha", tr_alpha, "span ratio");
  auto* o_beta = tr->add_option("--beta", tr_beta, "candidate-set ratio");
  auto* o_gamma = tr->add_option("--gamma", tr_gamma, "augmented CE weight");
  auto* o_eta = tr->add_option("--eta", tr_eta, "consistency weight");
  auto* o_strategy =
      tr->add_option("--strategy", tr_strategy, "random|attention|gradient|gem|lime");
  auto* o_reverse = tr->add_flag("--reverse", tr_reverse, "sample outside the candidate set");
  auto* o_num_aug = tr->add_option("--num-aug", tr_num_aug, "augmented views per example");
  auto* o_dropblock = tr->add_flag("--dropblock", tr_dropblock, "DropBlock ablation baseline");
  auto* o_seed = tr->add_option("--seed", tr_seed, "run seed");
  tr->add_option("--data", tr_data, "data directory (train.tsv/dev.tsv[/ood.tsv])");
  tr->add_option("--out", tr_out, "output directory");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a TSV file");
  std::string ev_ckpt, ev_data, ev_metric = "acc";
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--metric", ev_metric, "acc|mcc|spearman");

  // ablate
  auto* ab = app.add_subcommand("ablate", "sweep a grid and emit a CSV");
  std::string ab_config, ab_grid, ab_data = "data", ab_out = "ablate";
  ab->add_option("--config", ab_config, "run config JSON");
  ab->add_option("--grid", ab_grid, "alpha|beta|strategy")->required();
  ab->add_option("--data", ab_data, "data directory");
  ab->add_option("--out", ab_out, "output directory");

  // inspect-attention
  auto* in = app.add_subcommand("inspect-attention", "dump last-layer start-token attention");
  std::string in_ckpt, in_text, in_out = "attention.csv";
  in->add_option("--checkpoint", in_ckpt)->required();
  in->add_option("--text", in_text)->required();
  in->add_option("--out", in_out);

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "reverse-mode vs finite differences");
  std::string gc_config;
  gc->add_option("--config", gc_config, "run config JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_spec, gen_out, gen_seed, gen_seed_opt->count() > 0);
    if (tr->parsed()) {
      RunConfig rc = load_run_config(tr_config);
      // Flag precedence: command line > config file > defaults.
      if (o_alpha->count()) rc.train.cut.alpha = tr_alpha;
      if (o_beta->count()) rc.train.cut.beta = tr_beta;
      if (o_gamma->count()) rc.train.gamma = tr_gamma;
      if (o_eta->count()) rc.train.eta = tr_eta;
      if (o_strategy->count()) rc.train.cut.strategy = strategy_from_name(tr_strategy);
      if (o_reverse->count()) rc.train.cut.reverse = tr_reverse;
      if (o_num_aug->count()) rc.train.cut.num_aug = tr_num_aug;
      if (o_dropblock->count()) rc.train.cut.dropblock = tr_dropblock;
      if (o_seed->count()) rc.train.seed = tr_seed;
      const LoadedData data = load_data_dir(tr_data, rc.model.max_len);
      const TrainOutcome out = run_training(rc.model, rc.train, data, tr_out, false);
      std::cout << "final dev=" << out.report.final_dev;
      if (out.report.final_ood) std::cout << " ood=" << *out.report.final_ood;
      std::cout << "\ncheckpoint " << (fs::path(tr_out) / "model.hcut").string() << "\n";
      return 0;
    }
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_metric);
    if (ab->parsed()) return cmd_ablate(load_run_config(ab_config), ab_grid, ab_data, ab_out);
    if (in->parsed()) return cmd_inspect(in_ckpt, in_text, in_out);
    if (gc->parsed()) return cmd_grad_check(load_run_config(gc_config));
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {  // covers parse and format errors
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
