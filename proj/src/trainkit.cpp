#include "hcut/trainkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace hcut {

void TrainConfig::validate() const {
  if (!(peak_lr > 0.0)) throw ConfigError("train config: peak_lr must be positive");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0))
    throw ConfigError("train config: warmup_ratio must lie in [0, 1)");
  if (epochs < 1 || batch_size < 1) throw ConfigError("train config: epochs/batch_size >= 1");
  if (gamma < 0.0 || eta < 0.0) throw ConfigError("train config: gamma and eta must be >= 0");
  if (!(init_std > 0.0)) throw ConfigError("train config: init_std must be positive");
  if (cut.enabled) cut.validate();
}

double lr_at(size_t step, size_t total_steps, double peak_lr, double warmup_ratio) {
  if (step > total_steps) throw ContractError("lr_at: step past total_steps");
  if (total_steps == 0) return 0.0;
  const size_t warmup =
      static_cast<size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps) - 1e-9));
  if (step <= warmup && warmup > 0)
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (step == 0) return 0.0;
  return peak_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

AdamState adam_init(const std::vector<std::pair<std::string, Matrix*>>& manifest) {
  AdamState st;
  for (const auto& [name, ptr] : manifest) {
    st.m.emplace_back(ptr->rows(), ptr->cols());
    st.v.emplace_back(ptr->rows(), ptr->cols());
  }
  return st;
}

void adam_step(std::vector<std::pair<std::string, Matrix*>>& params,
               const std::vector<Matrix>& grads, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adam_step: parameter/gradient/state size mismatch");
  for (size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].same_shape(*params[i].second))
      throw ShapeError("adam_step: gradient shape mismatch for " + params[i].first);
    if (!grads[i].all_finite())
      throw NumericError("adam_step: non-finite gradient in " + params[i].first);
  }

  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step_count));
  for (size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i].second;
    const Matrix& g = grads[i];
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    for (size_t j = 0; j < p.size(); ++j) {
      m.data()[j] = beta1 * m.data()[j] + (1.0 - beta1) * g.data()[j];
      v.data()[j] = beta2 * v.data()[j] + (1.0 - beta2) * g.data()[j] * g.data()[j];
      const double m_hat = m.data()[j] / bc1;
      const double v_hat = v.data()[j] / bc2;
      p.data()[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

namespace {

nlohmann::json epoch_to_json(const EpochRecord& r) {
  nlohmann::json j{{"epoch", r.epoch},   {"step", r.step},
                   {"l_ori", r.l_ori},   {"l_aug", r.l_aug},
                   {"l_js", r.l_js},     {"train_acc", r.train_acc},
                   {"dev", r.dev_metric}};
  if (r.ood_metric) j["ood"] = *r.ood_metric;
  return j;
}

size_t argmax_lower(const Matrix& logits_row) {
  size_t best = 0;
  for (size_t c = 1; c < logits_row.cols(); ++c)
    if (logits_row.at(0, c) > logits_row.at(0, best)) best = c;
  return best;
}

std::vector<double> row_to_vec(const Matrix& row) {
  return std::vector<double>(row.data(), row.data() + row.size());
}

}  // namespace

std::string MetricsReport::to_jsonl() const {
  std::string out;
  for (const EpochRecord& r : epochs) out += epoch_to_json(r).dump() + "\n";
  nlohmann::json fin{{"final", true}, {"steps", total_steps}, {"dev", final_dev}};
  if (final_ood) fin["ood"] = *final_ood;
  out += fin.dump() + "\n";
  return out;
}

MetricsReport train(const TrainConfig& cfg, Model& model, const std::vector<Example>& train_split,
                    const std::vector<Example>& dev_split, const std::vector<Example>* ood_split,
                    const LimeTable* lime, const std::string& metrics_path) {
  cfg.validate();
  model.config.validate();
  if (train_split.empty() || dev_split.empty()) throw DataError("train: empty dataset");
  if (cfg.cut.enabled && cfg.cut.strategy == StrategyKind::Lime && !cfg.cut.dropblock &&
      lime == nullptr)
    throw ConfigError("train: LIME strategy requires a precomputed table");

  auto manifest = model.params.tensors();
  AdamState adam = adam_init(manifest);
  const size_t n = train_split.size();
  const size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const size_t total_steps = cfg.epochs * steps_per_epoch;

  GradCache cache;
  cache.per_layer.assign(model.config.num_layers,
                         std::vector<double>(model.config.max_len, 0.0));

  std::ofstream metrics_out;
  if (!metrics_path.empty()) {
    metrics_out.open(metrics_path, std::ios::app);
    if (!metrics_out) throw DataError("train: cannot open metrics path " + metrics_path);
  }

  MetricsReport report;
  size_t step = 0;
  std::vector<Matrix> grads;
  grads.reserve(manifest.size());

  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng = Rng::derive(cfg.seed, {0xE70C, epoch});
    for (size_t i = n; i-- > 1;) std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);

    double sum_ori = 0.0, sum_aug = 0.0, sum_js = 0.0;
    size_t train_correct = 0;

    for (size_t batch_start = 0; batch_start < n; batch_start += cfg.batch_size) {
      const size_t batch_end = std::min(batch_start + cfg.batch_size, n);
      const double inv_batch = 1.0 / static_cast<double>(batch_end - batch_start);

      grads.clear();
      for (const auto& [name, ptr] : manifest) grads.emplace_back(ptr->rows(), ptr->cols());

      std::vector<std::vector<double>> cache_accum(
          model.config.num_layers, std::vector<double>(model.config.max_len, 0.0));

      for (size_t bi = batch_start; bi < batch_end; ++bi) {
        const Example& ex = train_split[order[bi]];
        Tape tape;
        ParamVars pv = bind_params(tape, model.params);

        EncodeResult clean = encode(tape, model.config, pv, ex.ids, ex.mask);
        const Var logits = classify_head(tape, pv, clean.hidden);
        const Var l_ori = tape.cross_entropy_logits(logits, ex.label);
        if (argmax_lower(tape.value(logits)) == ex.label) ++train_correct;

        std::vector<Var> scalars{l_ori};
        std::vector<double> weights{1.0};
        std::vector<Var> aug_logits;
        std::vector<std::vector<double>> p_augs;
        std::vector<double> aug_ce_values;

        if (cfg.cut.enabled) {
          StrategyResources res;
          res.grad_cache = &cache;
          res.lime = lime;
          for (size_t a = 1; a <= cfg.cut.num_aug; ++a) {
            Rng aug_rng = Rng::derive(cfg.seed, {0xA06, epoch, static_cast<uint64_t>(ex.id), a});
            AugmentedForward af =
                augmented_forward(tape, model.config, pv, ex, cfg.cut, res, aug_rng);
            const Var ce = tape.cross_entropy_logits(af.logits, ex.label);
            scalars.push_back(ce);
            weights.push_back(cfg.gamma);
            aug_logits.push_back(af.logits);
            p_augs.push_back(softmax(row_to_vec(tape.value(af.logits))));
            aug_ce_values.push_back(tape.scalar(ce));
          }
        }

        double l_js_value = 0.0;
        if (!aug_logits.empty()) {
          const auto p_ori = softmax(row_to_vec(tape.value(logits)));
          std::vector<double> p_avg = p_ori;
          for (const auto& p : p_augs)
            for (size_t c = 0; c < p_avg.size(); ++c) p_avg[c] += p[c];
          for (double& v : p_avg) v /= static_cast<double>(p_augs.size() + 1);
          for (const Var z : aug_logits) {
            const Var kl = tape.kl_to_const(z, p_avg);
            scalars.push_back(kl);
            weights.push_back(cfg.eta);
            l_js_value += tape.scalar(kl);
          }
        }

        const Var total = tape.weighted_sum(scalars, weights);
        const double total_value = tape.scalar(total);
        if (!std::isfinite(total_value)) {
          if (metrics_out.is_open())
            metrics_out << nlohmann::json{{"event", "abort"},
                                          {"epoch", epoch + 1},
                                          {"step", step + 1},
                                          {"example", ex.id}}
                               .dump()
                        << "\n";
          throw NumericError("train: non-finite loss at example " + std::to_string(ex.id));
        }

        sum_ori += tape.scalar(l_ori);
        for (double ce : aug_ce_values) sum_aug += ce;
        sum_js += l_js_value;

        tape.backward(total);
        for (size_t i = 0; i < manifest.size(); ++i) {
          const Matrix g = tape.grad_of_param(manifest[i].second);
          for (size_t j = 0; j < g.size(); ++j) grads[i].data()[j] += inv_batch * g.data()[j];
        }
        for (size_t m = 0; m < clean.layer_outputs.size(); ++m) {
          const Matrix& g = tape.grad(clean.layer_outputs[m]);
          if (g.empty()) continue;
          for (size_t r = 0; r < g.rows(); ++r) {
            double acc = 0.0;
            for (size_t c = 0; c < g.cols(); ++c) acc += std::abs(g.at(r, c));
            cache_accum[m][r] += acc / static_cast<double>(g.cols());
          }
        }
      }

      ++step;
      adam_step(manifest, grads, adam, lr_at(step, total_steps, cfg.peak_lr, cfg.warmup_ratio));

      // Refresh the gradient cache from this step's clean passes.
      for (size_t m = 0; m < cache.per_layer.size(); ++m)
        for (size_t r = 0; r < cache.per_layer[m].size(); ++r)
          cache.per_layer[m][r] = cache_accum[m][r] * inv_batch;
      cache.ready = true;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.step = step;
    rec.l_ori = sum_ori / static_cast<double>(n);
    rec.l_aug = sum_aug / static_cast<double>(n);
    rec.l_js = sum_js / static_cast<double>(n);
    rec.train_acc = static_cast<double>(train_correct) / static_cast<double>(n);
    rec.dev_metric = evaluate(model, dev_split);
    if (ood_split) rec.ood_metric = evaluate(model, *ood_split);
    if (metrics_out.is_open()) metrics_out << epoch_to_json(rec).dump() << "\n";
    report.epochs.push_back(rec);
  }

  report.total_steps = step;
  report.final_dev = report.epochs.back().dev_metric;
  report.final_ood = report.epochs.back().ood_metric;
  if (metrics_out.is_open()) {
    nlohmann::json fin{{"final", true}, {"steps", report.total_steps}, {"dev", report.final_dev}};
    if (report.final_ood) fin["ood"] = *report.final_ood;
    metrics_out << fin.dump() << "\n";
  }
  return report;
}

std::vector<size_t> predict(const Model& model, const std::vector<Example>& split) {
  std::vector<size_t> out;
  out.reserve(split.size());
  for (const Example& ex : split) {
    Tape tape;
    ParamVars pv = bind_params(tape, model.params);
    EncodeResult enc = encode(tape, model.config, pv, ex.ids, ex.mask);
    out.push_back(argmax_lower(tape.value(classify_head(tape, pv, enc.hidden))));
  }
  return out;
}

double evaluate(const Model& model, const std::vector<Example>& split) {
  if (split.empty()) return 0.0;
  const auto preds = predict(model, split);
  size_t correct = 0;
  for (size_t i = 0; i < split.size(); ++i)
    if (preds[i] == split[i].label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

double matthews_corr(size_t tp, size_t tn, size_t fp, size_t fn) {
  const double a = static_cast<double>(tp + fp);
  const double b = static_cast<double>(tp + fn);
  const double c = static_cast<double>(tn + fp);
  const double d = static_cast<double>(tn + fn);
  if (a == 0.0 || b == 0.0 || c == 0.0 || d == 0.0) return 0.0;
  const double num =
      static_cast<double>(tp) * static_cast<double>(tn) -
      static_cast<double>(fp) * static_cast<double>(fn);
  return num / std::sqrt(a * b * c * d);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
  const size_t n = xs.size();
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_corr(const std::vector<double>& xs, const std::vector<double>& ys,
                     bool* degenerate) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw ShapeError("spearman_corr: need two equal-length series");
  if (degenerate) *degenerate = false;
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return sxy / std::sqrt(sxx * syy);
}

GradCheckReport objective_grad_check(const TrainConfig& cfg, Model& model,
                                     const std::vector<Example>& examples,
                                     const LimeTable* lime, double eps, size_t min_coords) {
  cfg.validate();
  if (examples.empty()) throw DataError("objective_grad_check: no examples");

  // frozen_p_avg[e] pins the consistency target of example e; empty on the
  // first pass, which computes it from the base parameters.
  std::vector<std::vector<double>> frozen_p_avg;
  const auto build = [&](Tape& tape, bool record_targets) {
    const ParamVars pv = bind_params(tape, model.params);
    std::vector<Var> scalars;
    std::vector<double> weights;
    const double inv_n = 1.0 / static_cast<double>(examples.size());
    for (size_t e = 0; e < examples.size(); ++e) {
      const Example& ex = examples[e];
      const EncodeResult clean = encode(tape, model.config, pv, ex.ids, ex.mask);
      const Var logits = classify_head(tape, pv, clean.hidden);
      scalars.push_back(tape.cross_entropy_logits(logits, ex.label));
      weights.push_back(inv_n);

      std::vector<Var> aug_logits;
      std::vector<std::vector<double>> p_augs;
      if (cfg.cut.enabled) {
        StrategyResources res;
        res.lime = lime;
        for (size_t a = 1; a <= cfg.cut.num_aug; ++a) {
          Rng aug_rng = Rng::derive(cfg.seed, {0xA06, 0, static_cast<uint64_t>(ex.id), a});
          const AugmentedForward af =
              augmented_forward(tape, model.config, pv, ex, cfg.cut, res, aug_rng);
          scalars.push_back(tape.cross_entropy_logits(af.logits, ex.label));
          weights.push_back(cfg.gamma * inv_n);
          aug_logits.push_back(af.logits);
          p_augs.push_back(softmax(std::vector<double>(
              tape.value(af.logits).data(),
              tape.value(af.logits).data() + tape.value(af.logits).size())));
        }
      }
      if (!aug_logits.empty()) {
        std::vector<double> p_avg;
        if (record_targets) {
          const Matrix& zv = tape.value(logits);
          p_avg = softmax(std::vector<double>(zv.data(), zv.data() + zv.size()));
          for (const auto& p : p_augs)
            for (size_t c = 0; c < p_avg.size(); ++c) p_avg[c] += p[c];
          for (double& v : p_avg) v /= static_cast<double>(p_augs.size() + 1);
          frozen_p_avg.push_back(p_avg);
        } else {
          p_avg = frozen_p_avg.at(e);
        }
        for (const Var z : aug_logits) {
          scalars.push_back(tape.kl_to_const(z, p_avg));
          weights.push_back(cfg.eta * inv_n);
        }
      }
    }
    return tape.weighted_sum(scalars, weights);
  };

  auto manifest = model.params.tensors();
  std::vector<Matrix*> params;
  for (auto& [name, ptr] : manifest) params.push_back(ptr);

  GradCheckReport report;
  {
    Tape tape;
    const Var loss = build(tape, true);
    report.loss = tape.scalar(loss);
    if (!std::isfinite(report.loss)) throw NumericError("objective_grad_check: non-finite loss");
  }
  const auto loss_value = [&] {
    Tape tape;
    return tape.scalar(build(tape, false));
  };
  const auto loss_gradients = [&] {
    Tape tape;
    tape.backward(build(tape, false));
    std::vector<Matrix> out;
    for (Matrix* ptr : params) out.push_back(tape.grad_of_param(ptr));
    return out;
  };
  report.max_rel_err =
      grad_check(loss_value, loss_gradients, params, eps, cfg.seed ^ 0x6C, min_coords);
  return report;
}

void inspect_attention(const Model& model, const Example& ex, const std::string& out_path) {
  Tape tape;
  ParamVars pv = bind_params(tape, model.params);
  EncodeResult enc = encode(tape, model.config, pv, ex.ids, ex.mask);
  const Tensor3& att = enc.layers.back().attention;

  std::ofstream out(out_path);
  if (!out) throw DataError("inspect_attention: cannot open " + out_path);
  out << "token,position,weight\n";
  const double inv_heads = 1.0 / static_cast<double>(att.d0());
  out.precision(17);
  for (size_t i = 0; i < ex.ids.size(); ++i) {
    if (!ex.mask[i]) continue;
    double w = 0.0;
    for (size_t h = 0; h < att.d0(); ++h) w += att.at(h, 0, i);
    w *= inv_heads;
    out << model.vocab.token(ex.ids[i]) << ',' << i << ',' << w << "\n";
  }
}

}  // namespace hcut
