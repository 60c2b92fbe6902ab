#pragma once

#include <optional>

#include "hcut/cut.hpp"
#include "hcut/objectives.hpp"

namespace hcut {

struct TrainConfig {
  double peak_lr = 6e-4;
  double warmup_ratio = 0.06;
  size_t epochs = 5;
  size_t batch_size = 32;
  uint64_t seed = 1;
  CutConfig cut;
  double gamma = 1.0;
  double eta = 1.0;
  double init_std = 0.1;
  // LIME preprocessing, used only when cut.strategy == Lime.
  size_t lime_num_perturb = 200;
  size_t lime_surrogate_epochs = 20;

  void validate() const;
};

struct Model {
  ModelConfig config;
  EncoderParams params;
  Vocab vocab;
};

// Linear ramp from 0 to peak over ceil(warmup_ratio·total) steps, then
// linear decay to 0 at total_steps.
double lr_at(size_t step, size_t total_steps, double peak_lr, double warmup_ratio);

struct AdamState {
  std::vector<Matrix> m, v;
  int64_t step_count = 0;
};

AdamState adam_init(const std::vector<std::pair<std::string, Matrix*>>& manifest);

// Standard bias-corrected Adam without weight decay. Throws NumericError on
// a non-finite gradient before touching any parameter.
void adam_step(std::vector<std::pair<std::string, Matrix*>>& params,
               const std::vector<Matrix>& grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

struct EpochRecord {
  size_t epoch = 0;
  size_t step = 0;  // global optimizer step count at epoch end
  double l_ori = 0.0, l_aug = 0.0, l_js = 0.0;
  double train_acc = 0.0;
  double dev_metric = 0.0;
  std::optional<double> ood_metric;
};

struct MetricsReport {
  std::vector<EpochRecord> epochs;
  size_t total_steps = 0;
  double final_dev = 0.0;
  std::optional<double> final_ood;

  std::string to_jsonl() const;  // byte-deterministic for a fixed run
};

// Full fine-tuning loop: per example one clean forward, N augmented
// forwards, the combined objective, one backward; one Adam step per batch.
// The gradient cache for the Gradient strategy is refreshed after every
// step. Cuts are disabled for the per-epoch evaluations. When metrics_path
// is nonempty the JSON-lines stream is appended there as the run progresses.
MetricsReport train(const TrainConfig& cfg, Model& model, const std::vector<Example>& train_split,
                    const std::vector<Example>& dev_split, const std::vector<Example>* ood_split,
                    const LimeTable* lime, const std::string& metrics_path = "");

// Fraction of argmax-correct predictions; ties resolve to the lower class.
double evaluate(const Model& model, const std::vector<Example>& split);
std::vector<size_t> predict(const Model& model, const std::vector<Example>& split);

double matthews_corr(size_t tp, size_t tn, size_t fp, size_t fn);
double spearman_corr(const std::vector<double>& xs, const std::vector<double>& ys,
                     bool* degenerate = nullptr);

void save_checkpoint(const Model& model, const TrainConfig& cfg, const std::string& path);
struct LoadedCheckpoint {
  Model model;
  TrainConfig train;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

// CSV of the attention the sequence-start token pays to each valid position
// at the last layer, averaged over heads: columns token, position, weight.
void inspect_attention(const Model& model, const Example& ex, const std::string& out_path);

struct GradCheckReport {
  double max_rel_err = 0.0;
  double loss = 0.0;
};

// grad_check over the full training objective (clean CE + N augmented CEs +
// consistency terms) at the model's current parameters. Augmentation streams
// are re-derived from the config seed on every evaluation so the spans stay
// fixed while parameters are perturbed, and the consistency target p_avg is
// frozen at the base parameters, matching its stop-gradient role in
// training.
GradCheckReport objective_grad_check(const TrainConfig& cfg, Model& model,
                                     const std::vector<Example>& examples,
                                     const LimeTable* lime, double eps,
                                     size_t min_coords = 200);

}  // namespace hcut
