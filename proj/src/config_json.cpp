#include "hcut/config_json.hpp"

#include <fstream>

namespace hcut {

namespace {

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad JSON in " + path + ": " + e.what());
  }
}

nlohmann::json to_json(const ModelConfig& m) {
  return {{"num_layers", m.num_layers}, {"hidden_dim", m.hidden_dim},
          {"num_heads", m.num_heads},   {"ffn_dim", m.ffn_dim},
          {"vocab_size", m.vocab_size}, {"max_len", m.max_len},
          {"num_classes", m.num_classes}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base) {
  get_if(j, "num_layers", base.num_layers);
  get_if(j, "hidden_dim", base.hidden_dim);
  get_if(j, "num_heads", base.num_heads);
  get_if(j, "ffn_dim", base.ffn_dim);
  get_if(j, "vocab_size", base.vocab_size);
  get_if(j, "max_len", base.max_len);
  get_if(j, "num_classes", base.num_classes);
  return base;
}

nlohmann::json to_json(const CutConfig& c) {
  return {{"enabled", c.enabled},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"strategy", strategy_name(c.strategy)},
          {"reverse", c.reverse},
          {"num_aug", c.num_aug},
          {"dropblock", c.dropblock},
          {"dropblock_dim_fraction", c.dropblock_dim_fraction}};
}

CutConfig cut_config_from_json(const nlohmann::json& j, CutConfig base) {
  get_if(j, "enabled", base.enabled);
  get_if(j, "alpha", base.alpha);
  get_if(j, "beta", base.beta);
  if (j.contains("strategy")) base.strategy = strategy_from_name(j.at("strategy").get<std::string>());
  get_if(j, "reverse", base.reverse);
  get_if(j, "num_aug", base.num_aug);
  get_if(j, "dropblock", base.dropblock);
  get_if(j, "dropblock_dim_fraction", base.dropblock_dim_fraction);
  return base;
}

nlohmann::json to_json(const TrainConfig& t) {
  return {{"peak_lr", t.peak_lr},
          {"warmup_ratio", t.warmup_ratio},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"seed", t.seed},
          {"cut", to_json(t.cut)},
          {"gamma", t.gamma},
          {"eta", t.eta},
          {"init_std", t.init_std},
          {"lime_num_perturb", t.lime_num_perturb},
          {"lime_surrogate_epochs", t.lime_surrogate_epochs}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
  get_if(j, "peak_lr", base.peak_lr);
  get_if(j, "warmup_ratio", base.warmup_ratio);
  get_if(j, "epochs", base.epochs);
  get_if(j, "batch_size", base.batch_size);
  get_if(j, "seed", base.seed);
  if (j.contains("cut")) base.cut = cut_config_from_json(j.at("cut"), base.cut);
  get_if(j, "gamma", base.gamma);
  get_if(j, "eta", base.eta);
  get_if(j, "init_std", base.init_std);
  get_if(j, "lime_num_perturb", base.lime_num_perturb);
  get_if(j, "lime_surrogate_epochs", base.lime_surrogate_epochs);
  return base;
}

nlohmann::json to_json(const SpuriousSpec& s) {
  return {{"num_classes", s.num_classes},
          {"signal_vocab_per_class", s.signal_vocab_per_class},
          {"neutral_vocab", s.neutral_vocab},
          {"spurious_per_class", s.spurious_per_class},
          {"min_content_len", s.min_content_len},
          {"max_content_len", s.max_content_len},
          {"rho_train", s.rho_train},
          {"rho_ood", s.rho_ood},
          {"signal_count", s.signal_count},
          {"train_size", s.train_size},
          {"dev_size", s.dev_size},
          {"ood_size", s.ood_size},
          {"seed", s.seed}};
}

SpuriousSpec spurious_spec_from_json(const nlohmann::json& j, SpuriousSpec base) {
  get_if(j, "num_classes", base.num_classes);
  get_if(j, "signal_vocab_per_class", base.signal_vocab_per_class);
  get_if(j, "neutral_vocab", base.neutral_vocab);
  get_if(j, "spurious_per_class", base.spurious_per_class);
  get_if(j, "min_content_len", base.min_content_len);
  get_if(j, "max_content_len", base.max_content_len);
  get_if(j, "rho_train", base.rho_train);
  get_if(j, "rho_ood", base.rho_ood);
  get_if(j, "signal_count", base.signal_count);
  get_if(j, "train_size", base.train_size);
  get_if(j, "dev_size", base.dev_size);
  get_if(j, "ood_size", base.ood_size);
  get_if(j, "seed", base.seed);
  return base;
}

}  // namespace hcut
