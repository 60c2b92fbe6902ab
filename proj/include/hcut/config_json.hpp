#pragma once

#include "hcut/data.hpp"
#include "hcut/trainkit.hpp"
#include "json.hpp"

namespace hcut {

// JSON mirrors of the config structs. Parsing accepts partial objects and
// fills the remaining fields from the struct defaults, so a config file or
// checkpoint header only has to state what it overrides.

nlohmann::json to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

nlohmann::json to_json(const CutConfig& c);
CutConfig cut_config_from_json(const nlohmann::json& j, CutConfig base = {});

nlohmann::json to_json(const TrainConfig& t);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

nlohmann::json to_json(const SpuriousSpec& s);
SpuriousSpec spurious_spec_from_json(const nlohmann::json& j, SpuriousSpec base = {});

nlohmann::json load_json_file(const std::string& path);

}  // namespace hcut
