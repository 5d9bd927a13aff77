#ifndef FCT_CONFIG_HPP
#define FCT_CONFIG_HPP

// JSON forms of the configuration structs. Parsing is strict: unknown keys
// and wrongly typed values raise ConfigError naming the offending key.

#include <stdexcept>
#include <string>

#include "json.hpp"

#include "fct/model.hpp"
#include "fct/train.hpp"

namespace fct {

class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

nlohmann::json to_json(const WideFocusConfig& c);
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const AugmentConfig& c);
nlohmann::json to_json(const TrainConfig& c);

WideFocusConfig wide_focus_config_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j);
AugmentConfig augment_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// {"model": {...}, "train": {...}}; either section may be omitted.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

}  // namespace fct

#endif  // FCT_CONFIG_HPP
