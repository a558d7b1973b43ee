#ifndef SLABFILL_RUN_CONFIG_HPP
#define SLABFILL_RUN_CONFIG_HPP

#include <string>

#include <json.hpp>

#include "slabfill/adam.hpp"
#include "slabfill/errors.hpp"
#include "slabfill/model_io.hpp"
#include "slabfill/synth.hpp"
#include "slabfill/unet.hpp"

namespace slabfill {

// JSON run configuration with sections generator / network / training /
// inference. Unknown keys are rejected anywhere; every field has a default.
struct RunConfig {
  GeneratorConfig generator;
  NetworkConfig network;
  TrainConfig training;
  double inference_spacing_mm = 1.0;
};

namespace config_json {

using nlohmann::json;

inline json generator_to_json(const GeneratorConfig& c) {
  return {{"rotation_max_deg", c.rotation_max_deg},
          {"scale_range", c.scale_range},
          {"shear_max", c.shear_max},
          {"translation_max_mm", c.translation_max_mm},
          {"nonlin_cp_spacing_inplane_mm", c.nonlin_cp_spacing_inplane_mm},
          {"nonlin_cp_spacing_ap_mm", c.nonlin_cp_spacing_ap_mm},
          {"nonlin_std_mm", c.nonlin_std_mm},
          {"gmm_mean_range", c.gmm_mean_range},
          {"gmm_std_range", c.gmm_std_range},
          {"gamma_log_range", c.gamma_log_range},
          {"bias_log_amplitude", c.bias_log_amplitude},
          {"bias_cp_spacing_inplane_mm", c.bias_cp_spacing_inplane_mm},
          {"bias_cp_spacing_ap_mm", c.bias_cp_spacing_ap_mm},
          {"thickness_min_mm", c.thickness_min_mm},
          {"thickness_max_mm", c.thickness_max_mm},
          {"batch_size", c.batch_size},
          {"slice_size", c.slice_size},
          {"seed", c.seed}};
}

inline GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "rotation_max_deg") c.rotation_max_deg = value.get<double>();
    else if (key == "scale_range") c.scale_range = value.get<std::array<double, 2>>();
    else if (key == "shear_max") c.shear_max = value.get<double>();
    else if (key == "translation_max_mm") c.translation_max_mm = value.get<double>();
    else if (key == "nonlin_cp_spacing_inplane_mm") c.nonlin_cp_spacing_inplane_mm = value.get<double>();
    else if (key == "nonlin_cp_spacing_ap_mm") c.nonlin_cp_spacing_ap_mm = value.get<double>();
    else if (key == "nonlin_std_mm") c.nonlin_std_mm = value.get<double>();
    else if (key == "gmm_mean_range") c.gmm_mean_range = value.get<std::array<double, 2>>();
    else if (key == "gmm_std_range") c.gmm_std_range = value.get<std::array<double, 2>>();
    else if (key == "gamma_log_range") c.gamma_log_range = value.get<std::array<double, 2>>();
    else if (key == "bias_log_amplitude") c.bias_log_amplitude = value.get<double>();
    else if (key == "bias_cp_spacing_inplane_mm") c.bias_cp_spacing_inplane_mm = value.get<double>();
    else if (key == "bias_cp_spacing_ap_mm") c.bias_cp_spacing_ap_mm = value.get<double>();
    else if (key == "thickness_min_mm") c.thickness_min_mm = value.get<int>();
    else if (key == "thickness_max_mm") c.thickness_max_mm = value.get<int>();
    else if (key == "batch_size") c.batch_size = value.get<int>();
    else if (key == "slice_size") c.slice_size = value.get<int>();
    else if (key == "seed") c.seed = value.get<uint64_t>();
    else throw ConfigError("unknown generator config key: " + key);
  }
  c.validate();
  return c;
}

inline json training_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"batch_size", c.batch_size},
          {"grad_loss_weight", c.grad_loss_weight},
          {"max_steps", c.max_steps},
          {"val_interval", c.val_interval},
          {"val_size", c.val_size},
          {"patience", c.patience},
          {"seed", c.seed}};
}

inline TrainConfig training_from_json(const json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "adam_beta1") c.adam_beta1 = value.get<double>();
    else if (key == "adam_beta2") c.adam_beta2 = value.get<double>();
    else if (key == "adam_eps") c.adam_eps = value.get<double>();
    else if (key == "batch_size") c.batch_size = value.get<int>();
    else if (key == "grad_loss_weight") c.grad_loss_weight = value.get<double>();
    else if (key == "max_steps") c.max_steps = value.get<int64_t>();
    else if (key == "val_interval") c.val_interval = value.get<int64_t>();
    else if (key == "val_size") c.val_size = value.get<int>();
    else if (key == "patience") c.patience = value.get<int>();
    else if (key == "seed") c.seed = value.get<uint64_t>();
    else throw ConfigError("unknown training config key: " + key);
  }
  c.validate();
  return c;
}

} // namespace config_json

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  return {{"generator", config_json::generator_to_json(c.generator)},
          {"network", model_io::config_to_json(c.network)},
          {"training", config_json::training_to_json(c.training)},
          {"inference", {{"spacing_mm", c.inference_spacing_mm}}}};
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "generator") {
      c.generator = config_json::generator_from_json(value);
    } else if (key == "network") {
      c.network = model_io::config_from_json(value);
    } else if (key == "training") {
      c.training = config_json::training_from_json(value);
    } else if (key == "inference") {
      for (const auto& [k2, v2] : value.items()) {
        if (k2 == "spacing_mm") c.inference_spacing_mm = v2.get<double>();
        else throw ConfigError("unknown inference config key: " + k2);
      }
      if (!(c.inference_spacing_mm > 0)) throw ConfigError("spacing_mm must be > 0");
    } else {
      throw ConfigError("unknown config section: " + key);
    }
  }
  return c;
}

inline RunConfig parse_run_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_run_config(j);
}

} // namespace slabfill

#endif
