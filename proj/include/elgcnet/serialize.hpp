#pragma once

// JSON (de)serialization of ModelConfig with strict unknown-key rejection, so
// config files and checkpoints fail loudly instead of silently ignoring a
// misspelled key.

#include <string>
#include <vector>

#include <json.hpp>

#include "elgcnet/network.hpp"

namespace elgc {

using json = nlohmann::json;

inline void require_known_keys(const json& j,
                               const std::vector<std::string>& allowed,
                               const std::string& where) {
  if (!j.is_object()) throw UsageError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed) ok = ok || k == it.key();
    if (!ok) throw UsageError(where + ": unknown key '" + it.key() + "'");
  }
}

inline json model_config_to_json(const ModelConfig& c) {
  json j;
  j["stage_depths"] = c.stage_depths;
  j["stage_channels"] = c.stage_channels;
  j["patch_strides"] = c.patch_strides;
  j["mlp_ratio"] = c.mlp_ratio;
  j["fusion_width"] = c.fusion_width;
  j["decoder_width"] = c.decoder_width;
  j["decoder"] = to_string(c.decoder);
  j["attention"] = to_string(c.attention);
  j["pooling"] = to_string(c.pooling);
  j["use_local"] = c.use_local;
  j["use_z"] = c.use_z;
  j["use_att"] = c.use_att;
  j["input_h"] = c.input_h;
  j["input_w"] = c.input_w;
  j["input_c"] = c.input_c;
  j["num_classes"] = c.num_classes;
  return j;
}

// Starts from `base` (usually defaults) and overlays whatever keys are
// present, rejecting unknown ones.
inline ModelConfig model_config_from_json(const json& j,
                                          ModelConfig base = ModelConfig{}) {
  require_known_keys(
      j,
      {"stage_depths", "stage_channels", "patch_strides", "mlp_ratio",
       "fusion_width", "decoder_width", "decoder", "attention", "pooling",
       "use_local", "use_z", "use_att", "input_h", "input_w", "input_c",
       "num_classes"},
      "model config");
  try {
    if (j.contains("stage_depths"))
      base.stage_depths = j["stage_depths"].get<std::vector<int>>();
    if (j.contains("stage_channels"))
      base.stage_channels = j["stage_channels"].get<std::vector<int>>();
    if (j.contains("patch_strides"))
      base.patch_strides = j["patch_strides"].get<std::vector<int>>();
    if (j.contains("mlp_ratio")) base.mlp_ratio = j["mlp_ratio"].get<int>();
    if (j.contains("fusion_width"))
      base.fusion_width = j["fusion_width"].get<int>();
    if (j.contains("decoder_width"))
      base.decoder_width = j["decoder_width"].get<int>();
    if (j.contains("decoder"))
      base.decoder = parse_decoder_kind(j["decoder"].get<std::string>());
    if (j.contains("attention"))
      base.attention = parse_attention_kind(j["attention"].get<std::string>());
    if (j.contains("pooling"))
      base.pooling = parse_pooling_mode(j["pooling"].get<std::string>());
    if (j.contains("use_local")) base.use_local = j["use_local"].get<bool>();
    if (j.contains("use_z")) base.use_z = j["use_z"].get<bool>();
    if (j.contains("use_att")) base.use_att = j["use_att"].get<bool>();
    if (j.contains("input_h")) base.input_h = j["input_h"].get<int>();
    if (j.contains("input_w")) base.input_w = j["input_w"].get<int>();
    if (j.contains("input_c")) base.input_c = j["input_c"].get<int>();
    if (j.contains("num_classes"))
      base.num_classes = j["num_classes"].get<int>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("model config: ") + e.what());
  }
  return base;
}

inline bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return model_config_to_json(a) == model_config_to_json(b);
}

}  // namespace elgc
