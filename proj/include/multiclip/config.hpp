#pragma once

// JSON (de)serialization of every tunable setting. Readers start from the
// defaults already in the target, accept any subset of keys, and throw Config
// on unknown keys or wrong types.

#include "multiclip/augment.hpp"
#include "multiclip/dual_encoder.hpp"
#include "multiclip/pretrain.hpp"
#include "multiclip/renderer.hpp"
#include "multiclip/scene_encoder.hpp"
#include "multiclip/sqa_model.hpp"
#include "multiclip/synthetic.hpp"
#include "multiclip/vqa_model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace multiclip {

struct ExperimentConfig {
  std::uint64_t seed = 0;
  int train_scenes = 8;
  int val_scenes = 8;
  GeneratorConfig generator;
  RenderConfig render;
  EncoderConfig encoder;
  SceneEncoderConfig scene_encoder;
  PretrainConfig pretrain;
  VqaConfig vqa;
  SqaConfig sqa;

  void validate() const;
};

nlohmann::json to_json(const GeneratorConfig& c);
nlohmann::json to_json(const RenderConfig& c);
nlohmann::json to_json(const EncoderConfig& c);
nlohmann::json to_json(const SceneEncoderConfig& c);
nlohmann::json to_json(const AugmentConfig& c);
nlohmann::json to_json(const PretrainConfig& c);
nlohmann::json to_json(const VqaConfig& c);
nlohmann::json to_json(const SqaConfig& c);
nlohmann::json to_json(const ExperimentConfig& c);

void from_json(const nlohmann::json& j, GeneratorConfig& c);
void from_json(const nlohmann::json& j, RenderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void from_json(const nlohmann::json& j, SceneEncoderConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);
void from_json(const nlohmann::json& j, VqaConfig& c);
void from_json(const nlohmann::json& j, SqaConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace multiclip
