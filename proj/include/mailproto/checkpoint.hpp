#pragma once

// Checkpoint directory layout:
//   config.json      model configuration (encoder kind, sizes, vocabulary salt, fusion weights)
//   weights.json     every parameter as {rows, cols, data}, written with round-trip precision
//   prototypes.json  per-granularity vectors, class assignments, epsilon and projection provenance

#include <filesystem>
#include <memory>

#include "json.hpp"
#include "mailproto/model.hpp"

namespace mailproto {

using json = nlohmann::json;

json to_json(const EncoderConfig& c);
json to_json(const ModelConfig& c);
// Missing keys keep their defaults; unknown enum values throw.
EncoderConfig encoder_config_from_json(const json& j, EncoderConfig base = {});
ModelConfig model_config_from_json(const json& j, ModelConfig base = {});

json prototypes_to_json(const Model& model);
json projection_to_json(const ProjectionRecord& r);
ProjectionRecord projection_from_json(const json& j);

void save_checkpoint(const Model& model, const std::filesystem::path& dir);
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& dir);

}  // namespace mailproto
