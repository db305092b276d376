#pragma once

// JSON model files exchanged between the step-wise CLI commands.

#include <cstddef>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "fuda/nn.hpp"

namespace fuda {

struct ModelFile {
  std::string client_id;  // "global" for aggregated models
  std::size_t sample_count = 0;
  ModelParams params;
};

/// {"format": "fuda-model-v1", "client_id", "sample_count", "architecture", "layers": [{"weight", "bias"}]}.
/// Doubles are written at round-trip precision.
nlohmann::json model_to_json(const ModelFile& model);
/// Throws ParseError on malformed input and DimensionError on inconsistent shapes.
ModelFile model_from_json(const nlohmann::json& j);

void save_model(const ModelFile& model, const std::filesystem::path& path);
ModelFile load_model(const std::filesystem::path& path);

}  // namespace fuda
