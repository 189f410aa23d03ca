#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "nacf/model.hpp"

namespace nacf {

/// Contents of the `<checkpoint>.json` sidecar.
struct CheckpointMeta {
  ModelConfig config;
  std::uint64_t vocab_hash = 0;
  /// Number of completed training epochs.
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  std::string variant;
};

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

void save_model(const std::filesystem::path& checkpoint, const Model<float>& model,
                const CheckpointMeta& meta);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& checkpoint);

/// Rebuilds the model described by the sidecar and loads its weights.
/// A mismatching `expected_vocab_hash` raises InvalidConfig.
Model<float> load_model(const std::filesystem::path& checkpoint,
                        std::optional<std::uint64_t> expected_vocab_hash = std::nullopt);

}  // namespace nacf
