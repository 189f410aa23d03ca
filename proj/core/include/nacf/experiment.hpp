#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nacf/corpus.hpp"
#include "nacf/decoding.hpp"
#include "nacf/training.hpp"

namespace nacf {

/// Latency grid: one non-autoregressive row per (algorithm, B, T) plus the
/// autoregressive reference row used for the speedup column.
struct BenchConfig {
  std::vector<Algorithm> algorithms = {Algorithm::MaskPredict};
  std::vector<std::size_t> B = {1, 4, 6};
  /// Mask-Predict iterations, or fixed_T for Easy-First / Left-to-Right.
  std::vector<std::size_t> T = {1, 3, 5};
  bool use_template = true;
  bool use_rescoring = false;
  /// Beam of the autoregressive reference decoder.
  std::size_t ar_beam = 5;
  /// Untimed decodes before measurement starts.
  std::size_t warmup = 3;
  /// Videos of the split to time; 0 means all of them.
  std::size_t max_videos = 0;

  void validate() const;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path corpus_manifest;
  std::filesystem::path output_dir = "runs";
  /// Architecture knobs; corpus-derived fields are filled at train time.
  ModelConfig model;
  TrainingConfig training;
  Variant variant = Variant::Nacf;
  DecodeConfig decode;
  Split split = Split::Test;
  std::optional<std::filesystem::path> teacher;
  BenchConfig bench;
  /// Worker threads for training; 0 defers to NACF_THREADS (default 1).
  std::size_t threads = 0;

  /// Throws InvalidConfig.
  void validate() const;
};

/// Parses a JSON experiment document, applying `overrides` of the form
/// "a.b=value" first. Values that parse as JSON are used as such, anything
/// else as a string. Unknown keys at any level are InvalidConfig errors.
ExperimentConfig parse_experiment_config(std::string_view json_text,
                                         std::span<const std::string> overrides = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        std::span<const std::string> overrides = {});
std::string to_json(const ExperimentConfig& config);

/// `requested` when positive, else NACF_THREADS, else 1. NACF_THREADS also
/// caps an explicit request.
std::size_t resolve_threads(std::size_t requested);

}  // namespace nacf
