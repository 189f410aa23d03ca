#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nacf/corpus.hpp"

namespace nacf {

/// Procedural scene grammar and feature generator settings.
struct SynthSpec {
  std::size_t train_videos = 500;
  std::size_t val_videos = 50;
  std::size_t test_videos = 100;

  /// Concepts drawn from the built-in pools (subject, verb, object, place,
  /// attribute); each count must not exceed its pool size.
  std::size_t subjects = 10;
  std::size_t verbs = 10;
  std::size_t objects = 12;
  std::size_t places = 6;
  std::size_t attributes = 5;
  double place_prob = 0.5;
  double attribute_prob = 0.3;
  /// Chance of rendering a concept with one of its alternative words.
  double synonym_prob = 0.15;
  /// Number of sentence patterns in use (1..3).
  std::size_t template_count = 3;

  std::size_t captions_min = 3;
  std::size_t captions_max = 10;

  std::size_t frames = 8;
  std::size_t appearance_dim = 48;
  std::size_t motion_dim = 32;
  double noise_sigma = 0.5;
  double frame_jitter = 0.1;
  /// 0 disables category tags.
  std::size_t category_count = 3;

  /// Throws InvalidSpec.
  void validate() const;
};

SynthSpec parse_synth_spec(std::string_view json_text);
SynthSpec load_synth_spec(const std::filesystem::path& path);
std::string to_json(const SynthSpec& spec);

/// Concept indices of one generated video.
struct Scene {
  std::size_t subject = 0;
  std::size_t verb = 0;
  std::size_t object = 0;
  std::optional<std::size_t> place;
  std::optional<std::size_t> attribute;

  auto operator<=>(const Scene&) const = default;
};

struct SynthResult {
  Corpus corpus;
  /// Aligned with corpus.videos.
  std::vector<Scene> scenes;
  /// Surface forms of each noun/verb concept of each scene (subject, verb,
  /// object, optional place), aligned with corpus.videos.
  std::vector<std::vector<std::vector<std::string>>> visual_concepts;
};

/// Deterministic in (spec, seed). Scenes are pairwise distinct and their
/// noise-free feature sums are verified to differ.
SynthResult synth_generate(const SynthSpec& spec, std::uint64_t seed);

/// Share of scene concepts with at least one surface form in `words`.
double concept_recall(const std::vector<std::vector<std::string>>& concepts,
                      const Sentence& words);

}  // namespace nacf
