#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nacf/corpus.hpp"
#include "nacf/model.hpp"

namespace nacf {

enum class Variant { Nacf, NaB, ArB, ArBVis };
std::string_view to_string(Variant v) noexcept;
/// Accepts "nacf", "na-b", "ar-b", "ar-b-vis".
Variant parse_variant(std::string_view name);
bool is_causal(Variant v) noexcept;

struct TrainingConfig {
  double beta_low = 0.0;
  double beta_high = 1.0;
  double lambda_vis = 0.8;
  std::size_t batch_size = 64;
  double lr_init = 5e-4;
  double lr_decay = 0.9;
  double lr_min = 5e-5;
  double weight_decay = 5e-4;
  std::size_t epochs = 50;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Parts of speech that count as visual words.
  std::vector<Pos> visual_pos = {Pos::Noun, Pos::Verb};
  /// Validation videos decoded after each epoch for BLEU@4; 0 skips it.
  std::size_t val_videos = 50;

  void validate() const;
};

/// max(lr_init * lr_decay^epoch, lr_min), epochs counted from 0.
double learning_rate(const TrainingConfig& config, std::size_t epoch);

struct MaskedExample {
  std::vector<int> target;
  /// Target with masked positions replaced by [mask].
  std::vector<int> input;
  std::vector<std::uint8_t> masked;
  std::size_t mask_count = 0;
};

/// Masking ratio ~ U[beta_low, beta_high]; clamp(floor(ratio N) + 1, 1, N)
/// positions chosen uniformly without replacement.
MaskedExample sample_mask(std::span<const int> target, double beta_low, double beta_high, Rng& rng);

/// Keeps tokens whose part of speech is in `visual_pos` and that are not on
/// the lexicon stoplist; every other position becomes [mask].
std::vector<int> build_visual_target(std::span<const int> target, const Vocabulary& vocab,
                                     const PosLexicon& lexicon, std::span<const Pos> visual_pos);

/// KL(target || predicted) with 0 log 0 = 0. Both must sum to 1 within 1e-4.
double kl_divergence(std::span<const double> target, std::span<const double> predicted);

/// KL(L* || softmax(length_logits)).
template <class T>
Var<T> loss_len(const Var<T>& length_logits, std::span<const double> target);

/// Mean negative log-likelihood of the masked targets; `logits` rows
/// [row_offset, row_offset + N) belong to the example.
template <class T>
Var<T> loss_mlm(const Var<T>& logits, std::size_t row_offset, const MaskedExample& example);

/// Mean negative log-likelihood of the visual target over all positions.
template <class T>
Var<T> loss_vis(const Var<T>& logits, std::size_t row_offset, std::span<const int> visual_target);

/// Multipliers for one example's contribution to a batch objective.
struct ObjectiveWeights {
  double len = 1.0;
  /// Applied to the summed token NLL of the main sequence.
  double mlm = 1.0;
  /// Applied to the summed visual NLL; 0 skips the visual pass.
  double vis = 0.0;
};

template <class T>
struct ObjectiveParts {
  Var<T> total;
  double len = 0.0;
  double mlm_sum = 0.0;
  double vis_sum = 0.0;
};

/// weights.len * L_len + weights.mlm * sum NLL(Y_mask) + weights.vis * sum NLL(Y_vis).
/// The masked and all-[visual] inputs share one decoder call.
template <class T>
ObjectiveParts<T> nacf_objective(Tape<T>& tape, const Model<T>& model, const FeatureSet& features,
                                 std::span<const double> length_target,
                                 const MaskedExample& example, std::span<const int> visual_target,
                                 const ObjectiveWeights& weights, bool train, Rng* rng);

/// Teacher-forced next-token NLL over [begin] + Y -> Y + [end], plus the
/// optional visual term on the causal decoder.
template <class T>
ObjectiveParts<T> ar_objective(Tape<T>& tape, const Model<T>& model, const FeatureSet& features,
                               std::span<const int> target, std::span<const int> visual_target,
                               const ObjectiveWeights& weights, bool train, Rng* rng);

struct EpochLog {
  std::size_t epoch = 0;
  double loss_len = 0.0;
  double loss_mlm = 0.0;
  double loss_vis = 0.0;
  double lr = 0.0;
  double val_bleu4 = 0.0;
  double wall_seconds = 0.0;
};

std::string to_json_line(const EpochLog& log);

struct TrainOptions {
  /// Architecture knobs; corpus-derived fields are filled by `train`.
  ModelConfig model;
  TrainingConfig training;
  Variant variant = Variant::Nacf;
  std::uint64_t seed = 0;
  /// Written after every epoch together with its sidecar and optimizer state.
  std::optional<std::filesystem::path> checkpoint;
  /// Line-delimited JSON; the first line records the seed.
  std::optional<std::filesystem::path> log;
  /// Continue from `checkpoint` at its recorded epoch.
  bool resume = false;
  /// Worker threads for per-example gradients; results do not depend on it.
  std::size_t threads = 1;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Copies modality shapes, category count and vocabulary size from the
/// corpus and sets the causal flag for the variant.
ModelConfig model_config_for(const Corpus& corpus, ModelConfig base, Variant variant);

struct TrainResult {
  Model<float> model;
  std::vector<EpochLog> log;
};

TrainResult train(const Corpus& corpus, const TrainOptions& options);

/// Optimizer state file written next to a checkpoint.
std::filesystem::path optimizer_path(const std::filesystem::path& checkpoint);

}  // namespace nacf
