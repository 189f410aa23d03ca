#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nacf/model.hpp"

namespace nacf {

class Vocabulary;

enum class Algorithm { MaskPredict, EasyFirst, LeftToRight };
std::string_view to_string(Algorithm a) noexcept;
/// Accepts "mp", "ef", "l2r".
Algorithm parse_algorithm(std::string_view name);

struct DecodeConfig {
  Algorithm algorithm = Algorithm::MaskPredict;
  bool use_template = true;
  /// Mask-Predict iterations.
  std::size_t T = 5;
  /// Tokens committed per Easy-First / Left-to-Right iteration.
  std::size_t q = 1;
  /// Length beam width.
  std::size_t B = 6;
  bool use_rescoring = false;
  /// Re-predict template visual words after Easy-First / Left-to-Right.
  bool refine_visual = true;
  /// Easy-First / Left-to-Right: at most this many iterations, spreading
  /// the remaining positions evenly over them.
  std::optional<std::size_t> fixed_T;
  bool record_trace = false;

  void validate() const;
};

/// m_t = max(floor(N (T - t + 1) / T), 1) for 1 <= t <= T.
std::size_t mask_count(std::size_t N, std::size_t T, std::size_t t);
/// ceil((N - u) / q).
std::size_t iteration_count(std::size_t N, std::size_t u, std::size_t q);
/// Easy-First / Left-to-Right iterations under `config` for u observed
/// positions out of N.
std::size_t commit_iterations(const DecodeConfig& config, std::size_t N, std::size_t u);
/// Positions committed in iteration t (1-based) of Easy-First / Left-to-Right.
std::size_t commit_size(const DecodeConfig& config, std::size_t N, std::size_t u, std::size_t t);

/// Batched decoder calls the NACF model needs for candidates of the given
/// lengths whose templates observed `observed[i]` positions. Teacher
/// rescoring adds one more call on the teacher model (not included).
std::size_t expected_decoder_passes(const DecodeConfig& config, std::span<const std::size_t> lengths,
                                    std::span<const std::size_t> observed);

struct TraceStep {
  /// "template", "predict", "mask" or "refine".
  std::string stage;
  std::size_t iteration = 0;
  std::vector<int> tokens;
  std::vector<double> confidence;
};

struct Candidate {
  std::size_t length = 0;
  std::vector<int> tokens;
  std::vector<double> confidence;
  /// Stage-one output (all [mask] when no template is used).
  std::vector<int> template_tokens;
  /// Template positions holding visual words (Y_obs^(1)).
  std::vector<std::size_t> visual_positions;
  std::size_t iterations = 0;
  /// Teacher probability per token when rescoring.
  std::vector<double> teacher;
  double score = 0.0;
  /// Sorted word ids predicted at any point while decoding this candidate.
  std::vector<int> touched;
  std::vector<TraceStep> trace;
};

struct CaptionResult {
  std::vector<int> tokens;
  std::size_t best = 0;
  /// Candidates in length-beam order.
  std::vector<Candidate> candidates;
  std::size_t decoder_passes = 0;
  std::size_t teacher_passes = 0;
  double encode_ms = 0.0;
  double decode_ms = 0.0;

  std::size_t total_passes() const noexcept { return decoder_passes + teacher_passes; }
  /// Candidate indices ordered by descending selection score.
  std::vector<std::size_t> ranking() const;
};

/// Top-B lengths among 4..max_len by probability (`L[j]` is the
/// probability of length j+1); ties prefer the shorter length.
std::vector<std::size_t> length_beam(std::span<const double> L, std::size_t B);

/// Mean log confidence, or with teacher probabilities
/// (1 / 2N) * sum(log c + log z).
double candidate_score(std::span<const double> confidence, std::span<const double> teacher);

/// Index of the best candidate: highest score, then shorter, then
/// lexicographically smaller tokens.
std::size_t select_best(const std::vector<Candidate>& candidates);

/// p(y_n | y_<n, R) for every token of every sentence, from one causal pass
/// over the packed sentences.
std::vector<std::vector<double>> teacher_scores(const Model<float>& teacher, Tape<float>& tape,
                                                const Var<float>& memory,
                                                const std::vector<std::vector<int>>& sentences);

/// Same quantity computed one prefix at a time (reference implementation).
std::vector<double> teacher_scores_sequential(const Model<float>& teacher, Tape<float>& tape,
                                              const Var<float>& memory,
                                              std::span<const int> sentence);

struct ArResult {
  std::vector<int> tokens;
  double score = 0.0;
  std::size_t passes = 0;
  /// Finished hypotheses kept by the beam (for vocabulary coverage).
  std::vector<std::vector<int>> hypotheses;
  double encode_ms = 0.0;
  double decode_ms = 0.0;
};

/// Non-autoregressive captioner: template stage plus iterative refinement
/// over a length beam, optionally rescored by a causal teacher.
class Captioner {
 public:
  explicit Captioner(const Model<float>& model, const Model<float>* teacher = nullptr);

  CaptionResult caption(const FeatureSet& features, const DecodeConfig& config) const;
  /// Decodes exactly the given lengths (each in [1, max_len]).
  CaptionResult caption_lengths(const FeatureSet& features, std::span<const std::size_t> lengths,
                                const DecodeConfig& config) const;

  /// Stage one for each length: argmax over [mask] and real words with all
  /// inputs set to [visual].
  std::vector<Candidate> generate_template(Tape<float>& tape, const Var<float>& memory,
                                           std::span<const std::size_t> lengths) const;

  /// Stage two on prepared candidates; returns the decoder calls made.
  std::size_t refine(Tape<float>& tape, const Var<float>& memory, std::vector<Candidate>& candidates,
                     const DecodeConfig& config) const;

 private:
  CaptionResult run(const FeatureSet& features, const std::optional<std::vector<std::size_t>>& lengths,
                    const DecodeConfig& config) const;

  const Model<float>& model_;
  const Model<float>* teacher_;
};

/// Causal beam search with end-token termination and mean log-probability
/// ranking. With `forced_length` the end token is suppressed until exactly
/// that many tokens are emitted.
ArResult ar_decode(const Model<float>& model, const FeatureSet& features, std::size_t beam_size,
                   std::optional<std::size_t> forced_length = std::nullopt);

/// Text walkthrough of a candidate's trace, one line per step.
std::string render_trace(const Candidate& candidate, const Vocabulary& vocab);

}  // namespace nacf
