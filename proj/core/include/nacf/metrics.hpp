#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nacf/corpus.hpp"

namespace nacf {

using References = std::vector<Sentence>;

/// Corpus BLEU@1..4 (x100): clipped n-gram precision summed over the
/// corpus, geometric mean with uniform weights, brevity penalty against the
/// closest reference length (ties prefer the shorter reference).
std::array<double, 4> bleu(std::span<const Sentence> hypotheses,
                           std::span<const References> references);

/// ROUGE-L F-measure (x100) with beta = 1.2, taking the best precision and
/// recall over the references of each hypothesis, averaged over hypotheses.
double rouge_l(std::span<const Sentence> hypotheses, std::span<const References> references);

std::size_t lcs_length(const Sentence& a, const Sentence& b);

/// CIDEr-D (x10): tf-idf n-gram vectors (n = 1..4) with document
/// frequencies over the references of the evaluated set, clipped
/// hypothesis weights, gaussian length penalty (sigma = 6), averaged over
/// n and references.
double cider_d(std::span<const Sentence> hypotheses, std::span<const References> references);

/// Per-hypothesis CIDEr-D values in the same units as `cider_d`.
std::vector<double> cider_d_scores(std::span<const Sentence> hypotheses,
                                   std::span<const References> references);

struct Diversity {
  double novel = 0.0;
  double unique = 0.0;
  double vocab_usage = 0.0;
  /// k -> percentage of vocabulary words touched by the top-k candidates.
  std::map<std::size_t, double> coverage;
};

/// `candidate_words[i]` lists, best candidate first, the words touched
/// while decoding each candidate of caption i. Percentages are over
/// `vocab_words` (the non-reserved vocabulary size). Unique is distinct
/// captions over total captions.
Diversity diversity(std::span<const Sentence> captions, std::span<const Sentence> training_captions,
                    std::size_t vocab_words,
                    std::span<const std::vector<std::vector<std::string>>> candidate_words,
                    std::span<const std::size_t> k_list);

/// Distinct n-grams per category; duplicate captions count once.
std::map<int, std::size_t> unique_ngrams_by_category(std::span<const Sentence> captions,
                                                     std::span<const int> categories,
                                                     std::size_t n = 4);

/// Percentage of vocabulary words seen at each position 1..max_len.
std::vector<double> per_position_vocab_usage(std::span<const Sentence> captions,
                                             std::size_t vocab_words, std::size_t max_len);

struct LatencyStats {
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double passes_mean = 0.0;
  std::vector<double> per_example_ms;
};

/// Nearest-rank percentiles over the per-example times.
LatencyStats summarize_latency(std::vector<double> per_example_ms,
                               std::span<const std::size_t> passes);

struct MetricReport {
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;
  double cider_d = 0.0;
  Diversity diversity;
  std::optional<LatencyStats> latency;
  std::size_t captions = 0;
  std::uint64_t seed = 0;

  /// Pretty JSON with sorted keys; METEOR is reported as "n/a".
  std::string to_json() const;
  /// Header row plus one value row; latency columns are omitted when absent.
  std::string to_csv() const;
};

}  // namespace nacf
