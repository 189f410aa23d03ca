#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nacf/corpus.hpp"
#include "nacf/decoding.hpp"
#include "nacf/experiment.hpp"

namespace nacf {

struct BenchEntry {
  std::string label;
  bool autoregressive = false;
  DecodeConfig config;
  std::size_t beam = 1;
};

/// Autoregressive reference row first, then one row per (algorithm, B, T).
std::vector<BenchEntry> bench_grid(const BenchConfig& bench);

struct BenchRow {
  std::string label;
  bool autoregressive = false;
  double passes_mean = 0.0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double encode_ms = 0.0;
  /// Reference mean latency over this row's; empty without a reference row.
  std::optional<double> speedup;
  double bleu4 = 0.0;
  double cider_d = 0.0;
  /// Videos whose measured decoder passes differ from the analytic law.
  std::size_t law_violations = 0;
};

struct BenchResult {
  std::uint64_t seed = 0;
  std::vector<BenchRow> rows;
};

/// Times every grid entry one video at a time (no batching) over the split.
/// Decode latency excludes feature encoding, which is reported separately.
/// `ar` is both the reference decoder and the rescoring teacher; without it
/// the reference row and rescoring are skipped. Trace recording is refused.
BenchResult run_benchmark(const Model<float>& nacf, const Model<float>* ar, const Corpus& corpus,
                          Split split, const BenchConfig& bench, std::uint64_t seed,
                          bool trace_requested = false);

/// `# seed=<n>` line, then config,passes,mean_ms,p50,p95,speedup,encode_ms,bleu4,cider_d,pass_law.
std::string bench_csv(const BenchResult& result);

/// Scatter of speedup (x) against CIDEr-D (y), one labelled point per row.
std::string bench_svg(const BenchResult& result);

}  // namespace nacf
