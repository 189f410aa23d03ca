#include <benchmark/benchmark.h>

#include <vector>

#include "nacf/decoding.hpp"
#include "nacf/model.hpp"
#include "nacf/ops.hpp"
#include "nacf/tape.hpp"

namespace {

using namespace nacf;

Tensor<float> random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor<float> t({rows, cols});
  for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

// Desk-scale captioning model over two modalities and 20 categories.
ModelConfig desk_config(bool causal) {
  ModelConfig c;
  c.modalities = {ModalitySpec{40, 8}, ModalitySpec{20, 8}};
  c.category_count = 20;
  c.d_model = 64;
  c.d_hidden = 256;
  c.heads = 4;
  c.max_len = 20;
  c.vocab_size = 120;
  c.dropout = 0.0;
  c.causal = causal;
  return c;
}

FeatureSet random_features(const ModelConfig& c, Rng& rng) {
  FeatureSet f;
  for (const auto& m : c.modalities) f.modalities.push_back(random_matrix(m.frames, m.feature_dim, rng));
  f.category = 3;
  return f;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const auto a = random_matrix(n, n, rng);
  const auto b = random_matrix(n, n, rng);
  for (auto _ : state) {
    Tape<float> tape(false);
    benchmark::DoNotOptimize(ops::matmul(tape.variable(a), tape.variable(b)).value().data().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(256);

void BM_DecoderForward(benchmark::State& state) {
  const ModelConfig c = desk_config(false);
  const Model<float> model(c, 2);
  Rng rng(3);
  const auto f = random_features(c, rng);
  std::vector<int> tokens(static_cast<std::size_t>(state.range(0)), token::kMask);
  for (auto _ : state) {
    Tape<float> tape(false);
    const auto memory = model.encode(tape, f);
    benchmark::DoNotOptimize(model.decode(tape, PackedSequences::single(tokens), memory).value().data().data());
  }
}
BENCHMARK(BM_DecoderForward)->Arg(8)->Arg(16)->Unit(benchmark::kMicrosecond);

void BM_CaptionMaskPredict(benchmark::State& state) {
  const ModelConfig c = desk_config(false);
  const Model<float> model(c, 4);
  const Captioner captioner(model);
  Rng rng(5);
  const auto f = random_features(c, rng);
  DecodeConfig dc;
  dc.T = 5;
  dc.B = static_cast<std::size_t>(state.range(0));
  const std::vector<std::size_t> lengths(dc.B, 12);
  for (auto _ : state) benchmark::DoNotOptimize(captioner.caption_lengths(f, lengths, dc).tokens.data());
}
BENCHMARK(BM_CaptionMaskPredict)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_CaptionAutoregressive(benchmark::State& state) {
  const ModelConfig c = desk_config(true);
  const Model<float> model(c, 6);
  Rng rng(7);
  const auto f = random_features(c, rng);
  const auto beam = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(ar_decode(model, f, beam, 12).tokens.data());
}
BENCHMARK(BM_CaptionAutoregressive)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
