#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gradcheck.hpp"
#include "nacf/model.hpp"
#include "nacf/training.hpp"

namespace nacf::testing {

/// Tiny architecture for exhaustive gradient and invariant checks:
/// d_m = 8, H = 2, K = 2, vocabulary of 12, one modality plus category row.
inline ModelConfig toy_config(bool causal = false) {
  ModelConfig c;
  c.modalities = {ModalitySpec{6, 2}};
  c.category_count = 2;
  c.d_model = 8;
  c.d_hidden = 16;
  c.heads = 2;
  c.max_len = 6;
  c.vocab_size = 12;
  c.dropout = 0.0;
  c.causal = causal;
  return c;
}

inline FeatureSet random_features(const ModelConfig& config, Rng& rng) {
  FeatureSet f;
  for (const auto& m : config.modalities) {
    Tensor<float> t({m.frames, m.feature_dim});
    for (auto& v : t.data()) v = static_cast<float>(rng.normal());
    f.modalities.push_back(std::move(t));
  }
  if (config.category_count > 0) f.category = static_cast<int>(rng.below(config.category_count));
  return f;
}

/// Random real-word sentence (ids past the reserved block).
inline std::vector<int> random_sentence(std::size_t n, std::size_t vocab, Rng& rng) {
  std::vector<int> s(n);
  for (auto& t : s) {
    t = token::kReservedCount + static_cast<int>(rng.below(vocab - token::kReservedCount));
  }
  return s;
}

/// One training example for the toy model: N = 5 tokens, a random length
/// target, a random mask and a visual target mixing words and [mask].
struct ToyExample {
  FeatureSet features;
  std::vector<double> length_target;
  MaskedExample masked;
  std::vector<int> visual;
};

inline ToyExample toy_example(const ModelConfig& config, std::uint64_t seed, std::size_t n = 5) {
  Rng rng(seed);
  ToyExample ex;
  ex.features = random_features(config, rng);
  ex.length_target.assign(config.max_len, 0.0);
  double total = 0.0;
  for (auto& v : ex.length_target) total += (v = rng.uniform() + 0.05);
  for (auto& v : ex.length_target) v /= total;
  const auto target = random_sentence(n, config.vocab_size, rng);
  ex.masked = sample_mask(target, 0.2, 0.8, rng);
  for (int t : target) ex.visual.push_back(rng.uniform() < 0.5 ? t : token::kMask);
  return ex;
}

/// Largest relative error between tape gradients of the full objective and
/// central finite differences over every element of every parameter.
inline double objective_gradient_error(Model<double>& model, const ToyExample& ex,
                                       const ObjectiveWeights& weights, double step = 1e-5) {
  const bool causal = model.config().causal;
  auto evaluate = [&](Tape<double>& tape) {
    return causal ? ar_objective(tape, model, ex.features, ex.masked.target, ex.visual, weights,
                                 false, nullptr)
                  : nacf_objective(tape, model, ex.features, ex.length_target, ex.masked, ex.visual,
                                   weights, false, nullptr);
  };
  auto grads = model.params().zeros_like();
  {
    Tape<double> tape;
    auto parts = evaluate(tape);
    tape.backward(parts.total);
    tape.add_parameter_grads(grads);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    Tensor<double>& value = model.params()[i].value;
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double orig = value[j];
      value[j] = orig + step;
      Tape<double> up_tape(false);
      const double up = evaluate(up_tape).total.value()[0];
      value[j] = orig - step;
      Tape<double> down_tape(false);
      const double down = evaluate(down_tape).total.value()[0];
      value[j] = orig;
      worst = std::max(worst, relative_error(grads[i][j], (up - down) / (2 * step)));
    }
  }
  return worst;
}

}  // namespace nacf::testing
