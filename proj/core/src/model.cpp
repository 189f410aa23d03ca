#include "nacf/model.hpp"

#include <cmath>
#include <string>

namespace nacf {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (modalities.empty()) fail("model needs at least one modality");
  for (const auto& m : modalities) {
    if (m.feature_dim == 0 || m.frames == 0) fail("modality with zero feature_dim or frames");
  }
  if (d_model == 0 || d_hidden == 0 || heads == 0) fail("zero model dimension");
  if (d_model % heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by heads " + std::to_string(heads));
  }
  if (decoder_layers == 0) fail("decoder_layers must be >= 1");
  if (max_len < 4) fail("max_len must be >= 4");
  if (vocab_size <= static_cast<std::size_t>(token::kReservedCount)) {
    fail("vocab_size must exceed the reserved tokens");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw Error(ErrorCode::InvalidProbability, "dropout must be in [0, 1)");
  }
}

std::size_t ModelConfig::memory_rows() const noexcept {
  std::size_t rows = category_count > 0 ? 1 : 0;
  for (const auto& m : modalities) rows += m.frames;
  return rows;
}

namespace {

template <class T>
Tensor<T> glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  Tensor<T> t({fan_in, fan_out});
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data()) v = static_cast<T>(std * rng.normal());
  return t;
}

template <class T>
Tensor<T> uniform_table(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor<T> t({rows, cols});
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-0.1, 0.1));
  return t;
}

}  // namespace

template <class T>
typename Model<T>::Attention Model<T>::make_attention(const std::string& prefix, Rng& rng) {
  Attention a;
  const std::size_t dm = config_.d_model, dk = dm / config_.heads;
  for (std::size_t h = 0; h < config_.heads; ++h) {
    const std::string hp = prefix + ".h" + std::to_string(h);
    a.wq.push_back(params_.add(hp + ".wq", glorot<T>(rng, dm, dk), true));
    a.wk.push_back(params_.add(hp + ".wk", glorot<T>(rng, dm, dk), true));
    a.wv.push_back(params_.add(hp + ".wv", glorot<T>(rng, dm, dk), true));
  }
  a.wo = params_.add(prefix + ".wo", glorot<T>(rng, dm, dm), true);
  a.bo = params_.add(prefix + ".bo", Tensor<T>({dm}), false);
  a.ln_gain = params_.add(prefix + ".ln.gain", Tensor<T>({dm}, T{1}), false);
  a.ln_bias = params_.add(prefix + ".ln.bias", Tensor<T>({dm}), false);
  return a;
}

template <class T>
Model<T>::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng = Rng(seed).split(0x4d4f44454cULL);
  const std::size_t dm = config_.d_model;

  for (std::size_t m = 0; m < config_.modalities.size(); ++m) {
    const std::string pre = "encoder.m" + std::to_string(m);
    const std::size_t dv = config_.modalities[m].feature_dim;
    Highway hw;
    hw.w1 = params_.add(pre + ".w1", glorot<T>(rng, dv, dm), true);
    hw.b1 = params_.add(pre + ".b1", Tensor<T>({dm}), false);
    hw.w2 = params_.add(pre + ".w2", glorot<T>(rng, dm, dm), true);
    hw.b2 = params_.add(pre + ".b2", Tensor<T>({dm}), false);
    hw.w3 = params_.add(pre + ".w3", glorot<T>(rng, dm, dm), true);
    hw.b3 = params_.add(pre + ".b3", Tensor<T>({dm}), false);
    encoders_.push_back(hw);
  }
  if (config_.category_count > 0) {
    category_table_ =
        params_.add("encoder.category", uniform_table<T>(rng, config_.category_count, dm), false);
  }
  if (!config_.causal) {
    len_w1_ = params_.add("length.w1", glorot<T>(rng, dm, dm), true);
    len_b1_ = params_.add("length.b1", Tensor<T>({dm}), false);
    len_w2_ = params_.add("length.w2", glorot<T>(rng, dm, config_.max_len), true);
    len_b2_ = params_.add("length.b2", Tensor<T>({config_.max_len}), false);
  }
  token_table_ = params_.add("embed.token", uniform_table<T>(rng, config_.vocab_size, dm), false);
  position_table_ =
      params_.add("embed.position", uniform_table<T>(rng, config_.positions(), dm), false);

  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string pre = "decoder.l" + std::to_string(l);
    DecoderLayer layer;
    layer.self = make_attention(pre + ".self", rng);
    layer.cross = make_attention(pre + ".cross", rng);
    layer.w1 = params_.add(pre + ".ffn.w1", glorot<T>(rng, dm, config_.d_hidden), true);
    layer.b1 = params_.add(pre + ".ffn.b1", Tensor<T>({config_.d_hidden}), false);
    layer.w2 = params_.add(pre + ".ffn.w2", glorot<T>(rng, config_.d_hidden, dm), true);
    layer.b2 = params_.add(pre + ".ffn.b2", Tensor<T>({dm}), false);
    layer.ln_gain = params_.add(pre + ".ffn.ln.gain", Tensor<T>({dm}, T{1}), false);
    layer.ln_bias = params_.add(pre + ".ffn.ln.bias", Tensor<T>({dm}), false);
    layers_.push_back(std::move(layer));
  }
  proj_w_ = params_.add("project.w", glorot<T>(rng, dm, config_.vocab_size), true);
  proj_b_ = params_.add("project.b", Tensor<T>({config_.vocab_size}), false);
}

template <class T>
Var<T> Model<T>::linear(Tape<T>& tape, const Var<T>& x, std::size_t w, std::size_t b) const {
  return ops::add_row(ops::matmul(x, p(tape, w)), p(tape, b));
}

template <class T>
Var<T> Model<T>::encode(Tape<T>& tape, const FeatureSet& features) const {
  if (features.modalities.size() != config_.modalities.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                "expected " + std::to_string(config_.modalities.size()) + " modalities, got " +
                    std::to_string(features.modalities.size()));
  }
  std::vector<Var<T>> rows;
  for (std::size_t m = 0; m < encoders_.size(); ++m) {
    const Tensor<float>& f = features.modalities[m];
    const ModalitySpec& spec = config_.modalities[m];
    if (f.rank() != 2 || f.rows() != spec.frames || f.cols() != spec.feature_dim) {
      throw Error(ErrorCode::ShapeMismatch,
                  "modality " + std::to_string(m) + " features " + shape_string(f.shape()) +
                      ", expected [" + std::to_string(spec.frames) + "x" +
                      std::to_string(spec.feature_dim) + "]");
    }
    const Highway& hw = encoders_[m];
    Var<T> x = tape.constant(to_precision<T>(f));
    Var<T> xbar = linear(tape, x, hw.w1, hw.b1);
    Var<T> xhat = ops::tanh(linear(tape, xbar, hw.w2, hw.b2));
    Var<T> gate = ops::sigmoid(linear(tape, xbar, hw.w3, hw.b3));
    // g * xbar + (1 - g) * xhat
    rows.push_back(ops::add(xhat, ops::hadamard(gate, ops::sub(xbar, xhat))));
  }
  if (category_table_) {
    if (!features.category || *features.category < 0 ||
        static_cast<std::size_t>(*features.category) >= config_.category_count) {
      throw Error(ErrorCode::UnknownCategory,
                  features.category ? "category " + std::to_string(*features.category)
                                    : std::string("missing category tag"));
    }
    const int id = *features.category;
    rows.push_back(ops::embedding(p(tape, *category_table_), std::span<const int>(&id, 1)));
  }
  if (rows.size() == 1) return rows.front();
  return ops::concat<T>(rows, 0);
}

template <class T>
Var<T> Model<T>::length_logits(Tape<T>& tape, const Var<T>& memory) const {
  if (config_.causal) {
    throw Error(ErrorCode::InvalidConfig, "causal models have no length predictor");
  }
  if (memory.value().rank() != 2 || memory.value().cols() != config_.d_model) {
    throw Error(ErrorCode::ShapeMismatch, "memory must be [rows x d_model]");
  }
  Var<T> pooled = ops::mean_pool(memory, 0);
  Var<T> hidden = ops::relu(linear(tape, pooled, len_w1_, len_b1_));
  return linear(tape, hidden, len_w2_, len_b2_);
}

template <class T>
Var<T> Model<T>::predict_length(Tape<T>& tape, const Var<T>& memory) const {
  return ops::softmax(length_logits(tape, memory), 0);
}

template <class T>
Var<T> Model<T>::input_embed(Tape<T>& tape, const PackedSequences& input,
                             const Var<T>& memory) const {
  if (input.tokens.empty()) throw Error(ErrorCode::ShapeMismatch, "empty decoder input");
  std::vector<int> positions;
  positions.reserve(input.tokens.size());
  std::size_t covered = 0;
  for (std::size_t len : input.lengths) {
    if (len > config_.positions()) {
      throw Error(ErrorCode::LengthExceedsMax,
                  "sequence length " + std::to_string(len) + " exceeds " +
                      std::to_string(config_.positions()));
    }
    for (std::size_t i = 0; i < len; ++i) positions.push_back(static_cast<int>(i));
    covered += len;
  }
  if (covered != input.tokens.size()) {
    throw Error(ErrorCode::ShapeMismatch, "segment lengths do not cover the packed tokens");
  }
  for (int t : input.tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size) {
      throw Error(ErrorCode::UnknownToken, "token id " + std::to_string(t) + " not in vocabulary");
    }
  }
  Var<T> e = ops::add(ops::embedding(p(tape, token_table_), std::span<const int>(input.tokens)),
                      ops::embedding(p(tape, position_table_), std::span<const int>(positions)));
  if (config_.use_source_copy) e = ops::add_row(e, ops::mean_pool(memory, 0));
  return e;
}

template <class T>
std::vector<std::uint8_t> Model<T>::self_attention_mask(const PackedSequences& input) const {
  const std::size_t n = input.total();
  std::vector<std::uint8_t> keep(n * n, 0);
  std::size_t start = 0;
  for (std::size_t len : input.lengths) {
    for (std::size_t qi = 0; qi < len; ++qi) {
      for (std::size_t ki = 0; ki < len; ++ki) {
        if (config_.causal && ki > qi) continue;
        if (input.tokens[start + ki] == token::kPad) continue;
        keep[(start + qi) * n + start + ki] = 1;
      }
    }
    start += len;
  }
  return keep;
}

template <class T>
Var<T> Model<T>::attend(Tape<T>& tape, std::size_t layer, AttentionKind kind,
                        const Var<T>& queries, const Var<T>& keys_values,
                        const std::vector<std::uint8_t>* keep, bool train, Rng* rng) const {
  const Attention& a = kind == AttentionKind::Self ? layers_[layer].self : layers_[layer].cross;
  const T inv_sqrt_dk =
      T{1} / std::sqrt(static_cast<T>(config_.d_model / config_.heads));
  std::vector<Var<T>> heads;
  heads.reserve(config_.heads);
  for (std::size_t h = 0; h < config_.heads; ++h) {
    Var<T> q = ops::matmul(queries, p(tape, a.wq[h]));
    Var<T> k = ops::matmul(keys_values, p(tape, a.wk[h]));
    Var<T> v = ops::matmul(keys_values, p(tape, a.wv[h]));
    Var<T> scores = ops::scale(ops::matmul_nt(q, k), inv_sqrt_dk);
    Var<T> weights = keep ? ops::masked_softmax(scores, *keep) : ops::softmax(scores, 1);
    heads.push_back(ops::matmul(weights, v));
  }
  Var<T> merged = heads.size() == 1 ? heads.front() : ops::concat<T>(heads, 1);
  Var<T> out = linear(tape, merged, a.wo, a.bo);
  if (train && config_.dropout > 0.0) out = ops::dropout(out, config_.dropout, true, *rng);
  return ops::layer_norm(ops::add(out, queries), p(tape, a.ln_gain), p(tape, a.ln_bias));
}

template <class T>
Var<T> Model<T>::decode_logits(Tape<T>& tape, const PackedSequences& input, const Var<T>& memory,
                               bool train, Rng* rng) const {
  if (train && config_.dropout > 0.0 && rng == nullptr) {
    throw Error(ErrorCode::InvalidConfig, "training-mode decode needs an rng for dropout");
  }
  if (memory.value().rank() != 2 || memory.value().cols() != config_.d_model) {
    throw Error(ErrorCode::ShapeMismatch, "memory must be [rows x d_model]");
  }
  Var<T> x = input_embed(tape, input, memory);
  const auto keep = self_attention_mask(input);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    x = attend(tape, l, AttentionKind::Self, x, x, &keep, train, rng);
    x = attend(tape, l, AttentionKind::Cross, x, memory, nullptr, train, rng);
    const DecoderLayer& layer = layers_[l];
    Var<T> hidden = ops::relu(linear(tape, x, layer.w1, layer.b1));
    Var<T> out = linear(tape, hidden, layer.w2, layer.b2);
    if (train && config_.dropout > 0.0) out = ops::dropout(out, config_.dropout, true, *rng);
    x = ops::layer_norm(ops::add(out, x), p(tape, layer.ln_gain), p(tape, layer.ln_bias));
  }
  return linear(tape, x, proj_w_, proj_b_);
}

template <class T>
Var<T> Model<T>::decode(Tape<T>& tape, const PackedSequences& input, const Var<T>& memory,
                        bool train, Rng* rng) const {
  return ops::softmax(decode_logits(tape, input, memory, train, rng), 1);
}

template class Model<float>;
template class Model<double>;

}  // namespace nacf
