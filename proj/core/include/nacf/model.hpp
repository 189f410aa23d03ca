#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "nacf/checkpoint.hpp"
#include "nacf/ops.hpp"

namespace nacf {

/// Reserved vocabulary ids shared by every model and corpus.
namespace token {
inline constexpr int kPad = 0;
inline constexpr int kMask = 1;
inline constexpr int kVisual = 2;
inline constexpr int kBegin = 3;
inline constexpr int kEnd = 4;
inline constexpr int kReservedCount = 5;
}  // namespace token

struct ModalitySpec {
  std::size_t feature_dim = 0;
  std::size_t frames = 0;
};

struct ModelConfig {
  std::vector<ModalitySpec> modalities;
  /// Number of category tags; 0 disables the category row of R.
  std::size_t category_count = 0;
  std::size_t d_model = 512;
  std::size_t d_hidden = 2048;
  std::size_t heads = 8;
  std::size_t decoder_layers = 1;
  std::size_t max_len = 20;
  std::size_t vocab_size = 0;
  double dropout = 0.5;
  /// true: AR-B (causal self-attention, begin/end tokens, no length predictor).
  bool causal = false;
  /// Adds mean-pooled R to every decoder input embedding.
  bool use_source_copy = true;

  void validate() const;
  /// Rows in the position table: AR models need room for the begin token.
  std::size_t positions() const noexcept { return max_len + (causal ? 1 : 0); }
  std::size_t memory_rows() const noexcept;
};

/// Per-video encoder input: one K x d_v matrix per modality.
struct FeatureSet {
  std::vector<Tensor<float>> modalities;
  std::optional<int> category;
};

/// Several token sequences laid end to end. Attention never crosses a
/// segment boundary, so one decoder call over the packed rows equals one
/// call per segment.
struct PackedSequences {
  std::vector<int> tokens;
  std::vector<std::size_t> lengths;

  void append(std::span<const int> seq) {
    tokens.insert(tokens.end(), seq.begin(), seq.end());
    lengths.push_back(seq.size());
  }
  std::size_t total() const noexcept { return tokens.size(); }
  std::size_t offset(std::size_t segment) const noexcept {
    std::size_t off = 0;
    for (std::size_t i = 0; i < segment; ++i) off += lengths[i];
    return off;
  }
  static PackedSequences single(std::span<const int> seq) {
    PackedSequences p;
    p.append(seq);
    return p;
  }
};

/// Highway input-embedding encoder, length predictor and a stack of
/// (self-attention, inter-attention, FFN) decoder layers with an output
/// projection. The same class serves the bidirectional NACF decoder and
/// the causal AR-B baseline.
template <class T>
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  ParameterStore<T>& params() noexcept { return params_; }
  const ParameterStore<T>& params() const noexcept { return params_; }

  /// R: (sum of frames over modalities [+1 category row]) x d_model.
  Var<T> encode(Tape<T>& tape, const FeatureSet& features) const;

  /// Unnormalised length scores over lengths 1..max_len.
  Var<T> length_logits(Tape<T>& tape, const Var<T>& memory) const;
  /// Length distribution L (sums to 1).
  Var<T> predict_length(Tape<T>& tape, const Var<T>& memory) const;

  /// e_n = e_tok + e_pos(n) + MP(R); positions restart in every segment.
  Var<T> input_embed(Tape<T>& tape, const PackedSequences& input, const Var<T>& memory) const;

  Var<T> decode_logits(Tape<T>& tape, const PackedSequences& input, const Var<T>& memory,
                       bool train = false, Rng* rng = nullptr) const;
  /// Per-position distribution over the vocabulary.
  Var<T> decode(Tape<T>& tape, const PackedSequences& input, const Var<T>& memory,
                bool train = false, Rng* rng = nullptr) const;

  enum class AttentionKind { Self, Cross };
  /// One multi-head attention block including residual and layer norm.
  /// `keep` masks keys per query ([queries x keys]); null attends to all.
  Var<T> attend(Tape<T>& tape, std::size_t layer, AttentionKind kind, const Var<T>& queries,
                const Var<T>& keys_values, const std::vector<std::uint8_t>* keep, bool train,
                Rng* rng) const;

  /// Self-attention key mask for packed input: same segment, non-pad key,
  /// and (causal models) key position <= query position.
  std::vector<std::uint8_t> self_attention_mask(const PackedSequences& input) const;

 private:
  struct Attention {
    std::vector<std::size_t> wq, wk, wv;
    std::size_t wo = 0, bo = 0, ln_gain = 0, ln_bias = 0;
  };
  struct DecoderLayer {
    Attention self, cross;
    std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0, ln_gain = 0, ln_bias = 0;
  };
  struct Highway {
    std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0, w3 = 0, b3 = 0;
  };

  Var<T> p(Tape<T>& tape, std::size_t index) const { return tape.parameter(params_[index], index); }
  Var<T> linear(Tape<T>& tape, const Var<T>& x, std::size_t w, std::size_t b) const;
  Attention make_attention(const std::string& prefix, Rng& rng);

  ModelConfig config_;
  ParameterStore<T> params_;
  std::vector<Highway> encoders_;
  std::optional<std::size_t> category_table_;
  std::size_t len_w1_ = 0, len_b1_ = 0, len_w2_ = 0, len_b2_ = 0;
  std::size_t token_table_ = 0, position_table_ = 0;
  std::vector<DecoderLayer> layers_;
  std::size_t proj_w_ = 0, proj_b_ = 0;
};

/// Convenience: copies a tensor-valued feature set into `T` precision.
template <class T>
Tensor<T> to_precision(const Tensor<float>& t) {
  return t.template cast<T>();
}

}  // namespace nacf
