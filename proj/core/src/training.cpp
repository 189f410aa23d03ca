#include "nacf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "nacf/decoding.hpp"
#include "nacf/metrics.hpp"
#include "nacf/model_io.hpp"

namespace nacf {

namespace {

using Clock = std::chrono::steady_clock;

// Stream identifiers for Rng::split.
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kMaskStream = 0x4d41534bULL;
constexpr std::uint64_t kDropoutStream = 0x44524f50ULL;

template <class T>
Var<T> add_constant(const Var<T>& x, double c) {
  return ops::add(x, x.tape()->constant(Tensor<T>({1}, static_cast<T>(c))));
}

template <class T>
Var<T> nll_sum(const Var<T>& log_probs, std::size_t row_offset, std::span<const int> targets,
               const std::vector<std::uint8_t>* include, double weight) {
  const std::size_t vocab = log_probs.value().cols();
  std::vector<ops::GatherEntry> entries;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    if (include && !(*include)[n]) continue;
    const int id = targets[n];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw Error(ErrorCode::IndexOutOfVocab, "target id " + std::to_string(id));
    }
    entries.push_back({row_offset + n, static_cast<std::size_t>(id), -weight});
  }
  return ops::gather_sum(log_probs, std::span<const ops::GatherEntry>(entries));
}

struct Example {
  std::size_t video = 0;
  std::size_t caption = 0;
};

}  // namespace

std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::Nacf: return "nacf";
    case Variant::NaB: return "na-b";
    case Variant::ArB: return "ar-b";
    case Variant::ArBVis: return "ar-b-vis";
  }
  return "nacf";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::Nacf, Variant::NaB, Variant::ArB, Variant::ArBVis}) {
    if (to_string(v) == name) return v;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown variant '" + std::string(name) + "'");
}

bool is_causal(Variant v) noexcept { return v == Variant::ArB || v == Variant::ArBVis; }

void TrainingConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (!(beta_low >= 0.0 && beta_low <= beta_high && beta_high <= 1.0)) {
    fail("masking range must satisfy 0 <= beta_low <= beta_high <= 1");
  }
  if (!(lambda_vis >= 0.0)) fail("lambda_vis must be >= 0");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(lr_init > 0.0) || !(lr_min >= 0.0) || !(lr_decay > 0.0 && lr_decay <= 1.0)) {
    fail("learning-rate schedule out of range");
  }
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
}

double learning_rate(const TrainingConfig& config, std::size_t epoch) {
  return std::max(config.lr_init * std::pow(config.lr_decay, static_cast<double>(epoch)),
                  config.lr_min);
}

MaskedExample sample_mask(std::span<const int> target, double beta_low, double beta_high, Rng& rng) {
  if (target.empty()) throw Error(ErrorCode::EmptySentence, "cannot mask an empty sentence");
  if (!(beta_low >= 0.0 && beta_low <= beta_high && beta_high <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "masking range must satisfy 0 <= low <= high <= 1");
  }
  const std::size_t n = target.size();
  const double ratio = rng.uniform(beta_low, beta_high);
  // floor + 1 maps a uniform ratio on [0, 1] to a uniform count on {1..N}.
  const auto count = static_cast<std::size_t>(
      std::clamp<double>(std::floor(ratio * static_cast<double>(n)) + 1.0, 1.0, static_cast<double>(n)));
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  rng.shuffle(positions.begin(), positions.end());
  MaskedExample ex;
  ex.target.assign(target.begin(), target.end());
  ex.input = ex.target;
  ex.masked.assign(n, 0);
  for (std::size_t i = 0; i < count; ++i) {
    ex.masked[positions[i]] = 1;
    ex.input[positions[i]] = token::kMask;
  }
  ex.mask_count = count;
  return ex;
}

std::vector<int> build_visual_target(std::span<const int> target, const Vocabulary& vocab,
                                     const PosLexicon& lexicon, std::span<const Pos> visual_pos) {
  std::vector<int> out;
  out.reserve(target.size());
  for (int id : target) {
    const std::string& word = vocab.word(id);
    const auto pos = lexicon.tag(word);
    if (!pos) throw Error(ErrorCode::UnknownToken, "'" + word + "' has no part-of-speech tag");
    const bool visual = std::find(visual_pos.begin(), visual_pos.end(), *pos) != visual_pos.end() &&
                        !lexicon.stopped(word);
    out.push_back(visual ? id : token::kMask);
  }
  return out;
}

double kl_divergence(std::span<const double> target, std::span<const double> predicted) {
  if (target.size() != predicted.size() || target.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "distributions differ in length");
  }
  auto check = [](std::span<const double> d, const char* which) {
    double s = 0.0;
    for (double v : d) {
      if (!(v >= 0.0)) throw Error(ErrorCode::NotADistribution, std::string(which) + " has a negative entry");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-4) {
      throw Error(ErrorCode::NotADistribution,
                  std::string(which) + " sums to " + std::to_string(s));
    }
  };
  check(target, "target");
  check(predicted, "prediction");
  double kl = 0.0;
  for (std::size_t j = 0; j < target.size(); ++j) {
    if (target[j] == 0.0) continue;
    kl += target[j] * (std::log(target[j]) - std::log(predicted[j]));
  }
  return kl;
}

template <class T>
Var<T> loss_len(const Var<T>& length_logits, std::span<const double> target) {
  if (target.size() != length_logits.size()) {
    throw Error(ErrorCode::ShapeMismatch, "length target has " + std::to_string(target.size()) +
                                              " entries, prediction " +
                                              std::to_string(length_logits.size()));
  }
  double sum = 0.0, entropy = 0.0;
  Tensor<T> weights({target.size()});
  for (std::size_t j = 0; j < target.size(); ++j) {
    if (!(target[j] >= 0.0)) throw Error(ErrorCode::NotADistribution, "negative length target");
    sum += target[j];
    if (target[j] > 0.0) entropy += target[j] * std::log(target[j]);
    weights[j] = static_cast<T>(-target[j]);
  }
  if (std::abs(sum - 1.0) > 1e-4) {
    throw Error(ErrorCode::NotADistribution, "length target sums to " + std::to_string(sum));
  }
  Var<T> logits = length_logits.value().rank() == 1
                      ? length_logits
                      : ops::reshape(length_logits, Shape{length_logits.size()});
  return add_constant(ops::weighted_sum(ops::log_softmax(logits), weights), entropy);
}

template <class T>
Var<T> loss_mlm(const Var<T>& logits, std::size_t row_offset, const MaskedExample& example) {
  if (example.mask_count == 0) throw Error(ErrorCode::EmptySentence, "no masked positions");
  return nll_sum(ops::log_softmax(logits), row_offset, example.target, &example.masked,
                 1.0 / static_cast<double>(example.mask_count));
}

template <class T>
Var<T> loss_vis(const Var<T>& logits, std::size_t row_offset, std::span<const int> visual_target) {
  if (visual_target.empty()) throw Error(ErrorCode::EmptySentence, "empty visual target");
  return nll_sum(ops::log_softmax(logits), row_offset, visual_target, nullptr,
                 1.0 / static_cast<double>(visual_target.size()));
}

template <class T>
ObjectiveParts<T> nacf_objective(Tape<T>& tape, const Model<T>& model, const FeatureSet& features,
                                 std::span<const double> length_target,
                                 const MaskedExample& example, std::span<const int> visual_target,
                                 const ObjectiveWeights& weights, bool train, Rng* rng) {
  const std::size_t n = example.target.size();
  if (n == 0) throw Error(ErrorCode::EmptySentence, "empty training caption");
  Var<T> memory = model.encode(tape, features);
  Var<T> len = loss_len(model.length_logits(tape, memory), length_target);

  PackedSequences input = PackedSequences::single(example.input);
  const bool with_vis = weights.vis > 0.0;
  if (with_vis) {
    if (visual_target.size() != n) throw Error(ErrorCode::ShapeMismatch, "visual target length");
    input.append(std::vector<int>(n, token::kVisual));
  }
  Var<T> log_probs = ops::log_softmax(model.decode_logits(tape, input, memory, train, rng));
  Var<T> mlm = nll_sum(log_probs, 0, example.target, &example.masked, 1.0);

  ObjectiveParts<T> parts;
  parts.len = static_cast<double>(len.value()[0]);
  parts.mlm_sum = static_cast<double>(mlm.value()[0]);
  Var<T> total = ops::add(ops::scale(len, static_cast<T>(weights.len)),
                          ops::scale(mlm, static_cast<T>(weights.mlm)));
  if (with_vis) {
    Var<T> vis = nll_sum(log_probs, n, visual_target, nullptr, 1.0);
    parts.vis_sum = static_cast<double>(vis.value()[0]);
    total = ops::add(total, ops::scale(vis, static_cast<T>(weights.vis)));
  }
  parts.total = total;
  return parts;
}

template <class T>
ObjectiveParts<T> ar_objective(Tape<T>& tape, const Model<T>& model, const FeatureSet& features,
                               std::span<const int> target, std::span<const int> visual_target,
                               const ObjectiveWeights& weights, bool train, Rng* rng) {
  const std::size_t n = target.size();
  if (n == 0) throw Error(ErrorCode::EmptySentence, "empty training caption");
  Var<T> memory = model.encode(tape, features);
  std::vector<int> in{token::kBegin};
  in.insert(in.end(), target.begin(), target.end());
  std::vector<int> out(target.begin(), target.end());
  out.push_back(token::kEnd);
  PackedSequences input = PackedSequences::single(in);
  const bool with_vis = weights.vis > 0.0;
  if (with_vis) {
    if (visual_target.size() != n) throw Error(ErrorCode::ShapeMismatch, "visual target length");
    input.append(std::vector<int>(n, token::kVisual));
  }
  Var<T> log_probs = ops::log_softmax(model.decode_logits(tape, input, memory, train, rng));
  Var<T> nll = nll_sum(log_probs, 0, out, nullptr, 1.0);
  ObjectiveParts<T> parts;
  parts.mlm_sum = static_cast<double>(nll.value()[0]);
  Var<T> total = ops::scale(nll, static_cast<T>(weights.mlm));
  if (with_vis) {
    Var<T> vis = nll_sum(log_probs, n + 1, visual_target, nullptr, 1.0);
    parts.vis_sum = static_cast<double>(vis.value()[0]);
    total = ops::add(total, ops::scale(vis, static_cast<T>(weights.vis)));
  }
  parts.total = total;
  return parts;
}

std::string to_json_line(const EpochLog& log) {
  const nlohmann::json j = {{"epoch", log.epoch},       {"loss_len", log.loss_len},
                            {"loss_mlm", log.loss_mlm}, {"loss_vis", log.loss_vis},
                            {"lr", log.lr},             {"val_bleu4", log.val_bleu4},
                            {"wall_seconds", log.wall_seconds}};
  return j.dump();
}

ModelConfig model_config_for(const Corpus& corpus, ModelConfig base, Variant variant) {
  base.modalities = corpus.modality_specs();
  base.category_count = corpus.category_count.value_or(0);
  base.vocab_size = corpus.vocab.size();
  base.causal = is_causal(variant);
  return base;
}

std::filesystem::path optimizer_path(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".opt");
}

namespace {

class Adam {
 public:
  Adam(const ParameterStore<float>& params, const TrainingConfig& config)
      : config_(config), m_(params.zeros_like()), v_(params.zeros_like()) {}

  void step(ParameterStore<float>& params, const std::vector<Tensor<float>>& grads, double lr) {
    ++t_;
    const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      const bool decay = p.decay && config_.weight_decay > 0.0;
      float* w = p.value.raw();
      const float* g = grads[i].raw();
      float* m = m_[i].raw();
      float* v = v_[i].raw();
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        m[k] = static_cast<float>(b1 * m[k] + (1.0 - b1) * g[k]);
        v[k] = static_cast<float>(b2 * v[k] + (1.0 - b2) * static_cast<double>(g[k]) * g[k]);
        const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.adam_eps);
        double next = w[k] - lr * update;
        if (decay) next -= lr * config_.weight_decay * w[k];
        w[k] = static_cast<float>(next);
      }
      check_finite(p.value, p.name.c_str());
    }
  }

  void save(const std::filesystem::path& path, const ParameterStore<float>& params) const {
    std::vector<NamedTensor> recs;
    recs.push_back({"step", Tensor<float>({1}, static_cast<float>(t_))});
    for (std::size_t i = 0; i < params.size(); ++i) {
      recs.push_back({"m." + params[i].name, m_[i]});
      recs.push_back({"v." + params[i].name, v_[i]});
    }
    write_checkpoint(path, recs);
  }

  void load(const std::filesystem::path& path, const ParameterStore<float>& params) {
    const auto recs = read_checkpoint(path);
    if (recs.size() != 1 + 2 * params.size() || recs[0].name != "step") {
      throw Error(ErrorCode::FormatError, "optimizer state " + path.string() + " does not match");
    }
    t_ = static_cast<std::size_t>(recs[0].value[0]);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& m = recs[1 + 2 * i];
      const auto& v = recs[2 + 2 * i];
      if (m.value.shape() != m_[i].shape() || v.value.shape() != v_[i].shape()) {
        throw Error(ErrorCode::ShapeMismatch, "optimizer state for " + params[i].name);
      }
      m_[i] = m.value;
      v_[i] = v.value;
    }
  }

 private:
  TrainingConfig config_;
  std::vector<Tensor<float>> m_, v_;
  std::size_t t_ = 0;
};

double validation_bleu(const Corpus& corpus, const Model<float>& model, Variant variant,
                       std::size_t limit) {
  const auto val = corpus.split(Split::Val);
  if (val.empty() || limit == 0) return 0.0;
  std::vector<Sentence> hyps;
  std::vector<References> refs;
  DecodeConfig config;
  config.T = 1;
  config.B = 1;
  config.use_template = variant == Variant::Nacf;
  for (std::size_t i = 0; i < val.size() && i < limit; ++i) {
    std::vector<int> tokens;
    if (is_causal(variant)) {
      tokens = ar_decode(model, val[i]->features, 1).tokens;
    } else {
      tokens = Captioner(model).caption(val[i]->features, config).tokens;
    }
    hyps.push_back(corpus.vocab.words_of(tokens));
    refs.push_back(val[i]->captions);
  }
  return bleu(hyps, refs)[3];
}

}  // namespace

TrainResult train(const Corpus& corpus, const TrainOptions& options) {
  const TrainingConfig& tc = options.training;
  tc.validate();
  const Variant variant = options.variant;
  const double lambda =
      variant == Variant::NaB || variant == Variant::ArB ? 0.0 : tc.lambda_vis;

  std::vector<std::size_t> train_videos;
  for (std::size_t v = 0; v < corpus.videos.size(); ++v) {
    if (corpus.videos[v].split == Split::Train) train_videos.push_back(v);
  }
  std::vector<Example> examples;
  for (std::size_t v : train_videos) {
    for (std::size_t c = 0; c < corpus.videos[v].captions.size(); ++c) examples.push_back({v, c});
  }
  if (examples.empty()) throw Error(ErrorCode::EmptyCorpus, "no training captions");

  const ModelConfig mc = model_config_for(corpus, options.model, variant);
  const std::size_t max_len = mc.max_len;
  TrainResult result{Model<float>(mc, options.seed), {}};
  Model<float>& model = result.model;
  Adam adam(model.params(), tc);

  // Per-caption token ids, visual targets and per-video length targets.
  std::vector<std::vector<std::vector<int>>> tokens(corpus.videos.size());
  std::vector<std::vector<std::vector<int>>> visual(corpus.videos.size());
  std::vector<std::vector<double>> length_targets(corpus.videos.size());
  for (std::size_t v : train_videos) {
    const auto& rec = corpus.videos[v];
    for (const auto& cap : rec.captions) {
      if (cap.empty()) throw Error(ErrorCode::EmptySentence, "empty caption in " + rec.video_id);
      if (cap.size() > max_len) {
        throw Error(ErrorCode::LengthExceedsMax,
                    "caption of " + rec.video_id + " longer than max_len; reload with max_len " +
                        std::to_string(max_len));
      }
      tokens[v].push_back(corpus.vocab.encode(cap));
      visual[v].push_back(
          build_visual_target(tokens[v].back(), corpus.vocab, corpus.lexicon, tc.visual_pos));
    }
    length_targets[v] = length_distribution(rec.captions, max_len);
  }

  std::size_t start_epoch = 0;
  if (options.resume) {
    if (!options.checkpoint) throw Error(ErrorCode::InvalidConfig, "resume needs a checkpoint path");
    const CheckpointMeta meta = read_checkpoint_meta(*options.checkpoint);
    if (meta.vocab_hash != corpus.vocab.hash()) {
      throw Error(ErrorCode::InvalidConfig, "checkpoint vocabulary differs from the corpus");
    }
    if (meta.variant != to_string(variant)) {
      throw Error(ErrorCode::InvalidConfig, "checkpoint was trained as variant " + meta.variant);
    }
    assign_records(model.params(), read_checkpoint(*options.checkpoint));
    adam.load(optimizer_path(*options.checkpoint), model.params());
    start_epoch = meta.epoch;
  }

  std::ofstream log_file;
  if (options.log) {
    log_file.open(*options.log, options.resume ? std::ios::app : std::ios::trunc);
    if (!log_file) throw Error(ErrorCode::MissingFile, "cannot write " + options.log->string());
    if (!options.resume) {
      const nlohmann::json header = {{"seed", options.seed}, {"variant", to_string(variant)}};
      log_file << header.dump() << '\n';
    }
  }

  const Rng root(options.seed);
  const std::size_t threads = std::max<std::size_t>(1, options.threads);
  const std::size_t param_count = model.params().size();

  for (std::size_t epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    const double lr = learning_rate(tc, epoch);
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = root.split(kShuffleStream).split(epoch);
    shuffle.shuffle(order.begin(), order.end());

    double len_total = 0.0, mlm_total = 0.0, vis_total = 0.0;
    double mlm_count = 0.0, vis_count = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
      const std::size_t end = std::min(order.size(), begin + tc.batch_size);
      const std::size_t batch = end - begin;

      std::vector<MaskedExample> masks(batch);
      double batch_mlm = 0.0, batch_vis = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t idx = order[begin + b];
        const Example& ex = examples[idx];
        const auto& target = tokens[ex.video][ex.caption];
        if (is_causal(variant)) {
          masks[b].target = target;
          batch_mlm += static_cast<double>(target.size() + 1);
        } else {
          Rng mrng = root.split(kMaskStream).split(epoch).split(idx);
          masks[b] = sample_mask(target, tc.beta_low, tc.beta_high, mrng);
          batch_mlm += static_cast<double>(masks[b].mask_count);
        }
        batch_vis += static_cast<double>(target.size());
      }
      ObjectiveWeights weights;
      weights.len = 1.0 / static_cast<double>(batch);
      weights.mlm = 1.0 / batch_mlm;
      weights.vis = lambda > 0.0 ? lambda / batch_vis : 0.0;

      std::vector<std::vector<Tensor<float>>> per_example(batch);
      std::vector<ObjectiveParts<float>> parts(batch);
      std::vector<std::exception_ptr> failures(threads);
      auto work = [&](std::size_t worker) {
        try {
          for (std::size_t b = worker; b < batch; b += threads) {
            const std::size_t idx = order[begin + b];
            const Example& ex = examples[idx];
            const auto& rec = corpus.videos[ex.video];
            Rng drop = root.split(kDropoutStream).split(epoch).split(idx);
            Tape<float> tape;
            ObjectiveParts<float> p =
                is_causal(variant)
                    ? ar_objective(tape, model, rec.features, masks[b].target,
                                   visual[ex.video][ex.caption], weights, true, &drop)
                    : nacf_objective(tape, model, rec.features, length_targets[ex.video],
                                     masks[b], visual[ex.video][ex.caption], weights, true, &drop);
            tape.backward(p.total);
            per_example[b] = model.params().zeros_like();
            tape.add_parameter_grads(per_example[b]);
            p.total = Var<float>();
            parts[b] = p;
          }
        } catch (...) {
          failures[worker] = std::current_exception();
        }
      };
      if (threads == 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
      }
      for (auto& f : failures) {
        if (!f) continue;
        try {
          std::rethrow_exception(f);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::NonFinite) {
            throw Error(ErrorCode::DivergedLoss, "epoch " + std::to_string(epoch) + ": " + e.what());
          }
          throw;
        }
      }

      std::vector<Tensor<float>> grads = model.params().zeros_like();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < param_count; ++i) {
          float* g = grads[i].raw();
          const float* e = per_example[b][i].raw();
          for (std::size_t k = 0; k < grads[i].size(); ++k) g[k] += e[k];
        }
        len_total += parts[b].len;
        mlm_total += parts[b].mlm_sum;
        vis_total += parts[b].vis_sum;
      }
      mlm_count += batch_mlm;
      if (lambda > 0.0) vis_count += batch_vis;
      try {
        adam.step(model.params(), grads, lr);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::NonFinite) {
          throw Error(ErrorCode::DivergedLoss, "epoch " + std::to_string(epoch) + ": " + e.what());
        }
        throw;
      }
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.loss_len = is_causal(variant) ? 0.0 : len_total / static_cast<double>(examples.size());
    entry.loss_mlm = mlm_total / mlm_count;
    entry.loss_vis = vis_count > 0.0 ? vis_total / vis_count : 0.0;
    entry.lr = lr;
    if (!std::isfinite(entry.loss_len) || !std::isfinite(entry.loss_mlm) ||
        !std::isfinite(entry.loss_vis)) {
      throw Error(ErrorCode::DivergedLoss, "non-finite loss in epoch " + std::to_string(epoch));
    }
    entry.val_bleu4 = validation_bleu(corpus, model, variant, tc.val_videos);
    entry.wall_seconds =
        std::chrono::duration<double>(Clock::now() - epoch_start).count();

    if (options.checkpoint) {
      CheckpointMeta meta{model.config(), corpus.vocab.hash(), epoch + 1, options.seed,
                          std::string(to_string(variant))};
      save_model(*options.checkpoint, model, meta);
      adam.save(optimizer_path(*options.checkpoint), model.params());
    }
    if (log_file.is_open()) log_file << to_json_line(entry) << '\n' << std::flush;
    if (options.on_epoch) options.on_epoch(entry);
    result.log.push_back(entry);
  }
  return result;
}

#define NACF_INSTANTIATE_LOSSES(T)                                                              \
  template Var<T> loss_len(const Var<T>&, std::span<const double>);                             \
  template Var<T> loss_mlm(const Var<T>&, std::size_t, const MaskedExample&);                   \
  template Var<T> loss_vis(const Var<T>&, std::size_t, std::span<const int>);                   \
  template ObjectiveParts<T> nacf_objective(Tape<T>&, const Model<T>&, const FeatureSet&,       \
                                            std::span<const double>, const MaskedExample&,      \
                                            std::span<const int>, const ObjectiveWeights&, bool, \
                                            Rng*);                                              \
  template ObjectiveParts<T> ar_objective(Tape<T>&, const Model<T>&, const FeatureSet&,         \
                                          std::span<const int>, std::span<const int>,           \
                                          const ObjectiveWeights&, bool, Rng*);

NACF_INSTANTIATE_LOSSES(float)
NACF_INSTANTIATE_LOSSES(double)

#undef NACF_INSTANTIATE_LOSSES

}  // namespace nacf
