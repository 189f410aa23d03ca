#include "nacf/decoding.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "nacf/corpus.hpp"

namespace nacf {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

bool is_word(int id) { return id >= token::kReservedCount; }

struct RowPick {
  int token = token::kPad;
  double prob = 0.0;
};

/// Softmax over the full row; argmax restricted to real words (and
/// optionally [mask]); ties resolve to the lowest id.
RowPick pick(std::span<const float> logits, bool allow_mask) {
  double top = -std::numeric_limits<double>::infinity();
  for (float v : logits) top = std::max(top, static_cast<double>(v));
  double denom = 0.0;
  for (float v : logits) denom += std::exp(static_cast<double>(v) - top);
  RowPick best;
  double best_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const int id = static_cast<int>(i);
    if (!(is_word(id) || (allow_mask && id == token::kMask))) continue;
    if (logits[i] > best_logit) {
      best_logit = logits[i];
      best.token = id;
    }
  }
  best.prob = std::exp(best_logit - top) / denom;
  return best;
}

double token_prob(std::span<const float> logits, int id) {
  double top = -std::numeric_limits<double>::infinity();
  for (float v : logits) top = std::max(top, static_cast<double>(v));
  double denom = 0.0;
  for (float v : logits) denom += std::exp(static_cast<double>(v) - top);
  return std::exp(static_cast<double>(logits[static_cast<std::size_t>(id)]) - top) / denom;
}

std::vector<double> log_probs(std::span<const float> logits) {
  double top = -std::numeric_limits<double>::infinity();
  for (float v : logits) top = std::max(top, static_cast<double>(v));
  double denom = 0.0;
  for (float v : logits) denom += std::exp(static_cast<double>(v) - top);
  const double log_denom = std::log(denom) + top;
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - log_denom;
  return out;
}

/// One batched decoder call; returns logits [total rows x vocab].
Tensor<float> run_decoder(const Model<float>& model, Tape<float>& tape, const Var<float>& memory,
                          const std::vector<std::vector<int>>& inputs) {
  PackedSequences packed;
  for (const auto& seq : inputs) packed.append(seq);
  return model.decode_logits(tape, packed, memory).value();
}

void snapshot(Candidate& c, const char* stage, std::size_t iteration, bool enabled) {
  for (int id : c.tokens) {
    if (!is_word(id)) continue;
    auto it = std::lower_bound(c.touched.begin(), c.touched.end(), id);
    if (it == c.touched.end() || *it != id) c.touched.insert(it, id);
  }
  if (!enabled) return;
  c.trace.push_back({stage, iteration, c.tokens, c.confidence});
}

bool better(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.length != b.length) return a.length < b.length;
  return a.tokens < b.tokens;
}

}  // namespace

std::string_view to_string(Algorithm a) noexcept {
  switch (a) {
    case Algorithm::MaskPredict: return "mp";
    case Algorithm::EasyFirst: return "ef";
    case Algorithm::LeftToRight: return "l2r";
  }
  return "mp";
}

Algorithm parse_algorithm(std::string_view name) {
  if (name == "mp") return Algorithm::MaskPredict;
  if (name == "ef") return Algorithm::EasyFirst;
  if (name == "l2r") return Algorithm::LeftToRight;
  throw Error(ErrorCode::InvalidConfig, "unknown algorithm '" + std::string(name) + "'");
}

void DecodeConfig::validate() const {
  if (T < 1) throw Error(ErrorCode::InvalidConfig, "T must be >= 1");
  if (q < 1) throw Error(ErrorCode::InvalidConfig, "q must be >= 1");
  if (B < 1) throw Error(ErrorCode::InvalidConfig, "B must be >= 1");
  if (fixed_T && *fixed_T < 1) throw Error(ErrorCode::InvalidConfig, "fixed_T must be >= 1");
}

std::size_t mask_count(std::size_t N, std::size_t T, std::size_t t) {
  if (T == 0 || t < 1 || t > T) {
    throw Error(ErrorCode::InvalidConfig, "iteration " + std::to_string(t) + " outside [1, " +
                                              std::to_string(T) + "]");
  }
  return std::max<std::size_t>(N * (T - t + 1) / T, 1);
}

std::size_t iteration_count(std::size_t N, std::size_t u, std::size_t q) {
  if (q == 0 || u > N) throw Error(ErrorCode::InvalidConfig, "need q >= 1 and u <= N");
  return (N - u + q - 1) / q;
}

std::size_t commit_iterations(const DecodeConfig& config, std::size_t N, std::size_t u) {
  if (config.fixed_T) return std::min(*config.fixed_T, N - u);
  return iteration_count(N, u, config.q);
}

std::size_t commit_size(const DecodeConfig& config, std::size_t N, std::size_t u, std::size_t t) {
  const std::size_t iters = commit_iterations(config, N, u);
  if (t < 1 || t > iters) return 0;
  std::size_t remaining = N - u;
  std::size_t size = 0;
  for (std::size_t s = 1; s <= t; ++s) {
    size = config.fixed_T ? (remaining + (iters - s)) / (iters - s + 1)
                          : std::min(config.q, remaining);
    remaining -= size;
  }
  return size;
}

std::size_t expected_decoder_passes(const DecodeConfig& config, std::span<const std::size_t> lengths,
                                    std::span<const std::size_t> observed) {
  const std::size_t template_pass = config.use_template ? 1 : 0;
  if (config.algorithm == Algorithm::MaskPredict) return template_pass + config.T;
  std::size_t iters = 0;
  bool any_visual = false;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const std::size_t u = config.use_template ? observed[i] : 0;
    iters = std::max(iters, commit_iterations(config, lengths[i], u));
    any_visual = any_visual || u > 0;
  }
  const std::size_t refine = config.use_template && config.refine_visual && any_visual ? 1 : 0;
  return template_pass + iters + refine;
}

std::vector<std::size_t> CaptionResult::ranking() const {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return better(candidates[a], candidates[b]);
  });
  return order;
}

std::vector<std::size_t> length_beam(std::span<const double> L, std::size_t B) {
  std::vector<std::size_t> lengths;
  for (std::size_t len = 4; len <= L.size(); ++len) lengths.push_back(len);
  if (lengths.empty()) {
    throw Error(ErrorCode::LengthOutOfRange, "length distribution shorter than 4");
  }
  std::stable_sort(lengths.begin(), lengths.end(),
                   [&](std::size_t a, std::size_t b) { return L[a - 1] > L[b - 1]; });
  if (lengths.size() > B) lengths.resize(B);
  return lengths;
}

double candidate_score(std::span<const double> confidence, std::span<const double> teacher) {
  if (confidence.empty()) throw Error(ErrorCode::EmptySentence, "candidate without tokens");
  double s = 0.0;
  for (double c : confidence) s += std::log(c);
  if (teacher.empty()) return s / static_cast<double>(confidence.size());
  if (teacher.size() != confidence.size()) {
    throw Error(ErrorCode::ShapeMismatch, "teacher scores do not match candidate length");
  }
  for (double z : teacher) s += std::log(z);
  return s / (2.0 * static_cast<double>(confidence.size()));
}

std::size_t select_best(const std::vector<Candidate>& candidates) {
  if (candidates.empty()) throw Error(ErrorCode::EmptyInput, "no candidates to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (better(candidates[i], candidates[best])) best = i;
  }
  return best;
}

std::vector<std::vector<double>> teacher_scores(const Model<float>& teacher, Tape<float>& tape,
                                                const Var<float>& memory,
                                                const std::vector<std::vector<int>>& sentences) {
  if (!teacher.config().causal) {
    throw Error(ErrorCode::InvalidConfig, "teacher rescoring needs a causal model");
  }
  std::vector<std::vector<int>> inputs;
  for (const auto& s : sentences) {
    if (s.empty()) throw Error(ErrorCode::EmptySentence, "cannot score an empty sentence");
    std::vector<int> in{token::kBegin};
    in.insert(in.end(), s.begin(), s.end() - 1);
    inputs.push_back(std::move(in));
  }
  const Tensor<float> logits = run_decoder(teacher, tape, memory, inputs);
  std::vector<std::vector<double>> out;
  std::size_t row = 0;
  for (const auto& s : sentences) {
    std::vector<double> z;
    for (int id : s) z.push_back(token_prob(logits.row(row++), id));
    out.push_back(std::move(z));
  }
  return out;
}

std::vector<double> teacher_scores_sequential(const Model<float>& teacher, Tape<float>& tape,
                                              const Var<float>& memory,
                                              std::span<const int> sentence) {
  std::vector<double> z;
  std::vector<int> prefix{token::kBegin};
  for (int id : sentence) {
    const Tensor<float> logits = run_decoder(teacher, tape, memory, {prefix});
    z.push_back(token_prob(logits.row(prefix.size() - 1), id));
    prefix.push_back(id);
  }
  return z;
}

Captioner::Captioner(const Model<float>& model, const Model<float>* teacher)
    : model_(model), teacher_(teacher) {
  if (model_.config().causal) {
    throw Error(ErrorCode::InvalidConfig, "the captioner needs a non-causal model");
  }
  if (teacher_ && !teacher_->config().causal) {
    throw Error(ErrorCode::InvalidConfig, "the teacher must be a causal model");
  }
}

std::vector<Candidate> Captioner::generate_template(Tape<float>& tape, const Var<float>& memory,
                                                    std::span<const std::size_t> lengths) const {
  std::vector<std::vector<int>> inputs;
  for (std::size_t len : lengths) {
    if (len < 1 || len > model_.config().max_len) {
      throw Error(ErrorCode::LengthOutOfRange, "length " + std::to_string(len));
    }
    inputs.emplace_back(len, token::kVisual);
  }
  const Tensor<float> logits = run_decoder(model_, tape, memory, inputs);
  std::vector<Candidate> out;
  std::size_t row = 0;
  for (std::size_t len : lengths) {
    Candidate c;
    c.length = len;
    c.tokens.assign(len, token::kMask);
    c.confidence.assign(len, 0.0);
    for (std::size_t n = 0; n < len; ++n) {
      const RowPick p = pick(logits.row(row++), true);
      c.tokens[n] = p.token;
      c.confidence[n] = p.prob;
      if (p.token != token::kMask) c.visual_positions.push_back(n);
    }
    c.template_tokens = c.tokens;
    out.push_back(std::move(c));
  }
  return out;
}

std::size_t Captioner::refine(Tape<float>& tape, const Var<float>& memory,
                              std::vector<Candidate>& candidates, const DecodeConfig& config) const {
  const bool trace = config.record_trace;
  std::size_t passes = 0;
  // unobserved[c][n] != 0 marks I_t.
  std::vector<std::vector<std::uint8_t>> unobserved;
  for (auto& c : candidates) {
    std::vector<std::uint8_t> open(c.length, 0);
    for (std::size_t n = 0; n < c.length; ++n) {
      if (c.tokens[n] == token::kMask) {
        open[n] = 1;
        c.confidence[n] = 0.0;
      }
    }
    unobserved.push_back(std::move(open));
  }

  if (config.algorithm == Algorithm::MaskPredict) {
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      auto& c = candidates[i];
      if (std::find(unobserved[i].begin(), unobserved[i].end(), 1) == unobserved[i].end()) {
        // Full-visual template: still re-predict the least confident word.
        std::size_t worst = 0;
        for (std::size_t n = 1; n < c.length; ++n) {
          if (c.confidence[n] <= c.confidence[worst]) worst = n;
        }
        unobserved[i][worst] = 1;
        c.tokens[worst] = token::kMask;
        snapshot(c, "mask", 0, trace);
      }
    }
    for (std::size_t t = 1; t <= config.T; ++t) {
      std::vector<std::vector<int>> inputs;
      for (const auto& c : candidates) inputs.push_back(c.tokens);
      const Tensor<float> logits = run_decoder(model_, tape, memory, inputs);
      ++passes;
      std::size_t row = 0;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        auto& c = candidates[i];
        for (std::size_t n = 0; n < c.length; ++n, ++row) {
          if (!unobserved[i][n]) continue;
          const RowPick p = pick(logits.row(row), false);
          c.tokens[n] = p.token;
          c.confidence[n] = p.prob;
          unobserved[i][n] = 0;
        }
        c.iterations = t;
        snapshot(c, "predict", t, trace);
        if (t == config.T) continue;
        const std::size_t m = mask_count(c.length, config.T, t + 1);
        std::vector<std::size_t> order(c.length);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
          return c.confidence[a] > c.confidence[b];
        });
        for (std::size_t k = c.length - m; k < c.length; ++k) {
          unobserved[i][order[k]] = 1;
          c.tokens[order[k]] = token::kMask;
        }
        snapshot(c, "mask", t, trace);
      }
    }
    return passes;
  }

  std::vector<std::size_t> iters, observed;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto open = static_cast<std::size_t>(
        std::count(unobserved[i].begin(), unobserved[i].end(), std::uint8_t{1}));
    observed.push_back(candidates[i].length - open);
    iters.push_back(commit_iterations(config, candidates[i].length, observed.back()));
  }
  const std::size_t rounds = iters.empty() ? 0 : *std::max_element(iters.begin(), iters.end());
  for (std::size_t t = 1; t <= rounds; ++t) {
    std::vector<std::size_t> active;
    std::vector<std::vector<int>> inputs;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (t <= iters[i]) {
        active.push_back(i);
        inputs.push_back(candidates[i].tokens);
      }
    }
    const Tensor<float> logits = run_decoder(model_, tape, memory, inputs);
    ++passes;
    std::size_t row = 0;
    for (std::size_t i : active) {
      auto& c = candidates[i];
      std::vector<std::pair<std::size_t, RowPick>> preds;
      for (std::size_t n = 0; n < c.length; ++n, ++row) {
        if (unobserved[i][n]) preds.emplace_back(n, pick(logits.row(row), false));
      }
      if (config.algorithm == Algorithm::EasyFirst) {
        std::stable_sort(preds.begin(), preds.end(),
                         [](const auto& a, const auto& b) { return a.second.prob > b.second.prob; });
      }
      const std::size_t k = commit_size(config, c.length, observed[i], t);
      for (std::size_t j = 0; j < k && j < preds.size(); ++j) {
        const auto& [n, p] = preds[j];
        c.tokens[n] = p.token;
        c.confidence[n] = p.prob;
        unobserved[i][n] = 0;
      }
      c.iterations = t;
      snapshot(c, "predict", t, trace);
    }
  }

  if (config.use_template && config.refine_visual) {
    std::vector<std::size_t> active;
    std::vector<std::vector<int>> inputs;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (candidates[i].visual_positions.empty()) continue;
      active.push_back(i);
      std::vector<int> in = candidates[i].tokens;
      for (std::size_t n : candidates[i].visual_positions) in[n] = token::kMask;
      inputs.push_back(std::move(in));
    }
    if (!active.empty()) {
      const Tensor<float> logits = run_decoder(model_, tape, memory, inputs);
      ++passes;
      std::size_t base = 0;
      for (std::size_t i : active) {
        auto& c = candidates[i];
        for (std::size_t n : c.visual_positions) {
          const RowPick p = pick(logits.row(base + n), false);
          c.tokens[n] = p.token;
          c.confidence[n] = p.prob;
        }
        base += c.length;
        snapshot(c, "refine", c.iterations + 1, trace);
      }
    }
  }
  return passes;
}

CaptionResult Captioner::caption(const FeatureSet& features, const DecodeConfig& config) const {
  return run(features, std::nullopt, config);
}

CaptionResult Captioner::caption_lengths(const FeatureSet& features,
                                         std::span<const std::size_t> lengths,
                                         const DecodeConfig& config) const {
  return run(features, std::vector<std::size_t>(lengths.begin(), lengths.end()), config);
}

CaptionResult Captioner::run(const FeatureSet& features,
                             const std::optional<std::vector<std::size_t>>& forced,
                             const DecodeConfig& config) const {
  config.validate();
  if (config.use_rescoring && !teacher_) {
    throw Error(ErrorCode::InvalidConfig, "rescoring requested without a teacher model");
  }
  CaptionResult result;
  const auto start = Clock::now();
  Tape<float> tape(false);
  const Var<float> memory = model_.encode(tape, features);
  std::optional<Var<float>> teacher_memory;
  if (config.use_rescoring) teacher_memory = teacher_->encode(tape, features);
  result.encode_ms = elapsed_ms(start);

  const auto decode_start = Clock::now();
  std::vector<std::size_t> lengths;
  if (forced) {
    lengths = *forced;
  } else {
    const Tensor<float>& L = model_.predict_length(tape, memory).value();
    std::vector<double> probs(L.data().begin(), L.data().end());
    lengths = length_beam(probs, config.B);
  }
  if (lengths.empty()) throw Error(ErrorCode::EmptyInput, "no candidate lengths");

  if (config.use_template) {
    result.candidates = generate_template(tape, memory, lengths);
    result.decoder_passes = 1;
    for (auto& c : result.candidates) snapshot(c, "template", 0, config.record_trace);
  } else {
    for (std::size_t len : lengths) {
      if (len < 1 || len > model_.config().max_len) {
        throw Error(ErrorCode::LengthOutOfRange, "length " + std::to_string(len));
      }
      Candidate c;
      c.length = len;
      c.tokens.assign(len, token::kMask);
      c.confidence.assign(len, 0.0);
      c.template_tokens = c.tokens;
      result.candidates.push_back(std::move(c));
    }
  }
  result.decoder_passes += refine(tape, memory, result.candidates, config);

  if (config.use_rescoring) {
    std::vector<std::vector<int>> sentences;
    for (const auto& c : result.candidates) sentences.push_back(c.tokens);
    auto z = teacher_scores(*teacher_, tape, *teacher_memory, sentences);
    result.teacher_passes = 1;
    for (std::size_t i = 0; i < z.size(); ++i) result.candidates[i].teacher = std::move(z[i]);
  }
  for (auto& c : result.candidates) c.score = candidate_score(c.confidence, c.teacher);
  result.best = select_best(result.candidates);
  result.tokens = result.candidates[result.best].tokens;
  result.decode_ms = elapsed_ms(decode_start);
  return result;
}

ArResult ar_decode(const Model<float>& model, const FeatureSet& features, std::size_t beam_size,
                   std::optional<std::size_t> forced_length) {
  if (!model.config().causal) throw Error(ErrorCode::InvalidConfig, "ar_decode needs a causal model");
  if (beam_size < 1) throw Error(ErrorCode::InvalidConfig, "beam size must be >= 1");
  const std::size_t max_tokens = forced_length.value_or(model.config().max_len);
  if (max_tokens < 1 || max_tokens > model.config().max_len) {
    throw Error(ErrorCode::LengthOutOfRange, "length " + std::to_string(max_tokens));
  }
  ArResult result;
  const auto start = Clock::now();
  Tape<float> tape(false);
  const Var<float> memory = model.encode(tape, features);
  result.encode_ms = elapsed_ms(start);
  const auto decode_start = Clock::now();

  struct Hyp {
    std::vector<int> tokens;
    double logp = 0.0;
    double mean = 0.0;
  };
  std::vector<Hyp> alive{Hyp{}}, finished;
  const int vocab = static_cast<int>(model.config().vocab_size);
  while (!alive.empty() && finished.size() < beam_size) {
    std::vector<std::vector<int>> inputs;
    for (const auto& h : alive) {
      std::vector<int> in{token::kBegin};
      in.insert(in.end(), h.tokens.begin(), h.tokens.end());
      inputs.push_back(std::move(in));
    }
    const Tensor<float> logits = run_decoder(model, tape, memory, inputs);
    ++result.passes;

    struct Expansion {
      std::size_t hyp;
      int token;
      double logp;
    };
    std::vector<Expansion> options;
    std::size_t row = 0;
    for (std::size_t h = 0; h < alive.size(); ++h) {
      row += inputs[h].size();
      const auto lp = log_probs(logits.row(row - 1));
      for (int id = 0; id < vocab; ++id) {
        const bool allowed = is_word(id) || (id == token::kEnd && !forced_length);
        if (allowed) options.push_back({h, id, alive[h].logp + lp[static_cast<std::size_t>(id)]});
      }
    }
    std::stable_sort(options.begin(), options.end(),
                     [](const Expansion& a, const Expansion& b) { return a.logp > b.logp; });
    const std::size_t keep = std::min(options.size(), beam_size - finished.size());
    std::vector<Hyp> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const Expansion& e = options[i];
      Hyp h = alive[e.hyp];
      h.logp = e.logp;
      if (e.token == token::kEnd) {
        h.mean = h.logp / static_cast<double>(h.tokens.size() + 1);
        finished.push_back(std::move(h));
        continue;
      }
      h.tokens.push_back(e.token);
      if (h.tokens.size() >= max_tokens) {
        h.mean = h.logp / static_cast<double>(h.tokens.size());
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i) {
    const Hyp& a = finished[i];
    const Hyp& b = finished[best];
    if (a.mean > b.mean || (a.mean == b.mean && (a.tokens.size() < b.tokens.size() ||
                                                  (a.tokens.size() == b.tokens.size() &&
                                                   a.tokens < b.tokens)))) {
      best = i;
    }
  }
  result.tokens = finished[best].tokens;
  result.score = finished[best].mean;
  for (const auto& h : finished) result.hypotheses.push_back(h.tokens);
  result.decode_ms = elapsed_ms(decode_start);
  return result;
}

std::string render_trace(const Candidate& candidate, const Vocabulary& vocab) {
  std::ostringstream os;
  for (const auto& step : candidate.trace) {
    os << "t=" << step.iteration << ' ' << std::left << std::setw(8) << step.stage << ':';
    for (std::size_t n = 0; n < step.tokens.size(); ++n) {
      os << ' ' << vocab.word(step.tokens[n]);
      if (step.tokens[n] != token::kMask) {
        os << '(' << std::fixed << std::setprecision(2) << step.confidence[n] << ')';
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace nacf
