#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nacf/model_io.hpp"
#include "nacf/synth.hpp"
#include "nacf/training.hpp"
#include "toy.hpp"

namespace nacf {
namespace {

namespace fs = std::filesystem;

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::FormatError;
}

struct Tagged {
  PosLexicon lexicon;
  Vocabulary vocab;
};

Tagged tagged_words() {
  Tagged t;
  const std::vector<std::pair<std::string, Pos>> words = {
      {"a", Pos::Determiner}, {"the", Pos::Determiner}, {"man", Pos::Noun},
      {"is", Pos::Verb},      {"cutting", Pos::Verb},   {"bread", Pos::Noun},
      {"in", Pos::Other},     {"kitchen", Pos::Noun},   {"quickly", Pos::Adverb}};
  std::vector<std::string> list;
  for (const auto& [w, p] : words) {
    t.lexicon.add(w, p);
    list.push_back(w);
  }
  t.vocab = Vocabulary(list);
  return t;
}

Sentence words(const std::string& text) {
  Sentence s;
  std::istringstream in(text);
  for (std::string w; in >> w;) s.push_back(w);
  return s;
}

TEST(Schedule, LearningRateDecayAndFloor) {
  TrainingConfig c;
  EXPECT_DOUBLE_EQ(learning_rate(c, 0), 5e-4);
  EXPECT_NEAR(learning_rate(c, 1), 4.5e-4, 1e-15);
  EXPECT_GT(learning_rate(c, 21), 5e-5);
  EXPECT_DOUBLE_EQ(learning_rate(c, 22), 5e-5);
  EXPECT_DOUBLE_EQ(learning_rate(c, 40), 5e-5);
}

TEST(Config, RejectsBadRanges) {
  TrainingConfig c;
  c.beta_high = 9.0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::InvalidConfig);
  c = TrainingConfig{};
  c.beta_low = 0.6;
  c.beta_high = 0.4;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::InvalidConfig);
  c = TrainingConfig{};
  c.lambda_vis = -0.1;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(parse_variant("ar-b-vis"), Variant::ArBVis);
  EXPECT_EQ(code_of([] { parse_variant("bogus"); }), ErrorCode::InvalidConfig);
}

TEST(Masking, ForcedRatiosAndClampFloor) {
  const std::vector<int> y{5, 6, 7, 8, 9, 10, 11};
  Rng rng(1);
  auto all = sample_mask(y, 1.0, 1.0, rng);
  EXPECT_EQ(all.mask_count, y.size());
  for (int t : all.input) EXPECT_EQ(t, token::kMask);
  auto one = sample_mask(y, 0.0, 0.0, rng);
  EXPECT_EQ(one.mask_count, 1u);
  std::size_t masked = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (one.masked[i]) {
      ++masked;
      EXPECT_EQ(one.input[i], token::kMask);
    } else {
      EXPECT_EQ(one.input[i], y[i]);
    }
  }
  EXPECT_EQ(masked, 1u);
  EXPECT_EQ(code_of([&] { sample_mask(std::vector<int>{}, 0.0, 1.0, rng); }), ErrorCode::EmptySentence);
}

TEST(Masking, CountIsUniformOverOneToN) {
  // Chi-square goodness of fit against uniform {1..10}; 21.67 is the 0.99
  // quantile with 9 degrees of freedom.
  const std::vector<int> y(10, 7);
  Rng rng(2);
  std::vector<double> hist(11, 0.0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto ex = sample_mask(y, 0.0, 1.0, rng);
    ASSERT_GE(ex.mask_count, 1u);
    ASSERT_LE(ex.mask_count, 10u);
    hist[ex.mask_count] += 1.0;
  }
  double chi2 = 0.0;
  for (int k = 1; k <= 10; ++k) {
    const double expected = draws / 10.0;
    chi2 += (hist[k] - expected) * (hist[k] - expected) / expected;
  }
  EXPECT_LT(chi2, 21.67);
}

TEST(VisualTarget, KeepsNounsAndVerbsExceptCopulas) {
  const Tagged t = tagged_words();
  const std::vector<Pos> nv{Pos::Noun, Pos::Verb};
  const auto ids = t.vocab.encode(words("a man is cutting a bread"));
  const auto vis = build_visual_target(ids, t.vocab, t.lexicon, nv);
  const std::vector<int> expected{token::kMask, t.vocab.id("man"), token::kMask,
                                  t.vocab.id("cutting"), token::kMask, t.vocab.id("bread")};
  EXPECT_EQ(vis, expected);

  const auto func = build_visual_target(t.vocab.encode(words("a the in")), t.vocab, t.lexicon, nv);
  for (int v : func) EXPECT_EQ(v, token::kMask);

  const std::vector<Pos> nouns{Pos::Noun};
  const auto only = build_visual_target(ids, t.vocab, t.lexicon, nouns);
  EXPECT_EQ(only[3], token::kMask);
  EXPECT_EQ(only[1], t.vocab.id("man"));
}

TEST(VisualTarget, UntaggedWordIsAnError) {
  Tagged t = tagged_words();
  PosLexicon partial;
  partial.add("a", Pos::Determiner);
  const std::vector<Pos> nv{Pos::Noun, Pos::Verb};
  EXPECT_EQ(code_of([&] {
              build_visual_target(t.vocab.encode(words("a man")), t.vocab, partial, nv);
            }),
            ErrorCode::UnknownToken);
}

TEST(LengthLoss, KlProperties) {
  const std::size_t n = 20;
  std::vector<double> delta(n, 0.0), uniform(n, 1.0 / n);
  delta[4] = 1.0;
  EXPECT_NEAR(kl_divergence(delta, uniform), std::log(20.0), 1e-12);
  EXPECT_NEAR(kl_divergence(uniform, uniform), 0.0, 1e-15);

  Rng rng(3);
  auto random_dist = [&] {
    std::vector<double> d(n);
    double s = 0.0;
    for (auto& v : d) s += (v = rng.uniform() < 0.3 ? 0.0 : rng.uniform());
    if (s == 0.0) {
      d[0] = 1.0;
      s = 1.0;
    }
    for (auto& v : d) v /= s;
    return d;
  };
  for (int i = 0; i < 1000; ++i) {
    auto p = random_dist();
    auto q = random_dist();
    for (auto& v : q) v = 0.999 * v + 0.001 / n;
    EXPECT_GE(kl_divergence(p, q), -1e-9);
  }
  std::vector<double> bad(n, 0.1);
  EXPECT_EQ(code_of([&] { kl_divergence(bad, uniform); }), ErrorCode::NotADistribution);
}

TEST(LengthLoss, TapeLossMatchesClosedForms) {
  const std::size_t n = 20;
  Tape<double> tape;
  std::vector<double> delta(n, 0.0);
  delta[7] = 1.0;
  auto uniform_logits = tape.variable(Tensor<double>({n}));
  EXPECT_NEAR(loss_len(uniform_logits, delta).value()[0], std::log(20.0), 1e-12);

  std::vector<double> target(n);
  Tensor<double> logits({n});
  Rng rng(4);
  double s = 0.0;
  for (auto& v : target) s += (v = rng.uniform() + 0.01);
  for (std::size_t j = 0; j < n; ++j) {
    target[j] /= s;
    logits[j] = std::log(target[j]) + 3.0;
  }
  EXPECT_NEAR(loss_len(tape.variable(logits), target).value()[0], 0.0, 1e-9);
  EXPECT_EQ(code_of([&] { loss_len(uniform_logits, std::vector<double>(n, 0.2)); }),
            ErrorCode::NotADistribution);
}

TEST(TokenLosses, UniformModelGivesLogVocab) {
  Tape<double> tape;
  auto logits = tape.variable(Tensor<double>({7, 100}));
  MaskedExample ex;
  ex.target = {10, 11, 12, 13, 14, 15, 16};
  ex.masked = {1, 0, 1, 0, 0, 1, 0};
  ex.mask_count = 3;
  EXPECT_NEAR(loss_mlm(logits, 0, ex).value()[0], std::log(100.0), 1e-12);
  const std::vector<int> vis{token::kMask, 11, token::kMask, 13, token::kMask, token::kMask, 16};
  EXPECT_NEAR(loss_vis(logits, 0, vis).value()[0], std::log(100.0), 1e-12);
  const std::vector<int> all_mask(7, token::kMask);
  const double degenerate = loss_vis(logits, 0, all_mask).value()[0];
  EXPECT_TRUE(std::isfinite(degenerate));
  EXPECT_GT(degenerate, 0.0);
}

TEST(TokenLosses, PerfectModelAndObservedPositions) {
  Tape<double> tape;
  MaskedExample ex;
  ex.target = {5, 6, 7, 8};
  ex.masked = {0, 1, 0, 1};
  ex.mask_count = 2;
  Tensor<double> confident({4, 10}, -60.0);
  for (std::size_t i = 0; i < 4; ++i) confident.at(i, static_cast<std::size_t>(ex.target[i])) = 60.0;
  EXPECT_NEAR(loss_mlm(tape.variable(confident), 0, ex).value()[0], 0.0, 1e-12);

  Rng rng(5);
  auto logits = tape.variable(testing::random_tensor({4, 10}, rng));
  const double base = loss_mlm(logits, 0, ex).value()[0];
  MaskedExample changed = ex;
  changed.target[0] = 9;
  changed.target[2] = 3;
  EXPECT_EQ(loss_mlm(logits, 0, changed).value()[0], base);

  changed.target[1] = 10;
  EXPECT_EQ(code_of([&] { loss_mlm(logits, 0, changed); }), ErrorCode::IndexOutOfVocab);
}

TEST(Objective, LambdaZeroIsLengthPlusMaskedLoss) {
  const ModelConfig c = testing::toy_config();
  Model<double> model(c, 6);
  const auto ex = testing::toy_example(c, 7);
  Tape<double> tape(false);
  auto parts = nacf_objective(tape, model, ex.features, ex.length_target, ex.masked, ex.visual,
                              ObjectiveWeights{1.0, 1.0 / static_cast<double>(ex.masked.mask_count), 0.0},
                              false, nullptr);
  EXPECT_NEAR(parts.total.value()[0],
              parts.len + parts.mlm_sum / static_cast<double>(ex.masked.mask_count), 1e-12);
  EXPECT_EQ(parts.vis_sum, 0.0);
  EXPECT_GE(parts.len, -1e-9);
  EXPECT_GT(parts.mlm_sum, 0.0);
}

TEST(Objective, GradientIsSumOfComponentGradients) {
  const ModelConfig c = testing::toy_config();
  Model<double> model(c, 8);
  const auto ex = testing::toy_example(c, 9);
  auto grads_for = [&](ObjectiveWeights w) {
    Tape<double> tape;
    auto parts = nacf_objective(tape, model, ex.features, ex.length_target, ex.masked, ex.visual, w,
                                false, nullptr);
    tape.backward(parts.total);
    auto g = model.params().zeros_like();
    tape.add_parameter_grads(g);
    return g;
  };
  // A tiny visual weight keeps the visual pass enabled in every call.
  const double eps = 1e-300;
  const auto len = grads_for({1.0, 0.0, eps});
  const auto mlm = grads_for({0.0, 1.0, eps});
  const auto vis = grads_for({0.0, 0.0, 0.8});
  const auto total = grads_for({1.0, 1.0, 0.8});
  double worst = 0.0;
  for (std::size_t i = 0; i < total.size(); ++i) {
    for (std::size_t j = 0; j < total[i].size(); ++j) {
      worst = std::max(worst, testing::relative_error(total[i][j], len[i][j] + mlm[i][j] + vis[i][j]));
    }
  }
  EXPECT_LT(worst, 1e-8);
}

// Small corpus and model shared by the trainer tests.
struct TrainerFixture : ::testing::Test {
  static const SynthResult& data() {
    static const SynthResult result = [] {
      SynthSpec spec;
      spec.train_videos = 24;
      spec.val_videos = 4;
      spec.test_videos = 4;
      spec.captions_min = 2;
      spec.captions_max = 3;
      spec.appearance_dim = 40;
      spec.motion_dim = 20;
      return synth_generate(spec, 11);
    }();
    return result;
  }
  static TrainOptions options(Variant variant, std::size_t epochs) {
    TrainOptions o;
    o.model.d_model = 16;
    o.model.d_hidden = 32;
    o.model.heads = 2;
    o.model.dropout = 0.1;
    o.training.epochs = epochs;
    o.training.batch_size = 8;
    o.training.val_videos = 2;
    o.variant = variant;
    o.seed = 5;
    return o;
  }
  static void expect_same_params(const Model<float>& a, const Model<float>& b) {
    ASSERT_EQ(a.params().size(), b.params().size());
    for (std::size_t i = 0; i < a.params().size(); ++i) {
      EXPECT_EQ(a.params()[i].value, b.params()[i].value) << a.params()[i].name;
    }
  }
  fs::path tmp(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("nacf_training_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
  }
};

TEST_F(TrainerFixture, DeterministicAcrossRunsAndThreadCounts) {
  auto o = options(Variant::Nacf, 2);
  const auto a = train(data().corpus, o);
  const auto b = train(data().corpus, o);
  expect_same_params(a.model, b.model);
  o.threads = 3;
  const auto c = train(data().corpus, o);
  expect_same_params(a.model, c.model);
  ASSERT_EQ(a.log.size(), 2u);
  EXPECT_EQ(a.log[0].loss_mlm, c.log[0].loss_mlm);
  EXPECT_DOUBLE_EQ(a.log[1].lr, 4.5e-4);
}

TEST_F(TrainerFixture, LossDecreasesOverFirstEpochs) {
  auto o = options(Variant::Nacf, 5);
  o.training.val_videos = 0;
  const auto r = train(data().corpus, o);
  ASSERT_EQ(r.log.size(), 5u);
  for (std::size_t e = 1; e < r.log.size(); ++e) {
    const auto total = [&](const EpochLog& l) { return l.loss_len + l.loss_mlm + 0.8 * l.loss_vis; };
    EXPECT_LT(total(r.log[e]), total(r.log[e - 1])) << "epoch " << e;
  }
  for (const auto& l : r.log) {
    EXPECT_GE(l.loss_len, 0.0);
    EXPECT_GT(l.loss_mlm, 0.0);
    EXPECT_GT(l.loss_vis, 0.0);
  }
}

TEST_F(TrainerFixture, VariantsSelectTheirObjectives) {
  auto o = options(Variant::NaB, 1);
  const auto nab = train(data().corpus, o);
  EXPECT_EQ(nab.log[0].loss_vis, 0.0);
  EXPECT_FALSE(nab.model.config().causal);

  o.variant = Variant::ArB;
  const auto ar = train(data().corpus, o);
  EXPECT_TRUE(ar.model.config().causal);
  EXPECT_EQ(ar.log[0].loss_vis, 0.0);
  EXPECT_EQ(ar.log[0].loss_len, 0.0);

  o.variant = Variant::ArBVis;
  const auto arv = train(data().corpus, o);
  EXPECT_GT(arv.log[0].loss_vis, 0.0);
}

TEST_F(TrainerFixture, ResumeMatchesUninterruptedRun) {
  const auto dir = tmp("resume");
  auto o = options(Variant::Nacf, 3);
  const auto full = train(data().corpus, o);

  o.training.epochs = 2;
  o.checkpoint = dir / "m.ckpt";
  o.log = dir / "log.jsonl";
  train(data().corpus, o);
  EXPECT_TRUE(fs::exists(dir / "m.ckpt.json"));
  EXPECT_TRUE(fs::exists(dir / "m.ckpt.opt"));
  EXPECT_EQ(read_checkpoint_meta(dir / "m.ckpt").epoch, 2u);

  o.training.epochs = 3;
  o.resume = true;
  const auto resumed = train(data().corpus, o);
  ASSERT_EQ(resumed.log.size(), 1u);
  EXPECT_EQ(resumed.log[0].epoch, 2u);
  expect_same_params(full.model, resumed.model);

  std::ifstream log(dir / "log.jsonl");
  std::string first;
  std::getline(log, first);
  EXPECT_NE(first.find("\"seed\":5"), std::string::npos);
  std::size_t lines = 1;
  for (std::string line; std::getline(log, line);) ++lines;
  EXPECT_EQ(lines, 4u);
  fs::remove_all(dir);
}

TEST_F(TrainerFixture, EmptyCorpusAndDivergence) {
  Corpus empty = data().corpus;
  for (auto& v : empty.videos) v.split = Split::Test;
  EXPECT_EQ(code_of([&] { train(empty, options(Variant::Nacf, 1)); }), ErrorCode::EmptyCorpus);

  auto o = options(Variant::Nacf, 3);
  o.training.lr_init = 1e30;
  o.training.lr_min = 1e30;
  o.training.lr_decay = 1.0;
  EXPECT_EQ(code_of([&] { train(data().corpus, o); }), ErrorCode::DivergedLoss);
}

}  // namespace
}  // namespace nacf
