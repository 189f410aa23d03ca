#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "nacf/metrics.hpp"
#include "nacf/rng.hpp"

namespace nacf {
namespace {

Sentence words(const std::string& text) {
  Sentence s;
  std::istringstream in(text);
  for (std::string w; in >> w;) s.push_back(w);
  return s;
}

using Gram = std::vector<std::string>;

std::map<Gram, double> grams(const Sentence& s, std::size_t n) {
  std::map<Gram, double> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) out[Gram(s.begin() + i, s.begin() + i + n)] += 1.0;
  return out;
}

/// Textbook corpus BLEU without smoothing.
std::array<double, 4> bleu_oracle(const std::vector<Sentence>& hyps, const std::vector<References>& refs) {
  std::array<double, 4> match{}, total{};
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    hyp_len += hyps[i].size();
    std::size_t best = refs[i][0].size();
    for (const auto& r : refs[i]) {
      const auto d = [&](std::size_t len) {
        return std::abs(static_cast<double>(len) - static_cast<double>(hyps[i].size()));
      };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    ref_len += best;
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<Gram, double> max_ref;
      for (const auto& r : refs[i]) {
        for (const auto& [g, c] : grams(r, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : grams(hyps[i], n)) {
        match[n - 1] += std::min(c, max_ref[g]);
        total[n - 1] += c;
      }
    }
  }
  const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  std::array<double, 4> out{};
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    if (match[n] == 0.0 || total[n] == 0.0) zero = true;
    if (!zero) log_sum += std::log(match[n] / total[n]);
    out[n] = zero ? 0.0 : 100.0 * bp * std::exp(log_sum / static_cast<double>(n + 1));
  }
  return out;
}

/// Reference CIDEr-D: per-video document frequency over reference sets,
/// raw term counts, clipped hypothesis weights, gaussian length penalty.
std::vector<double> cider_oracle(const std::vector<Sentence>& hyps, const std::vector<References>& refs) {
  std::array<std::map<Gram, double>, 4> df;
  for (const auto& rs : refs) {
    for (std::size_t n = 1; n <= 4; ++n) {
      std::set<Gram> seen;
      for (const auto& r : rs) {
        for (const auto& [g, c] : grams(r, n)) seen.insert(g);
      }
      for (const auto& g : seen) df[n - 1][g] += 1.0;
    }
  }
  const double log_videos = std::log(static_cast<double>(refs.size()));
  auto vec = [&](const Sentence& s, std::size_t n) {
    auto v = grams(s, n);
    for (auto& [g, c] : v) c *= std::max(0.0, log_videos - std::log(std::max(1.0, df[n - 1][g])));
    return v;
  };
  auto norm = [](const std::map<Gram, double>& v) {
    double s = 0.0;
    for (const auto& [g, c] : v) s += c * c;
    return std::sqrt(s);
  };
  std::vector<double> scores;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    double total = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = vec(hyps[i], n);
      double sum = 0.0;
      for (const auto& r : refs[i]) {
        const auto rv = vec(r, n);
        double dot = 0.0;
        for (const auto& [g, c] : h) {
          const auto it = rv.find(g);
          if (it != rv.end()) dot += std::min(c, it->second) * it->second;
        }
        const double nh = norm(h), nr = norm(rv);
        double val = nh > 0.0 && nr > 0.0 ? dot / (nh * nr) : 0.0;
        const double delta = static_cast<double>(hyps[i].size()) - static_cast<double>(r.size());
        val *= std::exp(-delta * delta / (2.0 * 36.0));
        sum += val;
      }
      total += sum / static_cast<double>(refs[i].size());
    }
    scores.push_back(10.0 * total / 4.0);
  }
  return scores;
}

/// Random corpus over a small vocabulary so n-grams overlap often.
void random_corpus(Rng& rng, std::size_t videos, std::vector<Sentence>& hyps, std::vector<References>& refs) {
  const std::vector<std::string> pool{"a", "man", "dog", "is", "running", "the", "park", "ball"};
  auto sentence = [&] {
    Sentence s(4 + rng.below(6));
    for (auto& w : s) w = pool[rng.below(pool.size())];
    return s;
  };
  hyps.clear();
  refs.clear();
  for (std::size_t i = 0; i < videos; ++i) {
    hyps.push_back(sentence());
    References r;
    const std::size_t k = 1 + rng.below(4);
    for (std::size_t j = 0; j < k; ++j) r.push_back(rng.uniform() < 0.3 ? hyps.back() : sentence());
    refs.push_back(r);
  }
}

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

TEST(Bleu, HandExamples) {
  const std::vector<Sentence> same{words("a man is cutting bread")};
  const std::vector<References> same_ref{{words("a man is cutting bread")}};
  for (double b : bleu(same, same_ref)) EXPECT_NEAR(b, 100.0, 1e-9);

  const std::vector<Sentence> rep{words("the the the")};
  const std::vector<References> rep_ref{{words("the cat")}};
  EXPECT_NEAR(bleu(rep, rep_ref)[0], 100.0 / 3.0, 1e-9);

  EXPECT_EQ(code_of([] { bleu(std::vector<Sentence>{}, std::vector<References>{}); }), ErrorCode::EmptyInput);
}

TEST(Bleu, MatchesOracle) {
  Rng rng(1);
  std::vector<Sentence> hyps;
  std::vector<References> refs;
  for (int trial = 0; trial < 50; ++trial) {
    random_corpus(rng, 1 + rng.below(8), hyps, refs);
    const auto got = bleu(hyps, refs);
    const auto want = bleu_oracle(hyps, refs);
    for (std::size_t n = 0; n < 4; ++n) EXPECT_NEAR(got[n], want[n], 1e-9) << trial << ' ' << n;
  }
}

TEST(Rouge, HandExamples) {
  EXPECT_EQ(lcs_length(words("a b c d"), words("a c d")), 3u);
  const std::vector<Sentence> h{words("a b c d")};
  const std::vector<References> r{{words("a c d")}};
  const double p = 0.75, rec = 1.0, b2 = 1.44;
  EXPECT_NEAR(rouge_l(h, r), 100.0 * (1 + b2) * p * rec / (rec + b2 * p), 1e-9);
  const std::vector<References> same{{words("a b c d")}};
  EXPECT_NEAR(rouge_l(h, same), 100.0, 1e-9);
  const std::vector<References> disjoint{{words("x y z")}};
  EXPECT_EQ(rouge_l(h, disjoint), 0.0);
}

TEST(Cider, MatchesOracle) {
  Rng rng(2);
  std::vector<Sentence> hyps;
  std::vector<References> refs;
  for (int trial = 0; trial < 30; ++trial) {
    random_corpus(rng, 2 + rng.below(8), hyps, refs);
    const auto got = cider_d_scores(hyps, refs);
    const auto want = cider_oracle(hyps, refs);
    ASSERT_EQ(got.size(), want.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_NEAR(got[i], want[i], 1e-9) << trial << ' ' << i;
      mean += want[i];
    }
    EXPECT_NEAR(cider_d(hyps, refs), mean / static_cast<double>(want.size()), 1e-9);
  }
}

TEST(Cider, PerfectNoOverlapAndDuplicationInvariance) {
  const std::vector<Sentence> hyps{words("a man is cutting bread"), words("two dogs play in snow"),
                                   words("she rides green bikes fast")};
  std::vector<References> refs;
  for (const auto& h : hyps) refs.push_back({h});
  EXPECT_NEAR(cider_d(hyps, refs), 10.0, 1e-9);

  std::vector<Sentence> off = hyps;
  off[0] = words("zebra zebra zebra zebra zebra");
  EXPECT_EQ(cider_d_scores(off, refs)[0], 0.0);

  // Invariance needs every hypothesis n-gram to occur in some reference;
  // unseen n-grams get df = 1 and hence a weight of log(videos).
  Rng rng(3);
  std::vector<Sentence> h;
  std::vector<References> r;
  random_corpus(rng, 6, h, r);
  for (auto& hyp : h) hyp = r[rng.below(r.size())][0];
  std::vector<Sentence> h2 = h;
  std::vector<References> r2 = r;
  h2.insert(h2.end(), h.begin(), h.end());
  r2.insert(r2.end(), r.begin(), r.end());
  EXPECT_NEAR(cider_d(h2, r2), cider_d(h, r), 1e-9);
}

TEST(DiversityTest, Definitions) {
  const std::vector<Sentence> train{words("a man runs"), words("a dog runs")};
  const std::vector<Sentence> copied{words("a man runs"), words("a dog runs"), words("a man runs")};
  const std::vector<std::size_t> ks{1, 2};
  const std::vector<std::vector<std::vector<std::string>>> cands{
      {{"a", "man", "runs"}, {"a", "cat", "runs"}},
      {{"a", "dog", "runs"}},
      {{"a", "man", "runs"}, {"a", "man", "sleeps"}}};
  const Diversity d = diversity(copied, train, 10, cands, ks);
  EXPECT_EQ(d.novel, 0.0);
  EXPECT_NEAR(d.unique, 200.0 / 3.0, 1e-12);
  EXPECT_NEAR(d.vocab_usage, 40.0, 1e-12);
  EXPECT_NEAR(d.coverage.at(1), 40.0, 1e-12);
  EXPECT_NEAR(d.coverage.at(2), 60.0, 1e-12);

  const std::vector<Sentence> same(4, words("a cat sleeps"));
  const Diversity s = diversity(same, train, 10, {}, ks);
  EXPECT_EQ(s.novel, 100.0);
  EXPECT_EQ(s.unique, 25.0);
  for (const auto& [k, c] : s.coverage) EXPECT_GE(c, s.vocab_usage);
}

TEST(NGramsByCategory, CountsDistinctGrams) {
  const std::vector<Sentence> caps{words("a b c d e"), words("a b c d e"), words("x y z w"),
                                   words("a b c d")};
  const std::vector<int> cats{0, 0, 1, 0};
  const auto table = unique_ngrams_by_category(caps, cats);
  EXPECT_EQ(table.at(0), 2u);
  EXPECT_EQ(table.at(1), 1u);
}

TEST(PositionUsage, FirstPositionAndBeyondLengths) {
  const std::vector<Sentence> caps{words("a man runs"), words("a dog sleeps"), words("a cat")};
  const auto u = per_position_vocab_usage(caps, 20, 6);
  ASSERT_EQ(u.size(), 6u);
  EXPECT_NEAR(u[0], 5.0, 1e-12);
  EXPECT_NEAR(u[1], 15.0, 1e-12);
  EXPECT_NEAR(u[2], 10.0, 1e-12);
  EXPECT_EQ(u[3], 0.0);
  EXPECT_EQ(u[5], 0.0);
}

TEST(Latency, NearestRankPercentiles) {
  std::vector<double> t;
  for (int i = 10; i >= 1; --i) t.push_back(i);
  const std::vector<std::size_t> passes{6, 6, 6, 6, 6, 7, 7, 7, 7, 7};
  const auto s = summarize_latency(t, passes);
  EXPECT_EQ(s.mean_ms, 5.5);
  EXPECT_EQ(s.p50_ms, 5.0);
  EXPECT_EQ(s.p95_ms, 10.0);
  EXPECT_EQ(s.passes_mean, 6.5);
  EXPECT_EQ(s.per_example_ms.front(), 10.0);
}

TEST(Report, JsonAndCsvSurface) {
  MetricReport r;
  r.bleu = {80, 60, 40, 20};
  r.captions = 3;
  r.seed = 9;
  const std::string json = r.to_json();
  EXPECT_NE(json.find("\"meteor\": \"n/a\""), std::string::npos) << json;
  EXPECT_NE(json.find("\"seed\": 9"), std::string::npos);
  EXPECT_EQ(r.to_csv().find("mean_ms"), std::string::npos);
  r.latency = summarize_latency({1.0, 2.0}, {});
  EXPECT_NE(r.to_csv().find("mean_ms"), std::string::npos);
  const std::string csv = r.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

}  // namespace
}  // namespace nacf
