#include "nacf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace nacf {

namespace {

using NGram = std::vector<std::string>;
using NGramCounts = std::map<NGram, double>;

NGramCounts ngram_counts(const Sentence& s, std::size_t n) {
  NGramCounts counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    counts[NGram(s.begin() + static_cast<std::ptrdiff_t>(i),
                 s.begin() + static_cast<std::ptrdiff_t>(i + n))] += 1.0;
  }
  return counts;
}

void check_inputs(std::span<const Sentence> hyps, std::span<const References> refs, const char* what) {
  if (hyps.empty()) throw Error(ErrorCode::EmptyInput, std::string(what) + ": no hypotheses");
  if (hyps.size() != refs.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(what) + ": hypotheses and reference sets differ in count");
  }
  for (const auto& r : refs) {
    if (r.empty()) throw Error(ErrorCode::EmptyInput, std::string(what) + ": empty reference set");
  }
}

std::string join(const Sentence& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ' ';
    out += s[i];
  }
  return out;
}

}  // namespace

std::array<double, 4> bleu(std::span<const Sentence> hypotheses,
                           std::span<const References> references) {
  check_inputs(hypotheses, references, "bleu");
  std::array<double, 4> matched{}, total{};
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const Sentence& h = hypotheses[i];
    hyp_len += static_cast<double>(h.size());
    std::size_t closest = references[i].front().size();
    for (const auto& r : references[i]) {
      const auto d = [&](std::size_t len) {
        return len > h.size() ? len - h.size() : h.size() - len;
      };
      if (d(r.size()) < d(closest) || (d(r.size()) == d(closest) && r.size() < closest)) {
        closest = r.size();
      }
    }
    ref_len += static_cast<double>(closest);
    for (std::size_t n = 1; n <= 4; ++n) {
      const NGramCounts hc = ngram_counts(h, n);
      NGramCounts max_ref;
      for (const auto& r : references[i]) {
        for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : hc) {
        total[n - 1] += c;
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n - 1] += std::min(c, it->second);
      }
    }
  }
  const double bp = hyp_len >= ref_len || hyp_len == 0.0 ? (hyp_len == 0.0 ? 0.0 : 1.0)
                                                         : std::exp(1.0 - ref_len / hyp_len);
  std::array<double, 4> out{};
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    if (total[n] == 0.0 || matched[n] == 0.0) zero = true;
    if (!zero) log_sum += std::log(matched[n] / total[n]);
    out[n] = zero ? 0.0 : 100.0 * bp * std::exp(log_sum / static_cast<double>(n + 1));
  }
  return out;
}

std::size_t lcs_length(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const Sentence> hypotheses, std::span<const References> references) {
  check_inputs(hypotheses, references, "rouge_l");
  constexpr double kBeta = 1.2;
  double sum = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const Sentence& h = hypotheses[i];
    double p = 0.0, r = 0.0;
    for (const auto& ref : references[i]) {
      const double lcs = static_cast<double>(lcs_length(h, ref));
      if (!h.empty()) p = std::max(p, lcs / static_cast<double>(h.size()));
      if (!ref.empty()) r = std::max(r, lcs / static_cast<double>(ref.size()));
    }
    if (p > 0.0 && r > 0.0) sum += (1 + kBeta * kBeta) * p * r / (r + kBeta * kBeta * p);
  }
  return 100.0 * sum / static_cast<double>(hypotheses.size());
}

std::vector<double> cider_d_scores(std::span<const Sentence> hypotheses,
                                   std::span<const References> references) {
  check_inputs(hypotheses, references, "cider_d");
  constexpr std::size_t kN = 4;
  constexpr double kSigma = 6.0;

  // Document frequency: number of reference sets containing each n-gram.
  std::map<NGram, double> df;
  for (const auto& refs : references) {
    std::set<NGram> seen;
    for (const auto& r : refs) {
      for (std::size_t n = 1; n <= kN; ++n) {
        for (const auto& [g, c] : ngram_counts(r, n)) seen.insert(g);
      }
    }
    for (const auto& g : seen) df[g] += 1.0;
  }
  const double log_docs = std::log(static_cast<double>(references.size()));

  struct Vec {
    std::array<std::map<NGram, double>, kN> w;
    std::array<double, kN> norm{};
    double length = 0.0;
  };
  auto to_vec = [&](const Sentence& s) {
    Vec v;
    for (std::size_t n = 1; n <= kN; ++n) {
      for (const auto& [g, tf] : ngram_counts(s, n)) {
        auto it = df.find(g);
        const double d = std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
        const double w = tf * (log_docs - d);
        v.w[n - 1][g] = w;
        v.norm[n - 1] += w * w;
        // Length is measured in bigrams.
        if (n == 2) v.length += tf;
      }
    }
    for (auto& x : v.norm) x = std::sqrt(x);
    return v;
  };

  std::vector<double> scores;
  scores.reserve(hypotheses.size());
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const Vec hv = to_vec(hypotheses[i]);
    std::array<double, kN> acc{};
    for (const auto& ref : references[i]) {
      const Vec rv = to_vec(ref);
      const double delta = hv.length - rv.length;
      const double penalty = std::exp(-(delta * delta) / (2.0 * kSigma * kSigma));
      for (std::size_t n = 0; n < kN; ++n) {
        double val = 0.0;
        for (const auto& [g, w] : hv.w[n]) {
          auto it = rv.w[n].find(g);
          if (it != rv.w[n].end()) val += std::min(w, it->second) * it->second;
        }
        if (hv.norm[n] != 0.0 && rv.norm[n] != 0.0) val /= hv.norm[n] * rv.norm[n];
        acc[n] += val * penalty;
      }
    }
    double mean = 0.0;
    for (double a : acc) mean += a;
    mean /= static_cast<double>(kN);
    scores.push_back(10.0 * mean / static_cast<double>(references[i].size()));
  }
  return scores;
}

double cider_d(std::span<const Sentence> hypotheses, std::span<const References> references) {
  const auto scores = cider_d_scores(hypotheses, references);
  double s = 0.0;
  for (double x : scores) s += x;
  return s / static_cast<double>(scores.size());
}

Diversity diversity(std::span<const Sentence> captions, std::span<const Sentence> training_captions,
                    std::size_t vocab_words,
                    std::span<const std::vector<std::vector<std::string>>> candidate_words,
                    std::span<const std::size_t> k_list) {
  if (captions.empty()) throw Error(ErrorCode::EmptyInput, "diversity: no captions");
  if (vocab_words == 0) throw Error(ErrorCode::EmptyInput, "diversity: empty vocabulary");
  std::set<std::string> train;
  for (const auto& c : training_captions) train.insert(join(c));
  std::set<std::string> distinct;
  std::set<std::string> used;
  std::size_t novel = 0;
  for (const auto& c : captions) {
    const std::string s = join(c);
    if (!train.count(s)) ++novel;
    distinct.insert(s);
    used.insert(c.begin(), c.end());
  }
  Diversity d;
  const double n = static_cast<double>(captions.size());
  d.novel = 100.0 * static_cast<double>(novel) / n;
  d.unique = 100.0 * static_cast<double>(distinct.size()) / n;
  d.vocab_usage = 100.0 * static_cast<double>(used.size()) / static_cast<double>(vocab_words);
  for (std::size_t k : k_list) {
    std::set<std::string> touched = used;
    for (const auto& per_caption : candidate_words) {
      for (std::size_t j = 0; j < k && j < per_caption.size(); ++j) {
        touched.insert(per_caption[j].begin(), per_caption[j].end());
      }
    }
    d.coverage[k] = 100.0 * static_cast<double>(touched.size()) / static_cast<double>(vocab_words);
  }
  return d;
}

std::map<int, std::size_t> unique_ngrams_by_category(std::span<const Sentence> captions,
                                                     std::span<const int> categories,
                                                     std::size_t n) {
  if (captions.size() != categories.size()) {
    throw Error(ErrorCode::ShapeMismatch, "one category per caption required");
  }
  std::map<int, std::set<NGram>> grams;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    auto& set = grams[categories[i]];
    for (const auto& [g, c] : ngram_counts(captions[i], n)) set.insert(g);
  }
  std::map<int, std::size_t> out;
  for (const auto& [cat, set] : grams) out[cat] = set.size();
  return out;
}

std::vector<double> per_position_vocab_usage(std::span<const Sentence> captions,
                                             std::size_t vocab_words, std::size_t max_len) {
  if (vocab_words == 0) throw Error(ErrorCode::EmptyInput, "empty vocabulary");
  std::vector<std::set<std::string>> seen(max_len);
  for (const auto& c : captions) {
    for (std::size_t p = 0; p < c.size() && p < max_len; ++p) seen[p].insert(c[p]);
  }
  std::vector<double> out;
  for (const auto& s : seen) {
    out.push_back(100.0 * static_cast<double>(s.size()) / static_cast<double>(vocab_words));
  }
  return out;
}

LatencyStats summarize_latency(std::vector<double> per_example_ms,
                               std::span<const std::size_t> passes) {
  if (per_example_ms.empty()) throw Error(ErrorCode::EmptyInput, "no latency samples");
  LatencyStats s;
  s.per_example_ms = per_example_ms;
  double sum = 0.0;
  for (double v : per_example_ms) sum += v;
  s.mean_ms = sum / static_cast<double>(per_example_ms.size());
  std::sort(per_example_ms.begin(), per_example_ms.end());
  auto rank = [&](double q) {
    const auto idx = static_cast<std::size_t>(
        std::ceil(q * static_cast<double>(per_example_ms.size())));
    return per_example_ms[std::clamp<std::size_t>(idx, 1, per_example_ms.size()) - 1];
  };
  s.p50_ms = rank(0.5);
  s.p95_ms = rank(0.95);
  if (!passes.empty()) {
    double p = 0.0;
    for (auto x : passes) p += static_cast<double>(x);
    s.passes_mean = p / static_cast<double>(passes.size());
  }
  return s;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["captions"] = captions;
  j["bleu"] = {{"bleu1", bleu[0]}, {"bleu2", bleu[1]}, {"bleu3", bleu[2]}, {"bleu4", bleu[3]}};
  j["rouge_l"] = rouge_l;
  j["cider_d"] = cider_d;
  j["meteor"] = "n/a";
  nlohmann::json cov = nlohmann::json::object();
  for (const auto& [k, v] : diversity.coverage) cov["C@" + std::to_string(k)] = v;
  j["diversity"] = {{"novel_pct", diversity.novel},
                    {"unique_pct", diversity.unique},
                    {"vocab_usage_pct", diversity.vocab_usage},
                    {"coverage_pct", cov}};
  if (latency) {
    j["latency"] = {{"mean_ms", latency->mean_ms},
                    {"p50_ms", latency->p50_ms},
                    {"p95_ms", latency->p95_ms},
                    {"passes_mean", latency->passes_mean},
                    {"per_example_ms", latency->per_example_ms}};
  }
  return j.dump(2) + "\n";
}

std::string MetricReport::to_csv() const {
  std::ostringstream head, row;
  row << std::setprecision(10);
  head << "seed,captions,bleu1,bleu2,bleu3,bleu4,rouge_l,cider_d,meteor,novel_pct,unique_pct,"
          "vocab_usage_pct";
  row << seed << ',' << captions << ',' << bleu[0] << ',' << bleu[1] << ',' << bleu[2] << ','
      << bleu[3] << ',' << rouge_l << ',' << cider_d << ",n/a," << diversity.novel << ','
      << diversity.unique << ',' << diversity.vocab_usage;
  for (const auto& [k, v] : diversity.coverage) {
    head << ",coverage_at_" << k << "_pct";
    row << ',' << v;
  }
  if (latency) {
    head << ",mean_ms,p50_ms,p95_ms,passes_mean";
    row << ',' << latency->mean_ms << ',' << latency->p50_ms << ',' << latency->p95_ms << ','
        << latency->passes_mean;
  }
  return head.str() + "\n" + row.str() + "\n";
}

}  // namespace nacf
