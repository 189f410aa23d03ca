#include "nacf/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "nacf/metrics.hpp"

namespace nacf {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::vector<BenchEntry> bench_grid(const BenchConfig& bench) {
  bench.validate();
  std::vector<BenchEntry> grid;
  BenchEntry ar;
  ar.label = "ar-b B=" + std::to_string(bench.ar_beam);
  ar.autoregressive = true;
  ar.beam = bench.ar_beam;
  grid.push_back(ar);
  for (Algorithm algo : bench.algorithms) {
    for (std::size_t b : bench.B) {
      for (std::size_t t : bench.T) {
        BenchEntry e;
        e.config.algorithm = algo;
        e.config.use_template = bench.use_template;
        e.config.use_rescoring = bench.use_rescoring;
        e.config.B = b;
        if (algo == Algorithm::MaskPredict) {
          e.config.T = t;
        } else {
          e.config.fixed_T = t;
        }
        e.label = std::string(bench.use_template ? "ct-" : "") + std::string(to_string(algo)) +
                  " B=" + std::to_string(b) + " T=" + std::to_string(t) +
                  (bench.use_rescoring ? " +rescore" : "");
        grid.push_back(e);
      }
    }
  }
  return grid;
}

BenchResult run_benchmark(const Model<float>& nacf, const Model<float>* ar, const Corpus& corpus,
                          Split split, const BenchConfig& bench, std::uint64_t seed,
                          bool trace_requested) {
  if (trace_requested) {
    throw Error(ErrorCode::InvalidConfig, "benchmark refuses to run with trace logging enabled");
  }
  if (bench.use_rescoring && !ar) {
    throw Error(ErrorCode::InvalidConfig, "rescoring benchmark needs the autoregressive teacher");
  }
  auto videos = corpus.split(split);
  if (bench.max_videos > 0 && videos.size() > bench.max_videos) videos.resize(bench.max_videos);
  if (videos.empty()) throw Error(ErrorCode::EmptyInput, "no videos in the benchmark split");

  std::vector<References> refs;
  for (const auto* v : videos) refs.push_back(v->captions);

  BenchResult result;
  result.seed = seed;
  std::optional<double> reference_ms;
  const Captioner captioner(nacf, ar);
  for (const BenchEntry& entry : bench_grid(bench)) {
    if (entry.autoregressive && !ar) continue;
    auto decode = [&](const VideoRecord& v, std::size_t& passes, double& encode_ms, double& decode_ms,
                      bool& law_ok) {
      if (entry.autoregressive) {
        ArResult r = ar_decode(*ar, v.features, entry.beam);
        passes = r.passes;
        encode_ms = r.encode_ms;
        decode_ms = r.decode_ms;
        law_ok = true;
        return r.tokens;
      }
      CaptionResult r = captioner.caption(v.features, entry.config);
      std::vector<std::size_t> lengths, observed;
      for (const auto& c : r.candidates) {
        lengths.push_back(c.length);
        observed.push_back(c.visual_positions.size());
      }
      passes = r.total_passes();
      law_ok = r.decoder_passes == expected_decoder_passes(entry.config, lengths, observed) &&
               r.teacher_passes == (entry.config.use_rescoring ? 1u : 0u);
      encode_ms = r.encode_ms;
      decode_ms = r.decode_ms;
      return r.tokens;
    };

    for (std::size_t w = 0; w < bench.warmup; ++w) {
      std::size_t p;
      double e, d;
      bool ok;
      decode(*videos[w % videos.size()], p, e, d, ok);
    }
    BenchRow row;
    row.label = entry.label;
    row.autoregressive = entry.autoregressive;
    std::vector<double> times;
    std::vector<std::size_t> passes;
    std::vector<Sentence> hyps;
    double encode_total = 0.0;
    for (const auto* v : videos) {
      std::size_t p = 0;
      double e = 0.0, d = 0.0;
      bool ok = true;
      hyps.push_back(corpus.vocab.words_of(decode(*v, p, e, d, ok)));
      times.push_back(d);
      passes.push_back(p);
      encode_total += e;
      if (!ok) ++row.law_violations;
    }
    const LatencyStats stats = summarize_latency(times, passes);
    row.passes_mean = stats.passes_mean;
    row.mean_ms = stats.mean_ms;
    row.p50_ms = stats.p50_ms;
    row.p95_ms = stats.p95_ms;
    row.encode_ms = encode_total / static_cast<double>(videos.size());
    row.bleu4 = bleu(hyps, refs)[3];
    row.cider_d = cider_d(hyps, refs);
    if (entry.autoregressive) reference_ms = row.mean_ms;
    result.rows.push_back(row);
  }
  for (auto& row : result.rows) {
    if (reference_ms && row.mean_ms > 0.0) row.speedup = *reference_ms / row.mean_ms;
  }
  return result;
}

std::string bench_csv(const BenchResult& result) {
  std::ostringstream out;
  out << "# seed=" << result.seed << '\n';
  out << "config,passes,mean_ms,p50,p95,speedup,encode_ms,bleu4,cider_d,pass_law\n";
  for (const auto& r : result.rows) {
    out << r.label << ',' << fixed(r.passes_mean, 3) << ',' << fixed(r.mean_ms, 4) << ','
        << fixed(r.p50_ms, 4) << ',' << fixed(r.p95_ms, 4) << ','
        << (r.speedup ? fixed(*r.speedup, 3) : std::string()) << ',' << fixed(r.encode_ms, 4)
        << ',' << fixed(r.bleu4, 3) << ',' << fixed(r.cider_d, 4) << ','
        << (r.law_violations == 0 ? "ok" : "violated:" + std::to_string(r.law_violations))
        << '\n';
  }
  return out.str();
}

std::string bench_svg(const BenchResult& result) {
  constexpr double width = 640, height = 420, left = 60, right = 20, top = 30, bottom = 50;
  double max_x = 1.0, max_y = 1e-9;
  for (const auto& r : result.rows) {
    max_x = std::max(max_x, r.speedup.value_or(0.0));
    max_y = std::max(max_y, r.cider_d);
  }
  max_x *= 1.1;
  max_y *= 1.1;
  auto px = [&](double x) { return left + x / max_x * (width - left - right); };
  auto py = [&](double y) { return height - bottom - y / max_y * (height - top - bottom); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<!-- seed=" << result.seed << " -->\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << height - bottom << "\" x2=\"" << width - right
      << "\" y2=\"" << height - bottom << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << height - bottom << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = max_x * i / 4.0, yv = max_y * i / 4.0;
    svg << "<text x=\"" << px(xv) << "\" y=\"" << height - bottom + 15
        << "\" text-anchor=\"middle\">" << fixed(xv, 1) << "x</text>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
        << fixed(yv, 2) << "</text>\n";
  }
  svg << "<text x=\"" << (left + width - right) / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\">decoding speedup over the autoregressive reference</text>\n";
  svg << "<text transform=\"translate(16," << (top + height - bottom) / 2
      << ") rotate(-90)\" text-anchor=\"middle\">CIDEr-D</text>\n";
  for (const auto& r : result.rows) {
    if (!r.speedup) continue;
    const double x = px(*r.speedup), y = py(r.cider_d);
    svg << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"4\" fill=\""
        << (r.autoregressive ? "#c0392b" : "#2874a6") << "\"/>\n";
    svg << "<text x=\"" << x + 6 << "\" y=\"" << y - 6 << "\">" << escape_xml(r.label)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace nacf
