// Command-line front end: synth, train, decode, eval and bench.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nacf/bench.hpp"
#include "nacf/corpus.hpp"
#include "nacf/decoding.hpp"
#include "nacf/experiment.hpp"
#include "nacf/metrics.hpp"
#include "nacf/model_io.hpp"
#include "nacf/synth.hpp"
#include "nacf/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nacf;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

/// Reported with exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> collect_overrides(const CLI::App& app) {
  std::vector<std::string> out;
  for (const auto& extra : app.remaining()) {
    if (extra.rfind("--", 0) != 0 || extra.find('=') == std::string::npos) {
      throw UsageError("unexpected argument '" + extra + "' (overrides look like --key.path=value)");
    }
    out.push_back(extra.substr(2));
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
  f << text;
}

Corpus load_for(const ExperimentConfig& config, std::size_t max_len) {
  if (config.corpus_manifest.empty()) throw UsageError("config lacks corpus.manifest");
  return load_corpus(config.corpus_manifest, LoadOptions{max_len});
}

// synth ---------------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::string out;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  const SynthSpec spec = a.spec.empty() ? SynthSpec{} : load_synth_spec(a.spec);
  spec.validate();
  const SynthResult result = synth_generate(spec, a.seed);
  fs::create_directories(a.out);
  save_corpus(result.corpus, a.out);
  const json info = {{"seed", a.seed}, {"spec", json::parse(to_json(spec))}};
  write_text(fs::path(a.out) / "synth.json", info.dump(2) + "\n");
  std::cout << "wrote " << result.corpus.videos.size() << " videos, vocabulary "
            << result.corpus.vocab.size() << " to " << a.out << "\n";
  return 0;
}

// train ---------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string variant;
  bool resume = false;
  std::size_t threads = 0;
};

int run_train(const TrainArgs& a, const std::vector<std::string>& overrides) {
  ExperimentConfig config = load_experiment_config(a.config, overrides);
  if (!a.variant.empty()) config.variant = parse_variant(a.variant);
  if (a.threads > 0) config.threads = a.threads;
  const Corpus corpus = load_for(config, config.model.max_len);
  if (corpus.truncated_captions > 0) {
    std::cerr << "warning: truncated " << corpus.truncated_captions << " captions to "
              << config.model.max_len << " tokens\n";
  }

  fs::create_directories(config.output_dir);
  const std::string name(to_string(config.variant));
  TrainOptions options;
  options.model = config.model;
  options.training = config.training;
  options.variant = config.variant;
  options.seed = config.seed;
  options.checkpoint = config.output_dir / (name + ".ckpt");
  options.log = config.output_dir / (name + ".log.jsonl");
  options.resume = a.resume;
  options.threads = resolve_threads(config.threads);
  options.on_epoch = [](const EpochLog& e) { std::cout << to_json_line(e) << std::endl; };
  write_text(config.output_dir / (name + ".config.json"), to_json(config) + "\n");
  train(corpus, options);
  std::cout << "checkpoint " << options.checkpoint->string() << "\n";
  return 0;
}

// decode --------------------------------------------------------------------

struct DecodeArgs {
  std::string config;
  std::string checkpoint;
  std::string split;
  std::string algo;
  std::string use_template;
  std::optional<std::size_t> T, q, B, fixed_T;
  bool rescore = false;
  std::string teacher;
  bool trace = false;
  std::string out;
};

json word_list(const Vocabulary& vocab, std::span<const int> ids) {
  json out = json::array();
  for (int id : ids) {
    if (!Vocabulary::is_reserved(id)) out.push_back(vocab.word(id));
  }
  return out;
}

int run_decode(const DecodeArgs& a, const std::vector<std::string>& overrides) {
  ExperimentConfig config = load_experiment_config(a.config, overrides);
  DecodeConfig& dc = config.decode;
  if (!a.split.empty()) config.split = parse_split(a.split);
  if (!a.algo.empty()) dc.algorithm = parse_algorithm(a.algo);
  if (!a.use_template.empty()) dc.use_template = a.use_template == "on";
  if (a.T) dc.T = *a.T;
  if (a.q) dc.q = *a.q;
  if (a.B) dc.B = *a.B;
  if (a.fixed_T) dc.fixed_T = *a.fixed_T;
  if (a.rescore) dc.use_rescoring = true;
  if (!a.teacher.empty()) config.teacher = a.teacher;
  if (a.trace) dc.record_trace = true;
  if (dc.use_rescoring && !config.teacher) throw UsageError("--rescore needs --teacher <checkpoint>");
  dc.validate();

  const CheckpointMeta meta = read_checkpoint_meta(a.checkpoint);
  const Corpus corpus = load_for(config, meta.config.max_len);
  const Model<float> model = load_model(a.checkpoint, corpus.vocab.hash());
  std::optional<Model<float>> teacher;
  if (dc.use_rescoring) teacher.emplace(load_model(*config.teacher, corpus.vocab.hash()));
  const bool causal = model.config().causal;
  std::optional<Captioner> captioner;
  if (!causal) captioner.emplace(model, teacher ? &*teacher : nullptr);

  std::ostringstream out, walkthrough;
  json header = {{"seed", config.seed},
                 {"checkpoint", a.checkpoint},
                 {"variant", meta.variant},
                 {"split", std::string(to_string(config.split))},
                 {"decode", json::parse(to_json(config))["decode"]}};
  out << header.dump() << '\n';
  for (const VideoRecord* v : corpus.split(config.split)) {
    json rec;
    rec["video_id"] = v->video_id;
    if (causal) {
      const ArResult r = ar_decode(model, v->features, dc.B);
      rec["caption"] = corpus.vocab.render(r.tokens);
      rec["length"] = r.tokens.size();
      rec["score"] = r.score;
      rec["passes"] = r.passes;
      rec["encode_ms"] = r.encode_ms;
      rec["wall_ms"] = r.decode_ms;
      json cands = json::array();
      for (const auto& h : r.hypotheses) {
        cands.push_back({{"caption", corpus.vocab.render(h)}, {"touched", word_list(corpus.vocab, h)}});
      }
      rec["candidates"] = cands;
    } else {
      const CaptionResult r = captioner->caption(v->features, dc);
      const Candidate& best = r.candidates[r.best];
      rec["caption"] = corpus.vocab.render(r.tokens);
      rec["length"] = r.tokens.size();
      rec["score"] = best.score;
      rec["passes"] = r.total_passes();
      rec["encode_ms"] = r.encode_ms;
      rec["wall_ms"] = r.decode_ms;
      rec["template"] = corpus.vocab.words_of(best.template_tokens).empty()
                            ? json(std::string())
                            : json(corpus.vocab.render(best.template_tokens));
      json cands = json::array();
      for (std::size_t idx : r.ranking()) {
        const Candidate& c = r.candidates[idx];
        cands.push_back({{"caption", corpus.vocab.render(c.tokens)},
                         {"length", c.length},
                         {"score", c.score},
                         {"touched", word_list(corpus.vocab, c.touched)}});
      }
      rec["candidates"] = cands;
      if (dc.record_trace) {
        const std::string text = render_trace(best, corpus.vocab);
        json lines = json::array();
        std::istringstream in(text);
        for (std::string line; std::getline(in, line);) lines.push_back(line);
        rec["trace"] = lines;
        walkthrough << v->video_id << "\n" << text << "\n";
      }
    }
    out << rec.dump() << '\n';
  }
  write_text(a.out, out.str());
  if (dc.record_trace && !causal) {
    std::cout << walkthrough.str();
  }
  return 0;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string captions;
  std::string corpus;
  std::string split = "test";
  std::string out;
  std::vector<std::size_t> k = {1, 4, 6};
  bool stats = false;
};

int run_eval(const EvalArgs& a) {
  std::ifstream in(a.captions);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open captions " + a.captions);
  const Corpus corpus = load_corpus(a.corpus);
  const Split split = parse_split(a.split);

  std::uint64_t seed = 0;
  std::vector<Sentence> hyps;
  std::vector<References> refs;
  std::vector<std::vector<std::vector<std::string>>> candidate_words;
  std::vector<double> wall;
  std::vector<std::size_t> passes;
  std::vector<int> categories;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    const json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) {
      throw Error(ErrorCode::FormatError, a.captions + " line " + std::to_string(line_no) + " is not JSON");
    }
    if (!rec.contains("video_id")) {
      if (rec.contains("seed")) seed = rec["seed"].get<std::uint64_t>();
      continue;
    }
    const std::string id = rec.at("video_id").get<std::string>();
    const VideoRecord* video = corpus.find(id);
    if (!video) throw Error(ErrorCode::FormatError, "unknown video '" + id + "'");
    if (video->split != split) continue;
    std::istringstream words(rec.at("caption").get<std::string>());
    Sentence hyp;
    for (std::string w; words >> w;) hyp.push_back(w);
    hyps.push_back(hyp);
    refs.push_back(video->captions);
    categories.push_back(video->category.value_or(-1));
    std::vector<std::vector<std::string>> cands;
    if (rec.contains("candidates")) {
      for (const auto& c : rec["candidates"]) cands.push_back(c.at("touched").get<std::vector<std::string>>());
    }
    candidate_words.push_back(std::move(cands));
    if (rec.contains("wall_ms")) wall.push_back(rec["wall_ms"].get<double>());
    if (rec.contains("passes")) passes.push_back(rec["passes"].get<std::size_t>());
  }
  if (hyps.empty()) throw Error(ErrorCode::EmptyInput, "no captions for split " + a.split);

  std::vector<Sentence> training;
  for (const VideoRecord* v : corpus.split(Split::Train)) {
    training.insert(training.end(), v->captions.begin(), v->captions.end());
  }

  MetricReport report;
  report.seed = seed;
  report.captions = hyps.size();
  report.bleu = bleu(hyps, refs);
  report.rouge_l = rouge_l(hyps, refs);
  report.cider_d = cider_d(hyps, refs);
  report.diversity = diversity(hyps, training, corpus.vocab.word_count(), candidate_words, a.k);
  if (wall.size() == hyps.size()) report.latency = summarize_latency(wall, passes);
  write_text(a.out + ".json", report.to_json());
  write_text(a.out + ".csv", report.to_csv());

  if (a.stats) {
    std::ostringstream pos;
    pos << "# seed=" << seed << "\nposition,training_pct,generated_pct\n";
    const std::size_t max_len = 20;
    const auto train_usage = per_position_vocab_usage(training, corpus.vocab.word_count(), max_len);
    const auto gen_usage = per_position_vocab_usage(hyps, corpus.vocab.word_count(), max_len);
    for (std::size_t i = 0; i < max_len; ++i) {
      pos << i + 1 << ',' << train_usage[i] << ',' << gen_usage[i] << '\n';
    }
    write_text(a.out + ".positions.csv", pos.str());
    std::ostringstream grams;
    grams << "# seed=" << seed << "\ncategory,unique_4grams\n";
    for (const auto& [cat, n] : unique_ngrams_by_category(hyps, categories, 4)) {
      grams << cat << ',' << n << '\n';
    }
    write_text(a.out + ".ngrams.csv", grams.str());
  }
  std::cout << report.to_json();
  return 0;
}

// bench ---------------------------------------------------------------------

struct BenchArgs {
  std::string config;
  std::string checkpoint;
  std::string ar;
  std::string out;
  std::string svg;
  bool trace = false;
};

int run_bench(const BenchArgs& a, const std::vector<std::string>& overrides) {
  const ExperimentConfig config = load_experiment_config(a.config, overrides);
  if (a.trace || config.decode.record_trace) {
    throw UsageError("benchmark refuses to run with trace logging enabled");
  }
  const CheckpointMeta meta = read_checkpoint_meta(a.checkpoint);
  const Corpus corpus = load_for(config, meta.config.max_len);
  const Model<float> model = load_model(a.checkpoint, corpus.vocab.hash());
  std::optional<Model<float>> ar;
  const std::string ar_path = !a.ar.empty() ? a.ar : config.teacher ? config.teacher->string() : "";
  if (!ar_path.empty()) ar.emplace(load_model(ar_path, corpus.vocab.hash()));
  if (config.bench.use_rescoring && !ar) throw UsageError("bench.use_rescoring needs --ar <checkpoint>");

  const BenchResult result =
      run_benchmark(model, ar ? &*ar : nullptr, corpus, config.split, config.bench, config.seed);
  write_text(a.out, bench_csv(result));
  if (!a.svg.empty()) write_text(a.svg, bench_svg(result));
  std::cout << bench_csv(result);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-autoregressive coarse-to-fine video captioning"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic feature/caption corpus");
  synth_cmd->add_option("--spec", synth.spec, "Synthetic corpus spec (JSON); defaults when omitted");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "Random seed");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a captioning model");
  train_cmd->add_option("--config", train_args.config, "Experiment config (JSON)")->required();
  train_cmd->add_option("--variant", train_args.variant, "nacf, na-b, ar-b or ar-b-vis");
  train_cmd->add_flag("--resume", train_args.resume, "Continue from the checkpoint in output_dir");
  train_cmd->add_option("--threads", train_args.threads, "Worker threads (results do not depend on it)");
  train_cmd->allow_extras();

  DecodeArgs dec;
  auto* decode_cmd = app.add_subcommand("decode", "Caption a corpus split");
  decode_cmd->add_option("--config", dec.config, "Experiment config (JSON)")->required();
  decode_cmd->add_option("--checkpoint", dec.checkpoint, "Model checkpoint")->required();
  decode_cmd->add_option("--split", dec.split, "train, val or test");
  decode_cmd->add_option("--algo", dec.algo, "mp, ef or l2r");
  decode_cmd->add_option("--template", dec.use_template, "on or off")
      ->check(CLI::IsMember({"on", "off"}));
  decode_cmd->add_option("--T", dec.T, "Mask-Predict iterations");
  decode_cmd->add_option("--q", dec.q, "Tokens committed per Easy-First/Left-to-Right step");
  decode_cmd->add_option("--B", dec.B, "Length beam (beam width for autoregressive models)");
  decode_cmd->add_option("--fixed-T", dec.fixed_T, "Constant iteration count for ef/l2r");
  decode_cmd->add_flag("--rescore", dec.rescore, "Rescore candidates with the teacher");
  decode_cmd->add_option("--teacher", dec.teacher, "Autoregressive teacher checkpoint");
  decode_cmd->add_flag("--trace", dec.trace, "Record and print per-iteration walkthroughs");
  decode_cmd->add_option("--out", dec.out, "Output captions (JSONL)")->required();
  decode_cmd->allow_extras();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score captions against references");
  eval_cmd->add_option("--captions", ev.captions, "Captions JSONL from decode")->required();
  eval_cmd->add_option("--corpus", ev.corpus, "Corpus manifest")->required();
  eval_cmd->add_option("--split", ev.split, "Split to score");
  eval_cmd->add_option("--out", ev.out, "Output prefix for .json and .csv")->required();
  eval_cmd->add_option("--k", ev.k, "Coverage cut-offs")->delimiter(',');
  eval_cmd->add_flag("--stats", ev.stats, "Also write per-position usage and 4-gram tables");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Measure decoding latency over a config grid");
  bench_cmd->add_option("--config", bench.config, "Experiment config (JSON)")->required();
  bench_cmd->add_option("--checkpoint", bench.checkpoint, "Non-autoregressive checkpoint")->required();
  bench_cmd->add_option("--ar", bench.ar, "Autoregressive reference/teacher checkpoint");
  bench_cmd->add_option("--out", bench.out, "Output CSV")->required();
  bench_cmd->add_option("--svg", bench.svg, "Speedup vs CIDEr-D scatter");
  bench_cmd->add_flag("--trace", bench.trace, "Rejected: timing runs never record traces");
  bench_cmd->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*train_cmd) return run_train(train_args, collect_overrides(*train_cmd));
    if (*decode_cmd) return run_decode(dec, collect_overrides(*decode_cmd));
    if (*eval_cmd) return run_eval(ev);
    if (*bench_cmd) return run_bench(bench, collect_overrides(*bench_cmd));
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.code()) {
      case ErrorCode::InvalidConfig:
      case ErrorCode::InvalidSpec:
      case ErrorCode::MissingFile:
      case ErrorCode::UnknownSplit:
        return kUsageError;
      default:
        return kRuntimeFailure;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kUsageError;
}
