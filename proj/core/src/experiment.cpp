#include "nacf/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iterator>

#include "json_fields.hpp"

namespace nacf {

namespace {

using detail::FieldBinder;
using detail::json;

constexpr ErrorCode kConfig = ErrorCode::InvalidConfig;

void apply_override(json& doc, const std::string& entry) {
  const auto eq = entry.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(kConfig, "override '" + entry + "' is not of the form key=value");
  }
  const std::string key = entry.substr(0, eq);
  const std::string text = entry.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw Error(kConfig, "override key '" + key + "' has an empty component");
    if (!node->is_object()) throw Error(kConfig, "override '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

std::vector<std::size_t> size_list(const json& j) {
  std::vector<std::size_t> out;
  for (const auto& v : j) out.push_back(v.get<std::size_t>());
  return out;
}

void bind_model(const json& j, ModelConfig& m) {
  FieldBinder("model", kConfig)
      .bind("d_model", m.d_model)
      .bind("d_hidden", m.d_hidden)
      .bind("heads", m.heads)
      .bind("decoder_layers", m.decoder_layers)
      .bind("max_len", m.max_len)
      .bind("dropout", m.dropout)
      .bind("use_source_copy", m.use_source_copy)
      .apply(j);
}

void bind_training(const json& j, TrainingConfig& t) {
  FieldBinder("training", kConfig)
      .bind("beta_low", t.beta_low)
      .bind("beta_high", t.beta_high)
      .bind("lambda_vis", t.lambda_vis)
      .bind("batch_size", t.batch_size)
      .bind("lr_init", t.lr_init)
      .bind("lr_decay", t.lr_decay)
      .bind("lr_min", t.lr_min)
      .bind("weight_decay", t.weight_decay)
      .bind("epochs", t.epochs)
      .bind("adam_beta1", t.adam_beta1)
      .bind("adam_beta2", t.adam_beta2)
      .bind("adam_eps", t.adam_eps)
      .bind("val_videos", t.val_videos)
      .custom("visual_pos",
              [&](const json& v) {
                t.visual_pos.clear();
                for (const auto& p : v) t.visual_pos.push_back(parse_pos(p.get<std::string>()));
              })
      .apply(j);
}

void bind_decode(const json& j, ExperimentConfig& c) {
  DecodeConfig& d = c.decode;
  FieldBinder("decode", kConfig)
      .custom("algorithm", [&](const json& v) { d.algorithm = parse_algorithm(v.get<std::string>()); })
      .bind("use_template", d.use_template)
      .bind("T", d.T)
      .bind("q", d.q)
      .bind("B", d.B)
      .bind("use_rescoring", d.use_rescoring)
      .bind("refine_visual", d.refine_visual)
      .custom("fixed_T",
              [&](const json& v) {
                if (v.is_null()) {
                  d.fixed_T.reset();
                } else {
                  d.fixed_T = v.get<std::size_t>();
                }
              })
      .bind("record_trace", d.record_trace)
      .custom("split", [&](const json& v) { c.split = parse_split(v.get<std::string>()); })
      .custom("teacher",
              [&](const json& v) {
                if (v.is_null()) {
                  c.teacher.reset();
                } else {
                  c.teacher = v.get<std::string>();
                }
              })
      .apply(j);
}

void bind_bench(const json& j, BenchConfig& b) {
  FieldBinder("bench", kConfig)
      .custom("algorithms",
              [&](const json& v) {
                b.algorithms.clear();
                for (const auto& a : v) b.algorithms.push_back(parse_algorithm(a.get<std::string>()));
              })
      .custom("B", [&](const json& v) { b.B = size_list(v); })
      .custom("T", [&](const json& v) { b.T = size_list(v); })
      .bind("use_template", b.use_template)
      .bind("use_rescoring", b.use_rescoring)
      .bind("ar_beam", b.ar_beam)
      .bind("warmup", b.warmup)
      .bind("max_videos", b.max_videos)
      .apply(j);
}

// Library parse helpers raise their own codes; a config document reports
// every bad value as a configuration error.
template <class F>
void as_config_error(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    if (e.code() == kConfig) throw;
    throw Error(kConfig, e.what());
  }
}

}  // namespace

void BenchConfig::validate() const {
  if (algorithms.empty() || B.empty() || T.empty()) {
    throw Error(kConfig, "bench grid needs at least one algorithm, B and T");
  }
  for (auto b : B) {
    if (b < 1) throw Error(kConfig, "bench B values must be >= 1");
  }
  for (auto t : T) {
    if (t < 1) throw Error(kConfig, "bench T values must be >= 1");
  }
  if (ar_beam < 1) throw Error(kConfig, "bench ar_beam must be >= 1");
}

void ExperimentConfig::validate() const {
  // Corpus-derived fields are unknown here; placeholders let the
  // architecture checks run.
  ModelConfig probe = model;
  probe.modalities = {ModalitySpec{1, 1}};
  probe.vocab_size = token::kReservedCount + 1;
  probe.validate();
  training.validate();
  decode.validate();
  bench.validate();
  if (decode.use_rescoring && !teacher) {
    throw Error(kConfig, "decode.use_rescoring needs decode.teacher");
  }
}

ExperimentConfig parse_experiment_config(std::string_view json_text,
                                         std::span<const std::string> overrides) {
  json doc = json::parse(json_text, nullptr, false, true);
  if (doc.is_discarded()) throw Error(kConfig, "experiment config is not valid JSON");
  if (!doc.is_object()) throw Error(kConfig, "experiment config must be a JSON object");
  for (const auto& o : overrides) apply_override(doc, o);

  ExperimentConfig c;
  as_config_error([&] {
    FieldBinder("", kConfig)
        .bind("seed", c.seed)
        .custom("corpus",
                [&](const json& v) {
                  FieldBinder("corpus", kConfig)
                      .custom("manifest",
                              [&](const json& m) { c.corpus_manifest = m.get<std::string>(); })
                      .apply(v);
                })
        .custom("output_dir", [&](const json& v) { c.output_dir = v.get<std::string>(); })
        .custom("variant", [&](const json& v) { c.variant = parse_variant(v.get<std::string>()); })
        .bind("threads", c.threads)
        .custom("model", [&](const json& v) { bind_model(v, c.model); })
        .custom("training", [&](const json& v) { bind_training(v, c.training); })
        .custom("decode", [&](const json& v) { bind_decode(v, c); })
        .custom("bench", [&](const json& v) { bind_bench(v, c.bench); })
        .apply(doc);
    c.validate();
  });
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        std::span<const std::string> overrides) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::MissingFile, "cannot open config " + path.string());
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_experiment_config(text, overrides);
}

std::string to_json(const ExperimentConfig& c) {
  json visual = json::array();
  for (Pos p : c.training.visual_pos) visual.push_back(std::string(to_string(p)));
  json algos = json::array();
  for (Algorithm a : c.bench.algorithms) algos.push_back(std::string(to_string(a)));
  const json doc = {
      {"seed", c.seed},
      {"corpus", {{"manifest", c.corpus_manifest.string()}}},
      {"output_dir", c.output_dir.string()},
      {"variant", std::string(to_string(c.variant))},
      {"threads", c.threads},
      {"model",
       {{"d_model", c.model.d_model},
        {"d_hidden", c.model.d_hidden},
        {"heads", c.model.heads},
        {"decoder_layers", c.model.decoder_layers},
        {"max_len", c.model.max_len},
        {"dropout", c.model.dropout},
        {"use_source_copy", c.model.use_source_copy}}},
      {"training",
       {{"beta_low", c.training.beta_low},
        {"beta_high", c.training.beta_high},
        {"lambda_vis", c.training.lambda_vis},
        {"batch_size", c.training.batch_size},
        {"lr_init", c.training.lr_init},
        {"lr_decay", c.training.lr_decay},
        {"lr_min", c.training.lr_min},
        {"weight_decay", c.training.weight_decay},
        {"epochs", c.training.epochs},
        {"adam_beta1", c.training.adam_beta1},
        {"adam_beta2", c.training.adam_beta2},
        {"adam_eps", c.training.adam_eps},
        {"val_videos", c.training.val_videos},
        {"visual_pos", visual}}},
      {"decode",
       {{"algorithm", std::string(to_string(c.decode.algorithm))},
        {"use_template", c.decode.use_template},
        {"T", c.decode.T},
        {"q", c.decode.q},
        {"B", c.decode.B},
        {"use_rescoring", c.decode.use_rescoring},
        {"refine_visual", c.decode.refine_visual},
        {"fixed_T", c.decode.fixed_T ? json(*c.decode.fixed_T) : json(nullptr)},
        {"record_trace", c.decode.record_trace},
        {"split", std::string(to_string(c.split))},
        {"teacher", c.teacher ? json(c.teacher->string()) : json(nullptr)}}},
      {"bench",
       {{"algorithms", algos},
        {"B", c.bench.B},
        {"T", c.bench.T},
        {"use_template", c.bench.use_template},
        {"use_rescoring", c.bench.use_rescoring},
        {"ar_beam", c.bench.ar_beam},
        {"warmup", c.bench.warmup},
        {"max_videos", c.bench.max_videos}}}};
  return doc.dump(2);
}

std::size_t resolve_threads(std::size_t requested) {
  std::size_t cap = 0;
  if (const char* env = std::getenv("NACF_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0' || v == 0) {
      throw Error(kConfig, std::string("NACF_THREADS must be a positive integer, got '") + env + "'");
    }
    cap = v;
  }
  if (requested == 0) return cap ? cap : 1;
  return cap ? std::min(requested, cap) : requested;
}

}  // namespace nacf
