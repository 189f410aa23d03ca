#include "nacf/model_io.hpp"

#include <fstream>
#include <iterator>

#include "json_fields.hpp"

namespace nacf {

namespace {

using detail::json;

json config_json(const ModelConfig& c) {
  json mods = json::array();
  for (const auto& m : c.modalities) mods.push_back({{"feature_dim", m.feature_dim}, {"frames", m.frames}});
  return {{"modalities", mods},
          {"category_count", c.category_count},
          {"d_model", c.d_model},
          {"d_hidden", c.d_hidden},
          {"heads", c.heads},
          {"decoder_layers", c.decoder_layers},
          {"max_len", c.max_len},
          {"vocab_size", c.vocab_size},
          {"dropout", c.dropout},
          {"causal", c.causal},
          {"use_source_copy", c.use_source_copy}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  detail::FieldBinder("model_config", ErrorCode::FormatError)
      .custom("modalities",
              [&](const json& v) {
                c.modalities.clear();
                for (const auto& m : v) {
                  c.modalities.push_back(
                      {m.at("feature_dim").get<std::size_t>(), m.at("frames").get<std::size_t>()});
                }
              })
      .bind("category_count", c.category_count)
      .bind("d_model", c.d_model)
      .bind("d_hidden", c.d_hidden)
      .bind("heads", c.heads)
      .bind("decoder_layers", c.decoder_layers)
      .bind("max_len", c.max_len)
      .bind("vocab_size", c.vocab_size)
      .bind("dropout", c.dropout)
      .bind("causal", c.causal)
      .bind("use_source_copy", c.use_source_copy)
      .apply(j);
  return c;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& config) { return config_json(config).dump(2); }

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, e.what());
  }
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".json");
}

void save_model(const std::filesystem::path& checkpoint, const Model<float>& model,
                const CheckpointMeta& meta) {
  write_checkpoint(checkpoint, to_records(model.params()));
  const json j = {{"model_config", config_json(model.config())},
                  {"vocab_hash", meta.vocab_hash},
                  {"epoch", meta.epoch},
                  {"seed", meta.seed},
                  {"variant", meta.variant}};
  std::ofstream f(sidecar_path(checkpoint), std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::MissingFile, "cannot write " + sidecar_path(checkpoint).string());
  f << j.dump(2) << '\n';
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& checkpoint) {
  const auto path = sidecar_path(checkpoint);
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::MissingFile, "cannot open checkpoint sidecar " + path.string());
  const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CheckpointMeta meta;
  try {
    detail::FieldBinder(path.string(), ErrorCode::FormatError)
        .custom("model_config", [&](const json& v) { meta.config = config_from(v); })
        .bind("vocab_hash", meta.vocab_hash)
        .bind("epoch", meta.epoch)
        .bind("seed", meta.seed)
        .bind("variant", meta.variant)
        .apply(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  return meta;
}

Model<float> load_model(const std::filesystem::path& checkpoint,
                        std::optional<std::uint64_t> expected_vocab_hash) {
  const CheckpointMeta meta = read_checkpoint_meta(checkpoint);
  if (expected_vocab_hash && *expected_vocab_hash != meta.vocab_hash) {
    throw Error(ErrorCode::InvalidConfig,
                "checkpoint " + checkpoint.string() + " was trained with a different vocabulary");
  }
  Model<float> model(meta.config, meta.seed);
  assign_records(model.params(), read_checkpoint(checkpoint));
  return model;
}

}  // namespace nacf
