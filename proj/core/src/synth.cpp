#include "nacf/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <cstdio>

#include "json_fields.hpp"

namespace nacf {

namespace {

using Forms = std::vector<std::string>;

// First form is the primary word; the rest are alternatives.
const std::vector<Forms> kSubjects = {
    {"man", "guy"}, {"woman", "lady"}, {"boy"},    {"girl"},   {"dog", "puppy"}, {"cat", "kitten"},
    {"chef", "cook"}, {"player"},      {"baby"},   {"monkey"}, {"panda"},        {"teenager"}};
const std::vector<Forms> kVerbs = {
    {"cutting", "slicing"}, {"riding"},  {"playing"},         {"cooking", "preparing"},
    {"eating"},             {"throwing", "tossing"}, {"kicking"}, {"pushing"},
    {"holding", "carrying"}, {"washing", "cleaning"}, {"peeling"}, {"dropping"}};
const std::vector<Forms> kObjects = {
    {"bread"}, {"ball"},   {"guitar"}, {"potato"}, {"tomato"}, {"bicycle", "bike"}, {"car"},
    {"box"},   {"bottle"}, {"banana"}, {"pizza"},  {"drum"},   {"carrot"},          {"piano"}};
const std::vector<std::string> kPlaces = {"kitchen", "park", "field", "street",
                                          "room",    "beach", "garden", "stage"};
const std::vector<std::string> kAttributes = {"red",   "small",  "big",   "white",
                                              "black", "green", "yellow", "wooden"};

struct FunctionWord {
  const char* word;
  Pos pos;
};
const std::array<FunctionWord, 6> kFunctionWords = {{{"a", Pos::Determiner},
                                                     {"the", Pos::Determiner},
                                                     {"is", Pos::Verb},
                                                     {"there", Pos::Other},
                                                     {"in", Pos::Other},
                                                     {"at", Pos::Other}}};

const Forms kPrepositions = {"in", "at"};

const std::string& pick_form(const Forms& forms, double synonym_prob, Rng& rng) {
  if (forms.size() == 1 || rng.uniform() >= synonym_prob) return forms.front();
  return forms[1 + rng.below(forms.size() - 1)];
}

Sentence render(const Scene& s, const SynthSpec& spec, Rng& rng) {
  const std::string& subj = pick_form(kSubjects[s.subject], spec.synonym_prob, rng);
  const std::string& verb = pick_form(kVerbs[s.verb], spec.synonym_prob, rng);
  const std::string& obj = pick_form(kObjects[s.object], spec.synonym_prob, rng);
  Sentence out;
  switch (rng.below(spec.template_count)) {
    case 0: out = {"a", subj, "is", verb, "a"}; break;
    case 1: out = {"the", subj, "is", verb, "a"}; break;
    default: out = {"there", "is", "a", subj, verb, "a"}; break;
  }
  if (s.attribute) out.push_back(kAttributes[*s.attribute]);
  out.push_back(obj);
  if (s.place) {
    out.push_back(pick_form(kPrepositions, spec.synonym_prob, rng));
    out.push_back("the");
    out.push_back(kPlaces[*s.place]);
  }
  return out;
}

/// Rows of a `count x dim` matrix with orthogonal rows of norm sqrt(dim).
std::vector<std::vector<double>> orthogonal_prototypes(std::size_t count, std::size_t dim,
                                                       Rng& rng) {
  std::vector<std::vector<double>> rows;
  while (rows.size() < count) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    for (const auto& r : rows) {
      double dot = 0;
      for (std::size_t i = 0; i < dim; ++i) dot += v[i] * r[i];
      dot /= static_cast<double>(dim);
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * r[i];
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    const double scale = std::sqrt(static_cast<double>(dim)) / norm;
    for (auto& x : v) x *= scale;
    rows.push_back(std::move(v));
  }
  return rows;
}

void add_scaled(std::vector<double>& acc, const std::vector<double>& v, double w) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * v[i];
}

}  // namespace

void SynthSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidSpec, msg); };
  auto pool = [&](const char* name, std::size_t n, std::size_t max, bool allow_zero) {
    if ((n == 0 && !allow_zero) || n > max) {
      fail(std::string(name) + " must be in [" + (allow_zero ? "0" : "1") + ", " +
           std::to_string(max) + "], got " + std::to_string(n));
    }
  };
  pool("subjects", subjects, kSubjects.size(), false);
  pool("verbs", verbs, kVerbs.size(), false);
  pool("objects", objects, kObjects.size(), false);
  pool("places", places, kPlaces.size(), true);
  pool("attributes", attributes, kAttributes.size(), true);
  if (train_videos == 0) fail("train_videos must be positive");
  for (double p : {place_prob, attribute_prob, synonym_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) fail("probabilities must be in [0, 1]");
  }
  if (template_count < 1 || template_count > 3) fail("template_count must be in [1, 3]");
  if (captions_min < 1 || captions_min > captions_max) fail("need 1 <= captions_min <= captions_max");
  if (frames == 0) fail("frames must be positive");
  if (appearance_dim < subjects + objects + places + attributes) {
    fail("appearance_dim must be at least the number of appearance concepts");
  }
  if (motion_dim < verbs + subjects) fail("motion_dim must be at least verbs + subjects");
  if (!(noise_sigma >= 0.0) || !(frame_jitter >= 0.0)) fail("noise must be nonnegative");
  const std::size_t place_options = places > 0 && place_prob > 0 ? places + (place_prob < 1 ? 1 : 0) : 1;
  const std::size_t attr_options =
      attributes > 0 && attribute_prob > 0 ? attributes + (attribute_prob < 1 ? 1 : 0) : 1;
  const std::size_t distinct = subjects * verbs * objects * place_options * attr_options;
  if (distinct < train_videos + val_videos + test_videos) {
    fail("grammar yields only " + std::to_string(distinct) + " distinct scenes");
  }
}

SynthSpec parse_synth_spec(std::string_view json_text) {
  SynthSpec spec;
  detail::json j;
  try {
    j = detail::json::parse(json_text);
  } catch (const detail::json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, e.what());
  }
  detail::FieldBinder(std::string("synth"), ErrorCode::InvalidSpec)
      .bind("train_videos", spec.train_videos)
      .bind("val_videos", spec.val_videos)
      .bind("test_videos", spec.test_videos)
      .bind("subjects", spec.subjects)
      .bind("verbs", spec.verbs)
      .bind("objects", spec.objects)
      .bind("places", spec.places)
      .bind("attributes", spec.attributes)
      .bind("place_prob", spec.place_prob)
      .bind("attribute_prob", spec.attribute_prob)
      .bind("synonym_prob", spec.synonym_prob)
      .bind("template_count", spec.template_count)
      .bind("captions_min", spec.captions_min)
      .bind("captions_max", spec.captions_max)
      .bind("frames", spec.frames)
      .bind("appearance_dim", spec.appearance_dim)
      .bind("motion_dim", spec.motion_dim)
      .bind("noise_sigma", spec.noise_sigma)
      .bind("frame_jitter", spec.frame_jitter)
      .bind("category_count", spec.category_count)
      .apply(j);
  spec.validate();
  return spec;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::MissingFile, "cannot open synth spec " + path.string());
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_synth_spec(text);
}

std::string to_json(const SynthSpec& s) {
  detail::json j = {{"train_videos", s.train_videos},
                    {"val_videos", s.val_videos},
                    {"test_videos", s.test_videos},
                    {"subjects", s.subjects},
                    {"verbs", s.verbs},
                    {"objects", s.objects},
                    {"places", s.places},
                    {"attributes", s.attributes},
                    {"place_prob", s.place_prob},
                    {"attribute_prob", s.attribute_prob},
                    {"synonym_prob", s.synonym_prob},
                    {"template_count", s.template_count},
                    {"captions_min", s.captions_min},
                    {"captions_max", s.captions_max},
                    {"frames", s.frames},
                    {"appearance_dim", s.appearance_dim},
                    {"motion_dim", s.motion_dim},
                    {"noise_sigma", s.noise_sigma},
                    {"frame_jitter", s.frame_jitter},
                    {"category_count", s.category_count}};
  return j.dump(2);
}

SynthResult synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Rng root(seed);
  const std::size_t total = spec.train_videos + spec.val_videos + spec.test_videos;

  // Distinct scenes.
  Rng scene_rng = root.split(1);
  std::set<Scene> seen;
  std::vector<Scene> scenes;
  while (scenes.size() < total) {
    Scene s;
    s.subject = scene_rng.below(spec.subjects);
    s.verb = scene_rng.below(spec.verbs);
    s.object = scene_rng.below(spec.objects);
    if (spec.places > 0 && scene_rng.uniform() < spec.place_prob) {
      s.place = scene_rng.below(spec.places);
    }
    if (spec.attributes > 0 && scene_rng.uniform() < spec.attribute_prob) {
      s.attribute = scene_rng.below(spec.attributes);
    }
    if (seen.insert(s).second) scenes.push_back(s);
  }

  // Prototypes: appearance rows are subjects, objects, places, attributes;
  // motion rows are verbs then subjects.
  Rng proto_rng = root.split(2);
  const auto appearance =
      orthogonal_prototypes(spec.subjects + spec.objects + spec.places + spec.attributes,
                            spec.appearance_dim, proto_rng);
  const auto motion = orthogonal_prototypes(spec.verbs + spec.subjects, spec.motion_dim, proto_rng);
  auto base_features = [&](const Scene& s) {
    std::vector<double> app(spec.appearance_dim, 0.0), mot(spec.motion_dim, 0.0);
    add_scaled(app, appearance[s.subject], 1.0);
    add_scaled(app, appearance[spec.subjects + s.object], 1.0);
    if (s.place) add_scaled(app, appearance[spec.subjects + spec.objects + *s.place], 1.0);
    if (s.attribute) {
      add_scaled(app, appearance[spec.subjects + spec.objects + spec.places + *s.attribute], 1.0);
    }
    add_scaled(mot, motion[s.verb], 1.0);
    add_scaled(mot, motion[spec.verbs + s.subject], 0.5);
    return std::make_pair(app, mot);
  };

  std::vector<std::vector<double>> bases;
  bases.reserve(total);
  for (const auto& s : scenes) {
    auto [app, mot] = base_features(s);
    app.insert(app.end(), mot.begin(), mot.end());
    bases.push_back(std::move(app));
  }
  for (std::size_t a = 0; a < total; ++a) {
    for (std::size_t b = a + 1; b < total; ++b) {
      double d = 0;
      for (std::size_t i = 0; i < bases[a].size(); ++i) {
        const double diff = bases[a][i] - bases[b][i];
        d += diff * diff;
      }
      if (d < 1e-6) {
        throw Error(ErrorCode::InvalidSpec, "scenes " + std::to_string(a) + " and " +
                                                std::to_string(b) + " have identical features");
      }
    }
  }

  SynthResult result;
  Corpus& corpus = result.corpus;
  corpus.modalities = {{"appearance", spec.appearance_dim, spec.frames, "features.bin"},
                       {"motion", spec.motion_dim, spec.frames, "features.bin"}};
  if (spec.category_count > 0) corpus.category_count = spec.category_count;

  for (const auto& fw : kFunctionWords) corpus.lexicon.add(fw.word, fw.pos);
  auto add_forms = [&](const std::vector<Forms>& pool, std::size_t n, Pos pos) {
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& w : pool[i]) corpus.lexicon.add(w, pos);
    }
  };
  add_forms(kSubjects, spec.subjects, Pos::Noun);
  add_forms(kVerbs, spec.verbs, Pos::Verb);
  add_forms(kObjects, spec.objects, Pos::Noun);
  for (std::size_t i = 0; i < spec.places; ++i) corpus.lexicon.add(kPlaces[i], Pos::Noun);
  for (std::size_t i = 0; i < spec.attributes; ++i) {
    corpus.lexicon.add(kAttributes[i], Pos::Adjective);
  }

  const Rng caption_root = root.split(3);
  const Rng feature_root = root.split(4);
  for (std::size_t v = 0; v < total; ++v) {
    const Scene& s = scenes[v];
    VideoRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "video%04zu", v);
    rec.video_id = id;
    rec.split = v < spec.train_videos                    ? Split::Train
                : v < spec.train_videos + spec.val_videos ? Split::Val
                                                          : Split::Test;
    if (spec.category_count > 0) rec.category = static_cast<int>(s.subject % spec.category_count);

    Rng crng = caption_root.split(v);
    const std::size_t count =
        spec.captions_min + crng.below(spec.captions_max - spec.captions_min + 1);
    for (std::size_t c = 0; c < count; ++c) rec.captions.push_back(render(s, spec, crng));

    Rng frng = feature_root.split(v);
    auto [app, mot] = base_features(s);
    auto frames_of = [&](const std::vector<double>& base) {
      Tensor<float> t({spec.frames, base.size()});
      for (std::size_t k = 0; k < spec.frames; ++k) {
        const double jitter = 1.0 + spec.frame_jitter * frng.normal();
        for (std::size_t i = 0; i < base.size(); ++i) {
          t.at(k, i) = static_cast<float>(base[i] * jitter + spec.noise_sigma * frng.normal());
        }
      }
      return t;
    };
    rec.features.modalities.push_back(frames_of(app));
    rec.features.modalities.push_back(frames_of(mot));
    rec.features.category = rec.category;
    corpus.videos.push_back(std::move(rec));

    std::vector<std::vector<std::string>> concepts = {kSubjects[s.subject], kVerbs[s.verb],
                                                      kObjects[s.object]};
    if (s.place) concepts.push_back({kPlaces[*s.place]});
    result.visual_concepts.push_back(std::move(concepts));
  }

  corpus.vocab = build_vocabulary(corpus.lexicon, corpus.videos);
  result.scenes = std::move(scenes);
  return result;
}

double concept_recall(const std::vector<std::vector<std::string>>& concepts,
                      const Sentence& words) {
  if (concepts.empty()) return 1.0;
  std::size_t hit = 0;
  for (const auto& forms : concepts) {
    const bool found = std::any_of(forms.begin(), forms.end(), [&](const std::string& f) {
      return std::find(words.begin(), words.end(), f) != words.end();
    });
    if (found) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(concepts.size());
}

}  // namespace nacf
