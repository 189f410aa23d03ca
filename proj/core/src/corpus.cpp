#include "nacf/corpus.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <json.hpp>

namespace nacf {

using json = nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void append_f32(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float read_f32(const std::string& bytes, std::size_t offset) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return std::bit_cast<float>(bits);
}

Sentence tokenize(const std::string& text) {
  Sentence words;
  std::istringstream is(text);
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

std::string join(const Sentence& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += words[i];
  }
  return s;
}

}  // namespace

std::string_view to_string(Pos pos) noexcept {
  switch (pos) {
    case Pos::Noun: return "noun";
    case Pos::Verb: return "verb";
    case Pos::Adjective: return "adjective";
    case Pos::Adverb: return "adverb";
    case Pos::Determiner: return "determiner";
    case Pos::Other: return "other";
  }
  return "other";
}

Pos parse_pos(std::string_view tag) {
  for (Pos p : {Pos::Noun, Pos::Verb, Pos::Adjective, Pos::Adverb, Pos::Determiner, Pos::Other}) {
    if (to_string(p) == tag) return p;
  }
  throw Error(ErrorCode::FormatError, "unknown part-of-speech tag '" + std::string(tag) + "'");
}

PosLexicon::PosLexicon()
    : stoplist_{"is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had",
                "does", "do", "did"} {}

void PosLexicon::add(const std::string& word, Pos pos) {
  if (index_.count(word)) {
    throw Error(ErrorCode::FormatError, "word '" + word + "' tagged twice in lexicon");
  }
  if (word.empty() || word.find_first_of(" \t\n") != std::string::npos) {
    throw Error(ErrorCode::FormatError, "invalid lexicon word '" + word + "'");
  }
  index_.emplace(word, pos);
  entries_.emplace_back(word, pos);
}

std::optional<Pos> PosLexicon::tag(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

PosLexicon PosLexicon::read_tsv(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  PosLexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error(ErrorCode::FormatError,
                  path.string() + ":" + std::to_string(lineno) + ": expected word<TAB>tag");
    }
    lex.add(line.substr(0, tab), parse_pos(line.substr(tab + 1)));
  }
  return lex;
}

void PosLexicon::write_tsv(const std::filesystem::path& path) const {
  std::string out;
  for (const auto& [word, pos] : entries_) {
    out += word;
    out += '\t';
    out += to_string(pos);
    out += '\n';
  }
  write_file(path, out);
}

Vocabulary::Vocabulary()
    : words_{"<pad>", "[mask]", "[visual]", "<bos>", "<eos>"}, freq_(words_.size(), 0) {
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], static_cast<int>(i));
}

Vocabulary::Vocabulary(std::span<const std::string> words) : Vocabulary() {
  for (const auto& w : words) {
    if (index_.count(w)) {
      throw Error(ErrorCode::FormatError, "duplicate or reserved vocabulary word '" + w + "'");
    }
    index_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(w);
  }
  freq_.assign(words_.size(), 0);
}

std::optional<int> Vocabulary::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view word) const {
  if (auto i = find(word)) return *i;
  throw Error(ErrorCode::UnknownToken, "'" + std::string(word) + "' is not in the vocabulary");
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw Error(ErrorCode::IndexOutOfVocab, "token id " + std::to_string(id));
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const Sentence& words) const {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

Sentence Vocabulary::words_of(std::span<const int> ids) const {
  Sentence out;
  for (int i : ids) {
    if (!is_reserved(i)) out.push_back(word(i));
  }
  return out;
}

std::string Vocabulary::render(std::span<const int> ids) const { return join(words_of(ids)); }

void Vocabulary::count(std::span<const int> ids) {
  for (int i : ids) ++freq_.at(static_cast<std::size_t>(i));
}

std::uint64_t Vocabulary::hash() const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& w : words_) {
    for (unsigned char c : w) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xFF;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string_view to_string(Split split) noexcept {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw Error(ErrorCode::UnknownSplit, "unknown split '" + std::string(name) + "'");
}

std::vector<const VideoRecord*> Corpus::split(Split which) const {
  std::vector<const VideoRecord*> out;
  for (const auto& v : videos) {
    if (v.split == which) out.push_back(&v);
  }
  return out;
}

std::vector<ModalitySpec> Corpus::modality_specs() const {
  std::vector<ModalitySpec> out;
  for (const auto& m : modalities) out.push_back({m.feature_dim, m.frames});
  return out;
}

const VideoRecord* Corpus::find(std::string_view video_id) const {
  for (const auto& v : videos) {
    if (v.video_id == video_id) return &v;
  }
  return nullptr;
}

Vocabulary build_vocabulary(const PosLexicon& lexicon, const std::vector<VideoRecord>& videos) {
  std::vector<std::string> words;
  words.reserve(lexicon.size());
  for (const auto& [w, pos] : lexicon.entries()) words.push_back(w);
  Vocabulary vocab(words);
  for (const auto& v : videos) {
    if (v.split != Split::Train) continue;
    for (const auto& c : v.captions) vocab.count(vocab.encode(c));
  }
  return vocab;
}

std::vector<double> length_distribution(std::span<const Sentence> captions, std::size_t max_len) {
  if (captions.empty()) throw Error(ErrorCode::EmptyInput, "no captions for length distribution");
  if (max_len == 0) throw Error(ErrorCode::InvalidConfig, "max_len must be positive");
  std::vector<double> dist(max_len, 0.0);
  for (const auto& c : captions) {
    const std::size_t len = std::clamp<std::size_t>(c.size(), 1, max_len);
    dist[len - 1] += 1.0;
  }
  for (auto& d : dist) d /= static_cast<double>(captions.size());
  return dist;
}

Corpus load_corpus(const std::filesystem::path& manifest_path, const LoadOptions& options) {
  const auto base = manifest_path.parent_path();
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, manifest_path.string() + ": " + e.what());
  }

  Corpus corpus;
  try {
    for (const auto& m : manifest.at("modalities")) {
      ModalityInfo info;
      info.name = m.at("name").get<std::string>();
      info.feature_dim = m.at("d_v").get<std::size_t>();
      info.frames = m.at("K").get<std::size_t>();
      info.file = m.at("file").get<std::string>();
      if (info.feature_dim == 0 || info.frames == 0) {
        throw Error(ErrorCode::ShapeMismatch, "modality " + info.name + " has a zero dimension");
      }
      corpus.modalities.push_back(std::move(info));
    }
    if (manifest.contains("category_count")) {
      corpus.category_count = manifest.at("category_count").get<std::size_t>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, manifest_path.string() + ": " + e.what());
  }
  if (corpus.modalities.empty()) {
    throw Error(ErrorCode::FormatError, manifest_path.string() + ": no modalities");
  }

  corpus.lexicon = PosLexicon::read_tsv(base / manifest.at("lexicon_file").get<std::string>());

  const auto captions_path = base / manifest.at("captions_file").get<std::string>();
  std::istringstream lines(read_file(captions_path));
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> untagged;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    VideoRecord rec;
    try {
      const json j = json::parse(line);
      rec.video_id = j.at("video_id").get<std::string>();
      rec.split = parse_split(j.at("split").get<std::string>());
      if (j.contains("category") && !j.at("category").is_null()) {
        rec.category = j.at("category").get<int>();
      }
      for (const auto& c : j.at("captions")) rec.captions.push_back(tokenize(c.get<std::string>()));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::FormatError,
                  captions_path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (rec.category && corpus.category_count &&
        (*rec.category < 0 || static_cast<std::size_t>(*rec.category) >= *corpus.category_count)) {
      throw Error(ErrorCode::UnknownCategory, captions_path.string() + ":" +
                                                  std::to_string(lineno) + ": category " +
                                                  std::to_string(*rec.category));
    }
    if (rec.captions.empty()) {
      throw Error(ErrorCode::EmptySentence,
                  captions_path.string() + ":" + std::to_string(lineno) + ": no captions");
    }
    for (auto& c : rec.captions) {
      if (c.empty()) {
        throw Error(ErrorCode::EmptySentence,
                    captions_path.string() + ":" + std::to_string(lineno) + ": empty caption");
      }
      for (const auto& w : c) {
        if (!corpus.lexicon.tag(w)) {
          untagged.push_back("'" + w + "' (line " + std::to_string(lineno) + ")");
        }
      }
      if (c.size() > options.max_len) {
        c.resize(options.max_len);
        ++corpus.truncated_captions;
      }
    }
    corpus.videos.push_back(std::move(rec));
  }
  if (!untagged.empty()) {
    std::string msg = "words missing from lexicon: ";
    for (std::size_t i = 0; i < untagged.size() && i < 20; ++i) {
      if (i) msg += ", ";
      msg += untagged[i];
    }
    if (untagged.size() > 20) msg += ", ...";
    throw Error(ErrorCode::UnknownToken, msg);
  }
  if (corpus.videos.empty()) throw Error(ErrorCode::EmptyCorpus, "no videos in " + captions_path.string());

  // Each file holds, per video in caption-file order, the blocks of every
  // modality that names it, in manifest order.
  std::map<std::string, std::vector<std::size_t>> by_file;
  for (std::size_t m = 0; m < corpus.modalities.size(); ++m) {
    by_file[corpus.modalities[m].file].push_back(m);
  }
  for (auto& v : corpus.videos) v.features.modalities.resize(corpus.modalities.size());
  for (const auto& [file, mods] : by_file) {
    const auto path = base / file;
    const std::string bytes = read_file(path);
    std::size_t per_video = 0;
    for (auto m : mods) per_video += corpus.modalities[m].frames * corpus.modalities[m].feature_dim;
    const std::size_t expected = per_video * corpus.videos.size() * 4;
    if (bytes.size() != expected) {
      throw Error(ErrorCode::ShapeMismatch, "feature file " + path.string() + " has " +
                                                std::to_string(bytes.size()) + " bytes, expected " +
                                                std::to_string(expected));
    }
    std::size_t offset = 0;
    for (auto& v : corpus.videos) {
      for (auto m : mods) {
        const auto& info = corpus.modalities[m];
        std::vector<float> data(info.frames * info.feature_dim);
        for (auto& x : data) {
          x = read_f32(bytes, offset);
          offset += 4;
        }
        v.features.modalities[m] = Tensor<float>({info.frames, info.feature_dim}, std::move(data));
      }
    }
  }
  for (auto& v : corpus.videos) v.features.category = v.category;

  corpus.vocab = build_vocabulary(corpus.lexicon, corpus.videos);
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["captions_file"] = "captions.jsonl";
  manifest["lexicon_file"] = "lexicon.tsv";
  if (corpus.category_count) manifest["category_count"] = *corpus.category_count;
  json mods = json::array();
  for (const auto& m : corpus.modalities) {
    mods.push_back({{"name", m.name}, {"d_v", m.feature_dim}, {"K", m.frames}, {"file", m.file}});
  }
  manifest["modalities"] = mods;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  std::string captions;
  for (const auto& v : corpus.videos) {
    json j;
    j["video_id"] = v.video_id;
    j["split"] = std::string(to_string(v.split));
    if (v.category) j["category"] = *v.category;
    json caps = json::array();
    for (const auto& c : v.captions) caps.push_back(join(c));
    j["captions"] = caps;
    captions += j.dump();
    captions += '\n';
  }
  write_file(dir / "captions.jsonl", captions);
  corpus.lexicon.write_tsv(dir / "lexicon.tsv");

  std::map<std::string, std::vector<std::size_t>> by_file;
  for (std::size_t m = 0; m < corpus.modalities.size(); ++m) {
    by_file[corpus.modalities[m].file].push_back(m);
  }
  for (const auto& [file, mods] : by_file) {
    std::string bytes;
    for (const auto& v : corpus.videos) {
      for (auto m : mods) {
        const auto& t = v.features.modalities.at(m);
        if (t.rows() != corpus.modalities[m].frames || t.cols() != corpus.modalities[m].feature_dim) {
          throw Error(ErrorCode::ShapeMismatch, "video " + v.video_id + " modality " +
                                                    corpus.modalities[m].name + " has shape " +
                                                    shape_string(t.shape()));
        }
        for (float x : t.data()) append_f32(bytes, x);
      }
    }
    write_file(dir / file, bytes);
  }
}

}  // namespace nacf
