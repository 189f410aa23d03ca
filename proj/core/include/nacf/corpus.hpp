#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nacf/model.hpp"

namespace nacf {

using Sentence = std::vector<std::string>;

enum class Pos { Noun, Verb, Adjective, Adverb, Determiner, Other };

std::string_view to_string(Pos pos) noexcept;
Pos parse_pos(std::string_view tag);

/// Word -> part-of-speech map plus the copula/auxiliary stoplist whose
/// members never count as visual words even when tagged as verbs.
class PosLexicon {
 public:
  PosLexicon();

  void add(const std::string& word, Pos pos);
  std::optional<Pos> tag(std::string_view word) const;
  bool stopped(std::string_view word) const { return stoplist_.count(std::string(word)) > 0; }
  const std::set<std::string>& stoplist() const noexcept { return stoplist_; }

  /// Entries in insertion (file) order.
  const std::vector<std::pair<std::string, Pos>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  static PosLexicon read_tsv(const std::filesystem::path& path);
  void write_tsv(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, Pos>> entries_;
  std::unordered_map<std::string, Pos> index_;
  std::set<std::string> stoplist_;
};

/// Token <-> id bijection. Ids 0..4 are pad, [mask], [visual], begin, end.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::span<const std::string> words);

  std::size_t size() const noexcept { return words_.size(); }
  std::optional<int> find(std::string_view word) const;
  /// Throws UnknownToken.
  int id(std::string_view word) const;
  const std::string& word(int id) const;
  static bool is_reserved(int id) noexcept { return id >= 0 && id < token::kReservedCount; }

  std::vector<int> encode(const Sentence& words) const;
  /// Space-joined words; reserved tokens are dropped.
  std::string render(std::span<const int> ids) const;
  Sentence words_of(std::span<const int> ids) const;

  /// Count of non-reserved entries.
  std::size_t word_count() const noexcept { return words_.size() - token::kReservedCount; }

  void count(std::span<const int> ids);
  std::size_t frequency(int id) const { return freq_.at(static_cast<std::size_t>(id)); }

  /// FNV-1a over the ordered word list; identifies the id assignment.
  std::uint64_t hash() const noexcept;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::size_t> freq_;
};

enum class Split { Train, Val, Test };
std::string_view to_string(Split split) noexcept;
Split parse_split(std::string_view name);

struct VideoRecord {
  std::string video_id;
  Split split = Split::Train;
  std::optional<int> category;
  FeatureSet features;
  std::vector<Sentence> captions;
};

struct ModalityInfo {
  std::string name;
  std::size_t feature_dim = 0;
  std::size_t frames = 0;
  std::string file;
};

struct Corpus {
  std::vector<ModalityInfo> modalities;
  std::optional<std::size_t> category_count;
  std::vector<VideoRecord> videos;
  PosLexicon lexicon;
  Vocabulary vocab;
  /// Captions shortened to the maximum length while loading.
  std::size_t truncated_captions = 0;

  std::vector<const VideoRecord*> split(Split which) const;
  std::vector<ModalitySpec> modality_specs() const;
  /// Finds a video by id; nullptr when absent.
  const VideoRecord* find(std::string_view video_id) const;
};

struct LoadOptions {
  /// Captions longer than this are truncated (and counted).
  std::size_t max_len = 20;
};

/// Reads manifest.json and the files it references. Every caption word
/// must be tagged by the lexicon; the vocabulary is the lexicon's word
/// list in file order after the reserved tokens.
Corpus load_corpus(const std::filesystem::path& manifest, const LoadOptions& options = {});

/// Writes manifest.json, captions.jsonl, lexicon.tsv and the feature
/// files into `dir`. Loading the result and saving again is byte-identical.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

/// L*: share of the captions having each length 1..max_len (lengths
/// above max_len count as max_len).
std::vector<double> length_distribution(std::span<const Sentence> captions, std::size_t max_len);

/// Builds the lexicon-ordered vocabulary and training-split frequencies.
Vocabulary build_vocabulary(const PosLexicon& lexicon, const std::vector<VideoRecord>& videos);

}  // namespace nacf
