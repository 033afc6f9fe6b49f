#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mbch/tensor.hpp"

namespace mbch {

inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kFallbackTag = "X";
inline constexpr std::size_t kLexiconSlots = 7;

/// Pretrained word vectors (word2vec/GloVe text layout). Lookups of absent
/// words produce a deterministic pseudo-random vector with components in
/// [-0.25, 0.25], seeded by (word, oov_seed).
struct WordVectorTable {
  std::size_t dim = 0;
  std::unordered_map<std::string, std::vector<double>> entries;
  std::uint64_t oov_seed = 0;
  std::size_t duplicates_skipped = 0;

  bool contains(const std::string& word) const {
    return entries.find(word) != entries.end();
  }
  std::vector<double> lookup(const std::string& word) const;
};

/// Parses the word2vec text layout: an optional "count dim" header line,
/// then one "word v1 v2 ... vM" line per word. Duplicate words keep the
/// first occurrence and bump duplicates_skipped.
WordVectorTable load_word_vectors(const std::filesystem::path& path,
                                  std::uint64_t oov_seed = 0);

/// Unigram sentiment scores with the observed raw range of the file.
struct Lexicon {
  std::string name;
  std::unordered_map<std::string, double> entries;
  double observed_min = 0.0;
  double observed_max = 0.0;

  bool contains(const std::string& word) const {
    return entries.find(word) != entries.end();
  }
  std::size_t size() const { return entries.size(); }
};

/// Parses "term<TAB>score" lines; extra tab-separated fields are ignored.
/// Terms containing whitespace (n-grams) are skipped.
Lexicon load_lexicon(const std::filesystem::path& path,
                     const std::string& name);

/// Min-max map of the raw score onto [-1, 1]. Absent words and degenerate
/// lexicons (observed_min == observed_max) score 0.
double normalized_score(const Lexicon& lex, const std::string& word);

/// Exactly seven lexicons in a fixed declared order.
class LexiconSet {
 public:
  explicit LexiconSet(std::vector<Lexicon> lexicons);

  const std::vector<Lexicon>& lexicons() const { return lexicons_; }
  std::vector<std::string> names() const;

 private:
  std::vector<Lexicon> lexicons_;
};

/// Ordered tag list with the reserved fallback tag "X" present exactly once.
class PosTagset {
 public:
  /// 36 Penn Treebank tags plus the fallback, dim 37.
  static PosTagset penn_treebank();
  /// Tags in the given order; the fallback is appended when absent.
  static PosTagset from_tags(std::vector<std::string> tags);

  std::size_t dim() const { return tags_.size(); }
  const std::vector<std::string>& tags() const { return tags_; }
  /// Index of the tag, or of the fallback when the tag is unknown.
  std::size_t index_of(const std::string& tag) const;

 private:
  std::vector<std::string> tags_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// One-hot vector of length tagset.dim() at the tag's index (fallback for
/// unknown tags).
std::vector<double> pos_vector(const PosTagset& tagset, const std::string& tag);

/// The composed embedding tables. Total dimension
/// M = word dim + tagset dim + 7; with no lexicons loaded the trailing seven
/// coordinates are zero.
struct IwvTable {
  WordVectorTable words;
  PosTagset tagset = PosTagset::penn_treebank();
  std::optional<LexiconSet> lexicons;

  std::size_t dim() const { return words.dim + tagset.dim() + kLexiconSlots; }
};

/// [word vector | POS one-hot | 7 normalized lexicon scores], in that order.
/// The reserved "<pad>" token composes to the all-zero vector.
std::vector<double> compose_iwv(const std::string& word,
                                const std::string& tag, const IwvTable& table);

/// Row i is compose_iwv(tokens[i], tags[i]); shape [n x M].
Tensor embed_sentence(std::span<const std::string> tokens,
                      std::span<const std::string> tags,
                      const IwvTable& table);

/// Writes composed vectors for the given (word, tag) pairs in the word-vector
/// text layout, keyed "word_TAG", preceded by "#lexicon-order:" and
/// "#tagset:" comment lines and a mandatory "count dim" header. Output is
/// byte-stable for identical inputs.
void write_iwv_cache(
    const std::filesystem::path& path, const IwvTable& table,
    std::span<const std::pair<std::string, std::string>> vocab);

}  // namespace mbch
