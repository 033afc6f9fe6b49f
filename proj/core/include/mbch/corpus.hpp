#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mbch/errors.hpp"

namespace mbch {

struct Sentence {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;  // parallel to tokens
  int label = 0;
  std::size_t source_line = 0;
};

struct Dataset {
  std::string name;
  std::vector<Sentence> sentences;
  int num_classes = 0;
  std::vector<std::string> label_names;  // dense index -> original label text
  std::set<std::string> vocabulary;

  std::size_t size() const { return sentences.size(); }
};

enum class DatasetFormat { raw, tagged };

/// Lowercases, splits punctuation characters into their own tokens, and
/// otherwise splits on whitespace. All-whitespace input is an error.
std::vector<std::string> tokenize(const std::string& text);

/// raw:    "label<TAB>text" per line; tokens get the fallback tag "X".
/// tagged: "label<TAB>token_TAG token_TAG ..." per line, split on the final
///         underscore of each unit.
/// Labels map to dense indices in first-seen order.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format);

DatasetFormat parse_dataset_format(const std::string& name);

/// k disjoint index sets covering the dataset; per-class counts per fold
/// differ by at most one.
struct FoldSplit {
  std::vector<std::vector<std::size_t>> folds;

  std::size_t k() const { return folds.size(); }
  /// All indices except those in fold `held_out`, in ascending order.
  std::vector<std::size_t> training_indices(std::size_t held_out) const;
};

/// Seeded per-class shuffle, then round-robin assignment to folds.
FoldSplit stratified_kfold(std::span<const int> labels, int num_classes,
                           std::size_t k, std::uint64_t seed,
                           std::span<const std::string> class_names = {});
FoldSplit stratified_kfold(const Dataset& dataset, std::size_t k,
                           std::uint64_t seed);

/// "index,fold" CSV, rows in ascending index order.
void write_fold_csv(const std::filesystem::path& path, const FoldSplit& split);

/// Seeded shuffle of `subset` chopped into batch_size chunks; the last
/// partial chunk is kept. Shared by token-level and embedded-level batching
/// so both see identical batch composition.
std::vector<std::vector<std::size_t>> chunk_indices(
    std::span<const std::size_t> subset, std::size_t batch_size,
    std::uint64_t shuffle_seed);

struct PaddedBatch {
  std::vector<std::vector<std::string>> tokens;  // [B][padded_len]
  std::vector<std::vector<std::string>> tags;
  std::vector<std::size_t> valid_len;  // original sentence lengths
  std::vector<int> labels;
  std::size_t padded_len = 0;
};

/// Batches padded with "<pad>"/"X" to max(longest sentence in batch,
/// pad_to_min).
std::vector<PaddedBatch> batch_iter(const Dataset& dataset,
                                    std::span<const std::size_t> subset,
                                    std::size_t batch_size,
                                    std::size_t pad_to_min,
                                    std::uint64_t shuffle_seed);

}  // namespace mbch
