#include "mbch/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

#include "mbch/iwv.hpp"

namespace mbch {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      tokens.push_back(current);
      current.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      tokens.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  if (tokens.empty()) {
    throw ContractError("tokenize: empty input");
  }
  return tokens;
}

DatasetFormat parse_dataset_format(const std::string& name) {
  if (name == "raw") return DatasetFormat::raw;
  if (name == "tagged") return DatasetFormat::tagged;
  throw ConfigError("unknown dataset format '" + name +
                    "' (expected raw or tagged)");
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file: " + path.string());

  Dataset ds;
  ds.name = path.stem().string();
  const std::string path_str = path.string();
  std::unordered_map<std::string, int> label_index;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw ParseError(path_str, lineno, "expected label<TAB>text");
    }
    const std::string label_text = line.substr(0, tab);
    const std::string body = line.substr(tab + 1);

    Sentence s;
    s.source_line = lineno;
    if (format == DatasetFormat::raw) {
      try {
        s.tokens = tokenize(body);
      } catch (const ContractError&) {
        throw ParseError(path_str, lineno, "sentence has no tokens");
      }
      s.tags.assign(s.tokens.size(), kFallbackTag);
    } else {
      std::istringstream units(body);
      std::string unit;
      while (units >> unit) {
        const auto us = unit.rfind('_');
        if (us == std::string::npos || us == 0 || us + 1 == unit.size()) {
          throw ParseError(path_str, lineno,
                           "expected token_TAG, got '" + unit + "'");
        }
        s.tokens.push_back(unit.substr(0, us));
        s.tags.push_back(unit.substr(us + 1));
      }
      if (s.tokens.empty()) {
        throw ParseError(path_str, lineno, "sentence has no tokens");
      }
    }

    auto [it, inserted] =
        label_index.emplace(label_text, static_cast<int>(ds.label_names.size()));
    if (inserted) ds.label_names.push_back(label_text);
    s.label = it->second;

    for (const std::string& t : s.tokens) ds.vocabulary.insert(t);
    ds.sentences.push_back(std::move(s));
  }
  if (ds.sentences.empty()) {
    throw ParseError(path_str, 1, "dataset contains no sentences");
  }
  ds.num_classes = static_cast<int>(ds.label_names.size());
  return ds;
}

std::vector<std::size_t> FoldSplit::training_indices(
    std::size_t held_out) const {
  if (held_out >= folds.size()) {
    throw IndexError("fold " + std::to_string(held_out) + " out of range [0, " +
                     std::to_string(folds.size()) + ")");
  }
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (f == held_out) continue;
    out.insert(out.end(), folds[f].begin(), folds[f].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

FoldSplit stratified_kfold(std::span<const int> labels, int num_classes,
                           std::size_t k, std::uint64_t seed,
                           std::span<const std::string> class_names) {
  if (k < 2) throw ConfigError("stratified k-fold needs k >= 2");
  std::vector<std::vector<std::size_t>> by_class(
      static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || c >= num_classes) {
      throw IndexError("label " + std::to_string(c) + " at index " +
                       std::to_string(i) + " outside [0, " +
                       std::to_string(num_classes) + ")");
    }
    by_class[static_cast<std::size_t>(c)].push_back(i);
  }

  FoldSplit split;
  split.folds.assign(k, {});
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.size() < k) {
      const std::string name = c < class_names.size()
                                   ? "'" + class_names[c] + "'"
                                   : std::to_string(c);
      throw ContractError("class " + name + " has " +
                          std::to_string(members.size()) +
                          " samples, fewer than k=" + std::to_string(k));
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < members.size(); ++i) {
      split.folds[i % k].push_back(members[i]);
    }
  }
  return split;
}

FoldSplit stratified_kfold(const Dataset& dataset, std::size_t k,
                           std::uint64_t seed) {
  std::vector<int> labels;
  labels.reserve(dataset.size());
  for (const Sentence& s : dataset.sentences) labels.push_back(s.label);
  return stratified_kfold(labels, dataset.num_classes, k, seed,
                          dataset.label_names);
}

void write_fold_csv(const std::filesystem::path& path,
                    const FoldSplit& split) {
  std::size_t total = 0;
  for (const auto& fold : split.folds) total += fold.size();
  std::vector<std::size_t> assignment(total);
  for (std::size_t f = 0; f < split.folds.size(); ++f) {
    for (std::size_t idx : split.folds[f]) assignment[idx] = f;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write fold CSV: " + path.string());
  out << "index,fold\n";
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    out << i << "," << assignment[i] << "\n";
  }
}

std::vector<std::vector<std::size_t>> chunk_indices(
    std::span<const std::size_t> subset, std::size_t batch_size,
    std::uint64_t shuffle_seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order(subset.begin(), subset.end());
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> chunks;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    chunks.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                        order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return chunks;
}

std::vector<PaddedBatch> batch_iter(const Dataset& dataset,
                                    std::span<const std::size_t> subset,
                                    std::size_t batch_size,
                                    std::size_t pad_to_min,
                                    std::uint64_t shuffle_seed) {
  std::vector<PaddedBatch> batches;
  for (const auto& chunk : chunk_indices(subset, batch_size, shuffle_seed)) {
    PaddedBatch batch;
    std::size_t longest = 0;
    for (std::size_t idx : chunk) {
      longest = std::max(longest, dataset.sentences.at(idx).tokens.size());
    }
    batch.padded_len = std::max(longest, pad_to_min);
    for (std::size_t idx : chunk) {
      const Sentence& s = dataset.sentences.at(idx);
      std::vector<std::string> toks = s.tokens;
      std::vector<std::string> tags = s.tags;
      toks.resize(batch.padded_len, kPadToken);
      tags.resize(batch.padded_len, kFallbackTag);
      batch.tokens.push_back(std::move(toks));
      batch.tags.push_back(std::move(tags));
      batch.valid_len.push_back(s.tokens.size());
      batch.labels.push_back(s.label);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace mbch
