#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mbch/corpus.hpp"
#include "mbch/iwv.hpp"
#include "mbch/model.hpp"

namespace mbch {

struct TrainConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 16;
  std::size_t epochs = 25;
  double max_norm = 0.2;
  std::uint64_t seed = 0;

  /// Empty when the config is valid; otherwise one message per violation.
  std::vector<std::string> violations() const;
};

/// Adam with bias correction; one moment pair per parameter coordinate.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, const TrainConfig& config);

  /// Applies one update from the gradients currently stored on the
  /// parameters. Gradients are left untouched.
  void step();
  std::size_t steps() const { return t_; }

 private:
  struct Slot {
    Parameter* param;
    std::vector<double> m;
    std::vector<double> v;
  };
  std::vector<Slot> slots_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// Rescales every column of a 2-D weight whose L2 norm exceeds s down to
/// norm s (the per-class constraint on the softmax head).
void max_norm_constrain(Tensor weight, double s);

/// A sentence already taken through the embedding pipeline. `features` keeps
/// the natural length; padding to the largest filter size happens at batch
/// assembly, where appended zero rows mean exactly "<pad>" tokens.
struct EmbeddedSentence {
  Tensor features;  // [n x M], requires_grad off
  std::size_t valid_len = 0;
  int label = 0;
};

struct EmbeddedDataset {
  std::string name;
  std::vector<EmbeddedSentence> sentences;
  std::size_t embed_dim = 0;
  int num_classes = 0;
  std::vector<std::string> label_names;

  std::size_t size() const { return sentences.size(); }
  std::vector<int> labels() const;
  /// Shallow copy of the selected sentences (tensor storage is shared).
  EmbeddedDataset subset(std::span<const std::size_t> indices) const;
};

EmbeddedDataset embed_dataset(const Dataset& dataset, const IwvTable& table);

/// Copy of x with zero rows appended up to min_rows; x itself when already
/// tall enough.
Tensor pad_rows(const Tensor& x, std::size_t min_rows);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::size_t steps = 0;
};

/// Called after each optimizer step (constraint already applied).
using StepObserver = std::function<void(
    std::size_t epoch, std::size_t step, double batch_loss, MbchModel& model)>;

/// Minibatch training with per-epoch reshuffles seeded by
/// derive_seed(config.seed, epoch). Raises DivergenceError on a non-finite
/// loss. The observer, when set, fires after every step.
TrainResult train(MbchModel& model, const EmbeddedDataset& data,
                  const TrainConfig& config,
                  const StepObserver& observer = {});

struct EvalResult {
  double accuracy = 0.0;
  std::vector<int> predictions;  // aligned with the evaluated indices
};

/// Infer-mode accuracy over the whole dataset (or the given subset). Never
/// mutates the model, including running statistics.
EvalResult evaluate(MbchModel& model, const EmbeddedDataset& data,
                    std::span<const std::size_t> indices = {});

struct FoldResult {
  std::size_t fold = 0;
  double accuracy = 0.0;
  std::vector<EpochMetrics> epochs;
};

struct CvResult {
  std::vector<FoldResult> folds;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // population standard deviation across folds
};

/// Stratified k-fold cross-validation. Fold f trains a fresh model with
/// seed derive_seed(master_seed, f), evaluates on the held-out fold, and is
/// independent of every other fold, so `parallel` worker threads produce
/// results identical to a serial run.
CvResult run_cv(const ModelConfig& model_config,
                const TrainConfig& train_config, const EmbeddedDataset& data,
                std::size_t k, std::size_t parallel = 1);

/// Named filter-size combinations of the branch sweep.
const std::map<std::string, std::vector<std::size_t>>& combo_table();

/// Parses "A,C" or "A..H" (inclusive range in table order) or "all" into
/// validated combo names. Unknown names raise ConfigError listing the table.
std::vector<std::string> parse_combo_list(const std::string& text);

struct SweepCell {
  std::string combo;
  std::vector<std::size_t> filter_sizes;
  std::size_t feature_maps = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
};

struct SweepResult {
  std::vector<SweepCell> cells;
};

/// Cross-validates one cell per (combo, feature-map count) pair, reusing the
/// base configs for everything else.
SweepResult run_sweep(const ModelConfig& model_config,
                      const TrainConfig& train_config,
                      const EmbeddedDataset& data,
                      std::span<const std::string> combos,
                      std::span<const std::size_t> feature_map_values,
                      std::size_t k, std::size_t parallel = 1);

// CSV emitters. All floats go through format_g17 so identical runs write
// byte-identical files.
void write_metrics_csv(const std::filesystem::path& path,
                       std::span<const EpochMetrics> epochs);
void write_cv_csv(const std::filesystem::path& path, const CvResult& result);
void write_sweep_csv(const std::filesystem::path& path,
                     const SweepResult& result);

}  // namespace mbch
