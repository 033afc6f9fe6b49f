#include "mbch/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

#include "mbch/errors.hpp"
#include "mbch/format.hpp"
#include "mbch/hashing.hpp"

namespace mbch {

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> out;
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    out.push_back("learning_rate must be a positive finite number");
  }
  if (beta1 < 0.0 || beta1 >= 1.0) out.push_back("beta1 must lie in [0, 1)");
  if (beta2 < 0.0 || beta2 >= 1.0) out.push_back("beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) out.push_back("adam_eps must be positive");
  if (batch_size < 1) out.push_back("batch_size must be >= 1");
  if (epochs < 1) out.push_back("epochs must be >= 1");
  if (!(max_norm > 0.0)) out.push_back("max_norm must be positive");
  return out;
}

Adam::Adam(std::vector<Parameter*> params, const TrainConfig& config)
    : lr_(config.learning_rate),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.adam_eps) {
  slots_.reserve(params.size());
  for (Parameter* p : params) {
    slots_.push_back(Slot{p, std::vector<double>(p->value.numel(), 0.0),
                          std::vector<double>(p->value.numel(), 0.0)});
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Slot& slot : slots_) {
    auto& w = slot.param->value.values();
    const auto& g = slot.param->value.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g[i];
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = slot.m[i] / c1;
      const double v_hat = slot.v[i] / c2;
      w[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

void max_norm_constrain(Tensor weight, double s) {
  if (weight.ndim() != 2) {
    throw DimensionError("max_norm_constrain expects a 2-D weight, got " +
                         shape_str(weight.shape()));
  }
  if (!(s > 0.0)) throw ContractError("max_norm_constrain: s must be positive");
  const std::size_t rows = weight.rows(), cols = weight.cols();
  for (std::size_t c = 0; c < cols; ++c) {
    double sq = 0.0;
    for (std::size_t r = 0; r < rows; ++r) sq += weight.at(r, c) * weight.at(r, c);
    const double norm = std::sqrt(sq);
    if (norm > s) {
      const double scale = s / norm;
      for (std::size_t r = 0; r < rows; ++r) weight.at(r, c) *= scale;
    }
  }
}

std::vector<int> EmbeddedDataset::labels() const {
  std::vector<int> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(s.label);
  return out;
}

EmbeddedDataset EmbeddedDataset::subset(
    std::span<const std::size_t> indices) const {
  EmbeddedDataset out;
  out.name = name;
  out.embed_dim = embed_dim;
  out.num_classes = num_classes;
  out.label_names = label_names;
  out.sentences.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= sentences.size()) {
      throw IndexError("subset index " + std::to_string(i) +
                       " out of range for dataset of " +
                       std::to_string(sentences.size()));
    }
    out.sentences.push_back(sentences[i]);
  }
  return out;
}

EmbeddedDataset embed_dataset(const Dataset& dataset, const IwvTable& table) {
  EmbeddedDataset out;
  out.name = dataset.name;
  out.embed_dim = table.dim();
  out.num_classes = dataset.num_classes;
  out.label_names = dataset.label_names;
  out.sentences.reserve(dataset.size());
  for (const Sentence& s : dataset.sentences) {
    EmbeddedSentence es;
    es.features = embed_sentence(s.tokens, s.tags, table);
    es.valid_len = s.tokens.size();
    es.label = s.label;
    out.sentences.push_back(std::move(es));
  }
  return out;
}

Tensor pad_rows(const Tensor& x, std::size_t min_rows) {
  if (x.ndim() != 2) {
    throw DimensionError("pad_rows expects a 2-D tensor, got " +
                         shape_str(x.shape()));
  }
  if (x.rows() >= min_rows) return x;
  Tensor out = Tensor::zeros({min_rows, x.cols()});
  std::copy(x.values().begin(), x.values().end(), out.values().begin());
  return out;
}

namespace {

void require_compatible(const MbchModel& model, const EmbeddedDataset& data,
                        const char* op) {
  if (data.size() == 0) {
    throw ContractError(std::string(op) + ": empty dataset");
  }
  if (data.embed_dim != model.config.embed_dim) {
    throw DimensionError(std::string(op) + ": dataset embeds to " +
                         std::to_string(data.embed_dim) +
                         " dims but the model expects " +
                         std::to_string(model.config.embed_dim));
  }
  if (static_cast<std::size_t>(data.num_classes) > model.config.num_classes) {
    throw ConfigError(std::string(op) + ": dataset has " +
                      std::to_string(data.num_classes) +
                      " classes but the model head has " +
                      std::to_string(model.config.num_classes));
  }
}

int argmax_row(const Tensor& probs, std::size_t row) {
  const std::size_t k = probs.cols();
  std::size_t best = 0;
  for (std::size_t c = 1; c < k; ++c) {
    if (probs.at(row, c) > probs.at(row, best)) best = c;
  }
  return static_cast<int>(best);
}

}  // namespace

TrainResult train(MbchModel& model, const EmbeddedDataset& data,
                  const TrainConfig& config, const StepObserver& observer) {
  const auto violations = config.violations();
  if (!violations.empty()) {
    std::string msg = "invalid train config:";
    for (const auto& v : violations) msg += "\n  - " + v;
    throw ConfigError(msg);
  }
  require_compatible(model, data, "train");

  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  const std::size_t hmax = model.config.max_filter_size();
  const double n = static_cast<double>(data.size());

  const std::vector<Parameter*> params = model.parameters();
  Adam optimizer(params, config);
  TrainResult result;
  result.epochs.reserve(config.epochs);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto chunks =
        chunk_indices(all, config.batch_size, derive_seed(config.seed, epoch));
    double loss_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t bi = 0; bi < chunks.size(); ++bi) {
      const auto& chunk = chunks[bi];
      std::vector<Tensor> feats;
      std::vector<std::size_t> lens;
      std::vector<int> labels;
      feats.reserve(chunk.size());
      lens.reserve(chunk.size());
      labels.reserve(chunk.size());
      for (std::size_t idx : chunk) {
        const EmbeddedSentence& s = data.sentences[idx];
        feats.push_back(pad_rows(s.features, hmax));
        lens.push_back(s.valid_len);
        labels.push_back(s.label);
      }

      Tape tape;
      BatchForward fwd =
          model_forward_batch(tape, model, feats, lens, Mode::train);
      SceResult sce = softmax_cross_entropy(tape, fwd.logits, labels);
      const double batch_loss = sce.loss.at(std::size_t{0});
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError(epoch, bi, "non-finite training loss");
      }
      loss_sum += batch_loss * static_cast<double>(chunk.size());
      for (std::size_t r = 0; r < chunk.size(); ++r) {
        if (argmax_row(sce.probs, r) == labels[r]) ++correct;
      }

      model.zero_grad();
      tape.backward(sce.loss);
      optimizer.step();
      max_norm_constrain(model.head_weight.value, config.max_norm);
      for (const Parameter* p : params) {
        if (!p->value.all_finite()) {
          throw DivergenceError(epoch, bi, "parameter " + p->name +
                                               " became non-finite after the "
                                               "update");
        }
      }
      ++result.steps;
      if (observer) observer(epoch, result.steps, batch_loss, model);
    }

    result.epochs.push_back(EpochMetrics{
        epoch, loss_sum / n, static_cast<double>(correct) / n});
  }
  return result;
}

EvalResult evaluate(MbchModel& model, const EmbeddedDataset& data,
                    std::span<const std::size_t> indices) {
  require_compatible(model, data, "evaluate");
  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(data.size());
    std::iota(all.begin(), all.end(), 0);
    indices = all;
  }
  const std::size_t hmax = model.config.max_filter_size();
  EvalResult result;
  result.predictions.reserve(indices.size());
  std::size_t correct = 0;
  for (std::size_t i : indices) {
    if (i >= data.size()) {
      throw IndexError("evaluate index " + std::to_string(i) +
                       " out of range for dataset of " +
                       std::to_string(data.size()));
    }
    const EmbeddedSentence& s = data.sentences[i];
    const int pred = predict(model, pad_rows(s.features, hmax), s.valid_len);
    result.predictions.push_back(pred);
    if (pred == s.label) ++correct;
  }
  result.accuracy =
      static_cast<double>(correct) / static_cast<double>(indices.size());
  return result;
}

namespace {

FoldResult run_one_fold(const ModelConfig& model_config,
                        const TrainConfig& train_config,
                        const EmbeddedDataset& data, const FoldSplit& split,
                        std::size_t fold) {
  const std::uint64_t fold_seed = derive_seed(train_config.seed, fold);
  ModelConfig mc = model_config;
  mc.seed = fold_seed;
  TrainConfig tc = train_config;
  tc.seed = fold_seed;

  MbchModel model = init_model(mc);
  TrainResult trained = train(model, data.subset(split.training_indices(fold)), tc);
  EvalResult held_out = evaluate(model, data.subset(split.folds[fold]));
  return FoldResult{fold, held_out.accuracy, std::move(trained.epochs)};
}

}  // namespace

CvResult run_cv(const ModelConfig& model_config,
                const TrainConfig& train_config, const EmbeddedDataset& data,
                std::size_t k, std::size_t parallel) {
  const FoldSplit split = stratified_kfold(data.labels(), data.num_classes, k,
                                           train_config.seed, data.label_names);
  CvResult result;
  result.folds.resize(k);

  const std::size_t workers = std::min(std::max<std::size_t>(parallel, 1), k);
  if (workers <= 1) {
    for (std::size_t f = 0; f < k; ++f) {
      result.folds[f] =
          run_one_fold(model_config, train_config, data, split, f);
    }
  } else {
    // Each fold is seeded independently, so a static partition over threads
    // reproduces the serial results exactly.
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t]() {
        try {
          for (std::size_t f = t; f < k; f += workers) {
            result.folds[f] =
                run_one_fold(model_config, train_config, data, split, f);
          }
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }

  double sum = 0.0;
  for (const FoldResult& f : result.folds) sum += f.accuracy;
  result.mean_accuracy = sum / static_cast<double>(k);
  double sq = 0.0;
  for (const FoldResult& f : result.folds) {
    const double d = f.accuracy - result.mean_accuracy;
    sq += d * d;
  }
  result.std_accuracy = std::sqrt(sq / static_cast<double>(k));
  return result;
}

const std::map<std::string, std::vector<std::size_t>>& combo_table() {
  static const std::map<std::string, std::vector<std::size_t>> table = {
      {"A", {2, 3, 4}},       {"B", {3, 4, 5}},
      {"C", {4, 5, 6}},       {"D", {5, 6, 7}},
      {"E", {2, 3, 4, 5}},    {"F", {3, 4, 5, 6}},
      {"G", {4, 5, 6, 7}},    {"H", {2, 3, 4, 5, 6, 7}},
  };
  return table;
}

namespace {

std::string valid_combo_listing() {
  std::string out;
  for (const auto& [name, sizes] : combo_table()) {
    out += out.empty() ? name : ", " + name;
    out += " (";
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (i > 0) out += ",";
      out += std::to_string(sizes[i]);
    }
    out += ")";
  }
  return out;
}

[[noreturn]] void unknown_combo(const std::string& name) {
  throw ConfigError("unknown combo '" + name + "'; valid combos: " +
                    valid_combo_listing());
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

std::vector<std::string> parse_combo_list(const std::string& text) {
  const auto& table = combo_table();
  std::vector<std::string> out;
  auto push_unique = [&](const std::string& name) {
    if (std::find(out.begin(), out.end(), name) == out.end()) {
      out.push_back(name);
    }
  };

  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string token = trim(
        text.substr(start, comma == std::string::npos ? comma : comma - start));
    start = comma == std::string::npos ? text.size() + 1 : comma + 1;
    if (token.empty()) continue;

    if (token == "all") {
      for (const auto& [name, sizes] : table) push_unique(name);
      continue;
    }
    const std::size_t dots = token.find("..");
    if (dots != std::string::npos) {
      const std::string lo = trim(token.substr(0, dots));
      const std::string hi = trim(token.substr(dots + 2));
      const auto lo_it = table.find(lo);
      const auto hi_it = table.find(hi);
      if (lo_it == table.end()) unknown_combo(lo);
      if (hi_it == table.end()) unknown_combo(hi);
      if (hi < lo) {
        throw ConfigError("combo range '" + token + "' runs backwards");
      }
      for (auto it = lo_it; it != std::next(hi_it); ++it) {
        push_unique(it->first);
      }
      continue;
    }
    if (table.find(token) == table.end()) unknown_combo(token);
    push_unique(token);
  }
  if (out.empty()) throw ConfigError("empty combo list");
  return out;
}

SweepResult run_sweep(const ModelConfig& model_config,
                      const TrainConfig& train_config,
                      const EmbeddedDataset& data,
                      std::span<const std::string> combos,
                      std::span<const std::size_t> feature_map_values,
                      std::size_t k, std::size_t parallel) {
  const auto& table = combo_table();
  std::vector<std::size_t> fm(feature_map_values.begin(),
                              feature_map_values.end());
  if (fm.empty()) fm.push_back(model_config.feature_maps);

  SweepResult result;
  result.cells.reserve(combos.size() * fm.size());
  for (const std::string& combo : combos) {
    const auto it = table.find(combo);
    if (it == table.end()) unknown_combo(combo);
    for (std::size_t f : fm) {
      ModelConfig mc = model_config;
      mc.filter_sizes = it->second;
      mc.feature_maps = f;
      const CvResult cv = run_cv(mc, train_config, data, k, parallel);
      result.cells.push_back(SweepCell{combo, it->second, f,
                                       cv.mean_accuracy, cv.std_accuracy});
    }
  }
  return result;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  return out;
}

void finish_csv(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error("failed writing: " + path.string());
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path,
                       std::span<const EpochMetrics> epochs) {
  auto out = open_csv(path);
  out << "epoch,train_loss,train_acc\n";
  for (const EpochMetrics& e : epochs) {
    out << e.epoch << "," << format_g17(e.train_loss) << ","
        << format_g17(e.train_accuracy) << "\n";
  }
  finish_csv(out, path);
}

void write_cv_csv(const std::filesystem::path& path, const CvResult& result) {
  auto out = open_csv(path);
  out << "fold,accuracy\n";
  for (const FoldResult& f : result.folds) {
    out << f.fold << "," << format_g17(f.accuracy) << "\n";
  }
  out << "mean," << format_g17(result.mean_accuracy) << "\n";
  out << "std," << format_g17(result.std_accuracy) << "\n";
  finish_csv(out, path);
}

void write_sweep_csv(const std::filesystem::path& path,
                     const SweepResult& result) {
  auto out = open_csv(path);
  out << "combo,filter_sizes,feature_maps,mean_acc,std_acc\n";
  for (const SweepCell& c : result.cells) {
    out << c.combo << ",";
    for (std::size_t i = 0; i < c.filter_sizes.size(); ++i) {
      if (i > 0) out << "+";
      out << c.filter_sizes[i];
    }
    out << "," << c.feature_maps << "," << format_g17(c.mean_accuracy) << ","
        << format_g17(c.std_accuracy) << "\n";
  }
  finish_csv(out, path);
}

}  // namespace mbch
