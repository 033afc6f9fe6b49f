#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mbch/corpus.hpp"
#include "mbch/errors.hpp"
#include "mbch/format.hpp"
#include "mbch/gradcheck.hpp"
#include "mbch/hashing.hpp"
#include "mbch/iwv.hpp"
#include "mbch/model.hpp"
#include "mbch/train.hpp"

#include "manifest.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;

namespace {

/// A required file does not exist (exit code 2, distinct from parse errors).
class MissingInput : public mbch::Error {
 public:
  using Error::Error;
};

void require_file(const fs::path& path, const std::string& role) {
  if (!fs::exists(path)) {
    throw MissingInput(role + " not found: " + path.string());
  }
}

std::string join_sizes(const std::vector<std::size_t>& sizes) {
  std::string out;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(sizes[i]);
  }
  return out;
}

/// Everything a command needs, assembled once from the config file.
struct Workspace {
  mbch::cli::RunConfig cfg;
  mbch::Dataset dataset;
  mbch::IwvTable table;
  mbch::EmbeddedDataset embedded;
  mbch::ModelConfig model_config;
  mbch::TrainConfig train_config;
  std::vector<mbch::cli::ManifestInput> inputs;
  std::map<std::string, std::string> resolved;
};

Workspace load_workspace(const std::string& config_path,
                         std::optional<std::uint64_t> seed_override) {
  Workspace ws;
  require_file(config_path, "config");
  ws.inputs.push_back({"config", config_path});
  ws.cfg = mbch::cli::load_run_config(config_path);

  const fs::path dataset_path = ws.cfg.require_path("dataset");
  require_file(dataset_path, "dataset");
  ws.inputs.push_back({"dataset", dataset_path});
  const auto format =
      mbch::parse_dataset_format(ws.cfg.get_string("dataset_format", "raw"));
  ws.dataset = mbch::load_dataset(dataset_path, format);

  const std::uint64_t oov_seed = ws.cfg.get_u64("oov_seed", 0);
  if (ws.cfg.has("word_vectors")) {
    const fs::path p = ws.cfg.require_path("word_vectors");
    require_file(p, "word_vectors");
    ws.inputs.push_back({"word_vectors", p});
    ws.table.words = mbch::load_word_vectors(p, oov_seed);
  } else {
    // No pretrained file: every word takes its deterministic OOV vector of
    // the requested width. Handy for synthetic corpora.
    const std::size_t dim = ws.cfg.get_size("word_dim", 0);
    if (dim < 1) {
      throw mbch::ConfigError(
          "config needs word_vectors = <path> or word_dim = <n>");
    }
    ws.table.words.dim = dim;
    ws.table.words.oov_seed = oov_seed;
  }
  if (const auto lex = ws.cfg.find("lexicons"); lex && !lex->empty()) {
    std::vector<mbch::Lexicon> lexicons;
    const auto paths = mbch::cli::split_list(*lex);
    for (std::size_t i = 0; i < paths.size(); ++i) {
      require_file(paths[i], "lexicon");
      ws.inputs.push_back({"lexicon" + std::to_string(i + 1), paths[i]});
      lexicons.push_back(
          mbch::load_lexicon(paths[i], fs::path(paths[i]).stem().string()));
    }
    ws.table.lexicons = mbch::LexiconSet(std::move(lexicons));
  }

  ws.embedded = mbch::embed_dataset(ws.dataset, ws.table);

  mbch::ModelConfig mc;
  if (const auto v = ws.cfg.find("filter_sizes")) {
    mc.filter_sizes = mbch::cli::parse_size_list(*v, "filter_sizes");
  }
  mc.feature_maps = ws.cfg.get_size("feature_maps", mc.feature_maps);
  mc.bottleneck_dim = ws.cfg.get_size("bottleneck_dim", mc.bottleneck_dim);
  mc.highway_depth = ws.cfg.get_size("highway_depth", mc.highway_depth);
  mc.num_classes = ws.cfg.get_size(
      "num_classes", static_cast<std::size_t>(ws.embedded.num_classes));
  mc.embed_dim = ws.embedded.embed_dim;

  mbch::TrainConfig tc;
  tc.learning_rate = ws.cfg.get_double("learning_rate", tc.learning_rate);
  tc.beta1 = ws.cfg.get_double("beta1", tc.beta1);
  tc.beta2 = ws.cfg.get_double("beta2", tc.beta2);
  tc.adam_eps = ws.cfg.get_double("adam_eps", tc.adam_eps);
  tc.batch_size = ws.cfg.get_size("batch_size", tc.batch_size);
  tc.epochs = ws.cfg.get_size("epochs", tc.epochs);
  tc.max_norm = ws.cfg.get_double("max_norm", tc.max_norm);
  tc.seed = ws.cfg.get_u64("seed", 0);
  if (seed_override) tc.seed = *seed_override;
  mc.seed = tc.seed;

  ws.model_config = mc;
  ws.train_config = tc;

  auto& r = ws.resolved;
  r["dataset_format"] = ws.cfg.get_string("dataset_format", "raw");
  r["num_sentences"] = std::to_string(ws.dataset.size());
  r["num_classes"] = std::to_string(mc.num_classes);
  r["embed_dim"] = std::to_string(mc.embed_dim);
  r["word_dim"] = std::to_string(ws.table.words.dim);
  r["oov_seed"] = std::to_string(oov_seed);
  r["lexicons"] = ws.table.lexicons
                      ? std::to_string(ws.table.lexicons->lexicons().size())
                      : "0";
  r["filter_sizes"] = join_sizes(mc.filter_sizes);
  r["feature_maps"] = std::to_string(mc.feature_maps);
  r["bottleneck_dim"] = std::to_string(mc.bottleneck_dim);
  r["highway_depth"] = std::to_string(mc.highway_depth);
  r["learning_rate"] = mbch::format_g17(tc.learning_rate);
  r["beta1"] = mbch::format_g17(tc.beta1);
  r["beta2"] = mbch::format_g17(tc.beta2);
  r["adam_eps"] = mbch::format_g17(tc.adam_eps);
  r["batch_size"] = std::to_string(tc.batch_size);
  r["epochs"] = std::to_string(tc.epochs);
  r["max_norm"] = mbch::format_g17(tc.max_norm);
  r["seed"] = std::to_string(tc.seed);
  return ws;
}

int cmd_build_iwv(Workspace& ws, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::set<std::pair<std::string, std::string>> vocab;
  for (const mbch::Sentence& s : ws.dataset.sentences) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      vocab.insert({s.tokens[i], s.tags[i]});
    }
  }
  const std::vector<std::pair<std::string, std::string>> ordered(vocab.begin(),
                                                                 vocab.end());
  mbch::write_iwv_cache(out_dir / "iwv.txt", ws.table, ordered);
  ws.resolved["vocab_pairs"] = std::to_string(ordered.size());
  if (!ws.table.lexicons) ws.resolved["lexicon_part"] = "zeroed";
  mbch::cli::write_manifest(out_dir / "manifest.txt", "build-iwv",
                            ws.cfg.entries(), ws.resolved, ws.inputs);
  std::cout << "wrote " << ordered.size() << " composed vectors (dim "
            << ws.table.dim() << ") to " << (out_dir / "iwv.txt").string()
            << "\n";
  if (!ws.table.lexicons) {
    std::cout << "lexicon part zeroed (no lexicons configured)\n";
  }
  return 0;
}

int cmd_train(Workspace& ws, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  mbch::MbchModel model = mbch::init_model(ws.model_config);
  const mbch::TrainResult result =
      mbch::train(model, ws.embedded, ws.train_config);
  mbch::write_metrics_csv(out_dir / "metrics.csv", result.epochs);
  mbch::save_checkpoint(model, out_dir / "model.ckpt");
  mbch::cli::write_manifest(out_dir / "manifest.txt", "train",
                            ws.cfg.entries(), ws.resolved, ws.inputs);
  const mbch::EpochMetrics& last = result.epochs.back();
  std::cout << "trained " << result.epochs.size() << " epochs ("
            << result.steps << " steps), final loss "
            << mbch::format_g17(last.train_loss) << ", train accuracy "
            << mbch::format_g17(last.train_accuracy) << "\n";
  return 0;
}

int cmd_eval(Workspace& ws, const fs::path& out_dir,
             const std::string& checkpoint) {
  require_file(checkpoint, "checkpoint");
  ws.inputs.push_back({"checkpoint", checkpoint});
  fs::create_directories(out_dir);
  mbch::MbchModel model = mbch::load_checkpoint(checkpoint);
  const mbch::EvalResult result = mbch::evaluate(model, ws.embedded);

  std::ofstream csv(out_dir / "eval.csv", std::ios::binary);
  if (!csv) {
    throw mbch::Error("cannot open for writing: " +
                      (out_dir / "eval.csv").string());
  }
  csv << "index,label,prediction\n";
  for (std::size_t i = 0; i < result.predictions.size(); ++i) {
    csv << i << "," << ws.embedded.sentences[i].label << ","
        << result.predictions[i] << "\n";
  }
  csv.flush();
  if (!csv) {
    throw mbch::Error("failed writing: " + (out_dir / "eval.csv").string());
  }

  mbch::cli::write_manifest(out_dir / "manifest.txt", "eval", ws.cfg.entries(),
                            ws.resolved, ws.inputs);
  std::cout << "accuracy " << mbch::format_g17(result.accuracy) << "\n";
  return 0;
}

int cmd_cv(Workspace& ws, const fs::path& out_dir, std::size_t k,
           std::size_t parallel) {
  fs::create_directories(out_dir);
  ws.resolved["k"] = std::to_string(k);
  ws.resolved["parallel"] = std::to_string(parallel);

  const mbch::FoldSplit split = mbch::stratified_kfold(
      ws.embedded.labels(), ws.embedded.num_classes, k, ws.train_config.seed,
      ws.embedded.label_names);
  const mbch::CvResult result = mbch::run_cv(
      ws.model_config, ws.train_config, ws.embedded, k, parallel);

  mbch::write_fold_csv(out_dir / "folds.csv", split);
  mbch::write_cv_csv(out_dir / "cv.csv", result);
  mbch::cli::write_manifest(out_dir / "manifest.txt", "cv", ws.cfg.entries(),
                            ws.resolved, ws.inputs);
  std::cout << "cv mean " << mbch::format_g17(result.mean_accuracy) << " std "
            << mbch::format_g17(result.std_accuracy) << "\n";
  return 0;
}

int cmd_sweep(Workspace& ws, const fs::path& out_dir,
              const std::string& combos_text, const std::string& fmaps_text,
              std::size_t k, std::size_t parallel) {
  fs::create_directories(out_dir);
  const std::vector<std::string> combos = mbch::parse_combo_list(
      combos_text.empty() ? std::string("all") : combos_text);
  std::vector<std::size_t> fmaps;
  if (!fmaps_text.empty()) {
    fmaps = mbch::cli::parse_size_list(fmaps_text, "--feature-maps");
  }

  ws.resolved["k"] = std::to_string(k);
  ws.resolved["parallel"] = std::to_string(parallel);
  std::string combo_join;
  for (const auto& c : combos) {
    combo_join += combo_join.empty() ? c : "," + c;
  }
  ws.resolved["combos"] = combo_join;
  ws.resolved["sweep_feature_maps"] =
      fmaps.empty() ? std::to_string(ws.model_config.feature_maps)
                    : join_sizes(fmaps);

  const mbch::SweepResult result = mbch::run_sweep(
      ws.model_config, ws.train_config, ws.embedded, combos, fmaps, k,
      parallel);
  mbch::write_sweep_csv(out_dir / "sweep.csv", result);
  mbch::cli::write_manifest(out_dir / "manifest.txt", "sweep",
                            ws.cfg.entries(), ws.resolved, ws.inputs);
  for (const mbch::SweepCell& cell : result.cells) {
    std::cout << "cell " << cell.combo << " F=" << cell.feature_maps
              << " mean " << mbch::format_g17(cell.mean_accuracy) << " std "
              << mbch::format_g17(cell.std_accuracy) << "\n";
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double step, double tol) {
  // Desk-scale full model: small enough that central differences over every
  // coordinate stay fast, deep enough to cross every op once.
  mbch::ModelConfig mc;
  mc.filter_sizes = {2, 3};
  mc.feature_maps = 4;
  mc.bottleneck_dim = 3;
  mc.highway_depth = 2;
  mc.num_classes = 2;
  mc.embed_dim = 6;
  mc.seed = seed;
  mbch::MbchModel model = mbch::init_model(mc);

  // Check at a generic point. The fresh init is full of exact zeros (biases,
  // beta) that can park a ReLU input exactly on its kink, where one-sided
  // analytic and central numeric derivatives legitimately disagree.
  std::mt19937_64 jitter_rng(mbch::derive_seed(seed, 2000));
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  for (mbch::Parameter* p : model.parameters()) {
    for (double& v : p->value.values()) v += jitter(jitter_rng);
  }

  const std::size_t batch = 4, length = 5;
  std::mt19937_64 rng(mbch::derive_seed(seed, 1000));
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<mbch::Tensor> sentences;
  std::vector<std::size_t> lens;
  std::vector<int> labels;
  for (std::size_t i = 0; i < batch; ++i) {
    mbch::Tensor x = mbch::Tensor::zeros({length, mc.embed_dim});
    for (double& v : x.values()) v = dist(rng);
    sentences.push_back(x);
    lens.push_back(length);
    labels.push_back(static_cast<int>(i % 2));
  }

  const auto forward = [&](mbch::Mode mode) {
    return [&, mode](mbch::Tape& tape) {
      const mbch::BatchForward fwd =
          mbch::model_forward_batch(tape, model, sentences, lens, mode);
      return mbch::softmax_cross_entropy(tape, fwd.logits, labels).loss;
    };
  };
  const auto print_report = [&](const char* phase,
                                const mbch::GradCheckReport& report) {
    for (const mbch::GradCheckEntry& e : report.entries) {
      std::cout << phase << " param " << e.name << " max_rel_error "
                << mbch::format_g17(e.max_rel_error) << "\n";
    }
    std::cout << phase << " max_rel_error "
              << mbch::format_g17(report.max_rel_error) << " tolerance "
              << mbch::format_g17(tol) << " "
              << (report.passed() ? "PASS" : "FAIL") << "\n";
  };

  // Infer mode: batch norm is a fixed affine map, so every parameter,
  // including the biases feeding a batch-norm layer, has a well-conditioned
  // gradient to compare against.
  const mbch::GradCheckReport infer_report =
      mbch::grad_check(forward(mbch::Mode::infer), model.parameters(), step, tol);
  print_report("infer", infer_report);

  // Train mode: normalization subtracts the batch mean, which makes the loss
  // exactly invariant to those same biases; their true gradient is zero and a
  // relative-error check would only measure rounding noise. Check everything
  // else, which exercises the batch-statistics gradient paths.
  std::vector<mbch::Parameter*> train_params;
  for (mbch::Parameter* p : model.parameters()) {
    const bool washed_out = p->name.ends_with(".conv.bias") ||
                            p->name.ends_with(".transform.bias") ||
                            p->name.ends_with(".gate.bias");
    if (!washed_out) train_params.push_back(p);
  }
  const mbch::GradCheckReport train_report =
      mbch::grad_check(forward(mbch::Mode::train), train_params, step, tol);
  print_report("train", train_report);

  const bool passed = infer_report.passed() && train_report.passed();
  std::cout << "gradcheck " << (passed ? "PASS" : "FAIL") << "\n";
  return passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiple-block convolutional highway text classifier"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, combos, feature_maps;
  std::uint64_t seed = 0;
  std::size_t k = 0, parallel = 0;
  double step = 1e-5, tolerance = 1e-4;

  const auto add_common = [&](CLI::App* sc) {
    sc->add_option("--config", config_path, "Run config file")->required();
    sc->add_option("--out", out_dir, "Output directory")->required();
  };

  CLI::App* build = app.add_subcommand(
      "build-iwv", "Compose improved word vectors for the dataset vocabulary");
  add_common(build);

  CLI::App* tr =
      app.add_subcommand("train", "Train one model on the full dataset");
  add_common(tr);
  CLI::Option* tr_seed = tr->add_option("--seed", seed, "Override config seed");

  CLI::App* ev =
      app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  add_common(ev);
  ev->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();

  CLI::App* cv =
      app.add_subcommand("cv", "Stratified k-fold cross-validation");
  add_common(cv);
  CLI::Option* cv_seed = cv->add_option("--seed", seed, "Override config seed");
  CLI::Option* cv_k = cv->add_option("--k", k, "Number of folds");
  CLI::Option* cv_par =
      cv->add_option("--parallel", parallel, "Worker threads for folds");

  CLI::App* sw = app.add_subcommand(
      "sweep", "Cross-validate filter-size combos and feature-map counts");
  add_common(sw);
  CLI::Option* sw_seed = sw->add_option("--seed", seed, "Override config seed");
  CLI::Option* sw_k = sw->add_option("--k", k, "Number of folds");
  CLI::Option* sw_par =
      sw->add_option("--parallel", parallel, "Worker threads for folds");
  sw->add_option("--combos", combos,
                 "Comma list of combo names, ranges like A..H, or 'all'");
  sw->add_option("--feature-maps", feature_maps,
                 "Comma list of feature-map counts");

  CLI::App* gc = app.add_subcommand(
      "gradcheck", "Finite-difference check of the full model gradient");
  gc->add_option("--seed", seed, "Seed for the model and probe batch");
  gc->add_option("--step", step, "Central-difference step");
  gc->add_option("--tolerance", tolerance, "Max allowed relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 4;
  }

  try {
    if (app.got_subcommand(gc)) {
      return cmd_gradcheck(seed, step, tolerance);
    }

    std::optional<std::uint64_t> seed_override;
    if ((app.got_subcommand(tr) && tr_seed->count()) ||
        (app.got_subcommand(cv) && cv_seed->count()) ||
        (app.got_subcommand(sw) && sw_seed->count())) {
      seed_override = seed;
    }
    Workspace ws = load_workspace(config_path, seed_override);

    if (app.got_subcommand(build)) return cmd_build_iwv(ws, out_dir);
    if (app.got_subcommand(tr)) return cmd_train(ws, out_dir);
    if (app.got_subcommand(ev)) return cmd_eval(ws, out_dir, checkpoint);

    const auto resolve_k = [&](CLI::Option* opt) {
      return opt->count() ? k : ws.cfg.get_size("k", 10);
    };
    const auto resolve_parallel = [&](CLI::Option* opt) {
      return opt->count() ? parallel : ws.cfg.get_size("parallel", 1);
    };
    if (app.got_subcommand(cv)) {
      return cmd_cv(ws, out_dir, resolve_k(cv_k), resolve_parallel(cv_par));
    }
    if (app.got_subcommand(sw)) {
      return cmd_sweep(ws, out_dir, combos, feature_maps, resolve_k(sw_k),
                       resolve_parallel(sw_par));
    }
    std::cerr << "error: no command selected\n";
    return 4;
  } catch (const MissingInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mbch::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const mbch::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const mbch::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
