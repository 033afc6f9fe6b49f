// Whole-model benchmarks: forward pass, forward+backward, and one optimizer
// step, at a reduced but structurally faithful configuration.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mbch/autodiff.hpp"
#include "mbch/model.hpp"
#include "mbch/train.hpp"

using namespace mbch;

namespace {

ModelConfig bench_config(std::size_t feature_maps, std::size_t bottleneck) {
  ModelConfig cfg;
  cfg.filter_sizes = {2, 3, 4, 5};
  cfg.feature_maps = feature_maps;
  cfg.bottleneck_dim = bottleneck;
  cfg.highway_depth = 2;
  cfg.num_classes = 2;
  cfg.embed_dim = 48;
  cfg.seed = 1;
  return cfg;
}

std::vector<Tensor> random_batch(std::size_t B, std::size_t rows,
                                 std::size_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<Tensor> batch;
  for (std::size_t i = 0; i < B; ++i) {
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.values()) v = dist(rng);
    batch.push_back(t);
  }
  return batch;
}

void BM_model_forward_infer(benchmark::State& state) {
  MbchModel model =
      init_model(bench_config(static_cast<std::size_t>(state.range(0)), 16));
  std::mt19937_64 rng(2);
  std::vector<Tensor> batch = random_batch(8, 24, 48, rng);
  std::vector<std::size_t> lens(8, 24);
  for (auto _ : state) {
    Tape tape;
    BatchForward out =
        model_forward_batch(tape, model, batch, lens, Mode::infer);
    benchmark::DoNotOptimize(out.logits.values().data());
  }
}

void BM_model_forward_backward(benchmark::State& state) {
  MbchModel model =
      init_model(bench_config(static_cast<std::size_t>(state.range(0)), 16));
  std::mt19937_64 rng(3);
  std::vector<Tensor> batch = random_batch(8, 24, 48, rng);
  std::vector<std::size_t> lens(8, 24);
  std::vector<int> labels{0, 1, 0, 1, 0, 1, 0, 1};
  for (auto _ : state) {
    Tape tape;
    BatchForward out =
        model_forward_batch(tape, model, batch, lens, Mode::train);
    SceResult sce = softmax_cross_entropy(tape, out.logits, labels);
    tape.backward(sce.loss);
    model.zero_grad();
    benchmark::DoNotOptimize(sce.loss.values().data());
  }
}

void BM_train_step(benchmark::State& state) {
  MbchModel model = init_model(bench_config(16, 8));
  std::mt19937_64 rng(4);
  std::vector<Tensor> batch = random_batch(8, 24, 48, rng);
  std::vector<std::size_t> lens(8, 24);
  std::vector<int> labels{0, 1, 0, 1, 0, 1, 0, 1};
  TrainConfig cfg;
  Adam opt(model.parameters(), cfg);
  for (auto _ : state) {
    Tape tape;
    BatchForward out =
        model_forward_batch(tape, model, batch, lens, Mode::train);
    SceResult sce = softmax_cross_entropy(tape, out.logits, labels);
    model.zero_grad();
    tape.backward(sce.loss);
    opt.step();
    max_norm_constrain(model.head_weight.value, cfg.max_norm);
    benchmark::DoNotOptimize(sce.loss.values().data());
  }
}

}  // namespace

BENCHMARK(BM_model_forward_infer)->Arg(16)->Arg(64);
BENCHMARK(BM_model_forward_backward)->Arg(16)->Arg(64);
BENCHMARK(BM_train_step);

BENCHMARK_MAIN();
