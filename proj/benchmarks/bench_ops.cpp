// Microbenchmarks of the hot tensor ops. Sizes mirror what a full-scale run
// would push through them: 300-ish channels, sentence lengths in the tens.
#include <benchmark/benchmark.h>

#include <random>

#include "mbch/autodiff.hpp"
#include "mbch/tensor.hpp"

using namespace mbch;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

void BM_conv1d_valid(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto F = static_cast<std::size_t>(state.range(1));
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({n, 344}, rng);
  Tensor filters = random_tensor({F, 3, 344}, rng);
  Tensor bias = random_tensor({F}, rng);
  for (auto _ : state) {
    Tape tape;
    Tensor y = conv1d_valid(tape, x, filters, bias);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) *
                          static_cast<int64_t>((n - 2) * F));
}

void BM_affine(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({rows, 100}, rng);
  Tensor w = random_tensor({100, 100}, rng);
  Tensor b = random_tensor({100}, rng);
  for (auto _ : state) {
    Tape tape;
    Tensor y = affine(tape, x, w, b);
    benchmark::DoNotOptimize(y.values().data());
  }
}

void BM_batch_norm_train(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({rows, 100}, rng);
  Tensor gamma = random_tensor({100}, rng);
  Tensor beta = random_tensor({100}, rng);
  RunningStats stats(100);
  for (auto _ : state) {
    Tape tape;
    Tensor y = batch_norm(tape, x, gamma, beta, 1e-5, Mode::train, stats);
    benchmark::DoNotOptimize(y.values().data());
  }
}

void BM_backward_affine_chain(benchmark::State& state) {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({32, 100}, rng);
  Tensor w = random_tensor({100, 100}, rng);
  w.set_requires_grad(true);
  Tensor b = random_tensor({100}, rng);
  b.set_requires_grad(true);
  for (auto _ : state) {
    Tape tape;
    Tensor y = affine(tape, x, w, b);
    Tensor r = relu(tape, y);
    Tensor loss = sum(tape, mul(tape, r, r));
    tape.backward(loss);
    w.zero_grad();
    b.zero_grad();
    benchmark::DoNotOptimize(loss.values().data());
  }
}

}  // namespace

BENCHMARK(BM_conv1d_valid)->Args({32, 100})->Args({64, 300});
BENCHMARK(BM_affine)->Arg(32)->Arg(256);
BENCHMARK(BM_batch_norm_train)->Arg(32)->Arg(256);
BENCHMARK(BM_backward_affine_chain);
