#include <doctest.h>

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "helpers.hpp"
#include "mbch/autodiff.hpp"

using namespace mbch;
using mbch::test::max_abs_diff;
using mbch::test::random_tensor;

namespace {

// Plain-loop reference implementations, kept deliberately dumb so they can
// serve as oracles for the tape-recorded ops.
std::vector<double> ref_conv(const Tensor& x, const Tensor& filters,
                             const Tensor& bias) {
  const std::size_t n = x.rows(), M = x.cols();
  const std::size_t F = filters.shape()[0], h = filters.shape()[1];
  std::vector<double> out((n - h + 1) * F, 0.0);
  for (std::size_t w = 0; w + h <= n; ++w) {
    for (std::size_t f = 0; f < F; ++f) {
      double acc = bias.at(f);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < M; ++c)
          acc += x.at(w + r, c) * filters.at((f * h + r) * M + c);
      out[w * F + f] = acc;
    }
  }
  return out;
}

std::vector<double> ref_max_over_time(const Tensor& x, std::size_t valid) {
  std::vector<double> out(x.cols());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double best = x.at(std::size_t{0}, c);
    for (std::size_t r = 1; r < valid; ++r) best = std::max(best, x.at(r, c));
    out[c] = best;
  }
  return out;
}

}  // namespace

TEST_CASE("affine matches the hand-worked example") {
  Tape tape;
  Tensor x = Tensor::matrix(1, 2, {1.0, 2.0});
  Tensor w = Tensor::matrix(2, 2, {1.0, 2.0, 3.0, 4.0});
  Tensor b = Tensor::vector({1.0, 1.0});
  Tensor y = affine(tape, x, w, b);
  REQUIRE(y.shape() == Shape{1, 2});
  CHECK(y.at(0, 0) == doctest::Approx(8.0).epsilon(1e-14));
  CHECK(y.at(0, 1) == doctest::Approx(11.0).epsilon(1e-14));
}

TEST_CASE("affine with identity weight and zero bias is a copy") {
  Tape tape;
  Tensor x = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor eye = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor b = Tensor::zeros({3});
  Tensor y = affine(tape, x, eye, b);
  CHECK(max_abs_diff(y.values(), x.values()) == 0.0);
}

TEST_CASE("affine rejects mismatched shapes") {
  Tape tape;
  Tensor x = Tensor::matrix(1, 3, {1, 2, 3});
  Tensor w = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor b = Tensor::vector({0, 0});
  CHECK_THROWS_AS(affine(tape, x, w, b), DimensionError);
  Tensor w2 = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  Tensor b2 = Tensor::vector({0, 0, 0});
  CHECK_THROWS_AS(affine(tape, x, w2, b2), DimensionError);
}

TEST_CASE("conv1d_valid output length is n-h+1") {
  Tape tape;
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({5, 3}, rng);
  Tensor filters = random_tensor({4, 3, 3}, rng);
  Tensor bias = random_tensor({4}, rng);
  Tensor y = conv1d_valid(tape, x, filters, bias);
  CHECK(y.rows() == 3);
  CHECK(y.cols() == 4);
}

TEST_CASE("conv1d_valid agrees with a brute-force loop") {
  std::mt19937_64 rng(202);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> nd(2, 9), hd(1, 4), md(1, 5),
        fd(1, 6);
    std::size_t h = hd(rng);
    std::size_t n = std::max(nd(rng), h);
    std::size_t M = md(rng), F = fd(rng);
    Tensor x = random_tensor({n, M}, rng);
    Tensor filters = random_tensor({F, h, M}, rng);
    Tensor bias = random_tensor({F}, rng);
    Tape tape;
    Tensor y = conv1d_valid(tape, x, filters, bias);
    CHECK(max_abs_diff(y.values(), ref_conv(x, filters, bias)) <= 1e-10);
  }
}

TEST_CASE("conv1d_valid rejects sequences shorter than the filter") {
  Tape tape;
  Tensor x = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor filters = Tensor::zeros({1, 3, 3});
  Tensor bias = Tensor::zeros({1});
  CHECK_THROWS_AS(conv1d_valid(tape, x, filters, bias), DimensionError);
}

TEST_CASE("relu clamps negatives and keeps positives") {
  Tape tape;
  Tensor x = Tensor::vector({-2.0, 0.0, 3.5});
  Tensor y = relu(tape, x);
  CHECK(y.at(std::size_t{0}) == 0.0);
  CHECK(y.at(std::size_t{1}) == 0.0);
  CHECK(y.at(std::size_t{2}) == 3.5);
}

TEST_CASE("sigmoid matches the closed form") {
  Tape tape;
  Tensor x = Tensor::vector({2.0, 0.0, -2.0});
  Tensor y = sigmoid(tape, x);
  CHECK(std::abs(y.at(std::size_t{0}) - 0.8807970779778823) < 1e-15);
  CHECK(y.at(std::size_t{1}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(y.at(std::size_t{0}) + y.at(std::size_t{2}) - 1.0) < 1e-15);
}

TEST_CASE("add, mul and one_minus are elementwise") {
  Tape tape;
  Tensor a = Tensor::vector({1.0, -2.0, 0.5});
  Tensor b = Tensor::vector({3.0, 3.0, 3.0});
  Tensor s = add(tape, a, b);
  Tensor p = mul(tape, a, b);
  Tensor q = one_minus(tape, a);
  CHECK(s.values() == std::vector<double>{4.0, 1.0, 3.5});
  CHECK(p.values() == std::vector<double>{3.0, -6.0, 1.5});
  CHECK(q.values() == std::vector<double>{0.0, 3.0, 0.5});
  CHECK_THROWS_AS(add(tape, a, Tensor::vector({1.0})), DimensionError);
}

TEST_CASE("sum gradient is all ones") {
  Tape tape;
  Tensor x = Tensor::vector({1.0, 2.0, 3.0}, true);
  Tensor total = sum(tape, x);
  CHECK(total.at(std::size_t{0}) == 6.0);
  tape.backward(total);
  CHECK(x.grad() == std::vector<double>(3, 1.0));
}

TEST_CASE("sum of squares has gradient 2x") {
  Tape tape;
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  Tensor sq = mul(tape, x, x);
  Tensor total = sum(tape, sq);
  tape.backward(total);
  CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("concat_channels lays parts side by side and splits gradients") {
  Tape tape;
  Tensor a = Tensor::matrix(2, 1, {1, 2}, true);
  Tensor b = Tensor::matrix(2, 2, {3, 4, 5, 6}, true);
  std::array<Tensor, 2> parts{a, b};
  Tensor y = concat_channels(tape, parts);
  REQUIRE(y.shape() == Shape{2, 3});
  CHECK(y.values() == std::vector<double>{1, 3, 4, 2, 5, 6});

  // Sum through a mask keeps the routing honest: only b's second column.
  Tensor mask = Tensor::matrix(2, 3, {0, 0, 1, 0, 0, 1});
  Tensor total = sum(tape, mul(tape, y, mask));
  tape.backward(total);
  CHECK(a.grad() == std::vector<double>{0, 0});
  CHECK(b.grad() == std::vector<double>{0, 1, 0, 1});
}

TEST_CASE("concat_channels joins 1-D vectors") {
  Tape tape;
  Tensor a = Tensor::vector({1, 2});
  Tensor b = Tensor::vector({3});
  std::array<Tensor, 2> parts{a, b};
  Tensor y = concat_channels(tape, parts);
  CHECK(y.shape() == Shape{3});
  CHECK(y.values() == std::vector<double>{1, 2, 3});
}

TEST_CASE("concat_rows stacks row blocks in order") {
  Tape tape;
  Tensor a = Tensor::matrix(1, 2, {1, 2}, true);
  Tensor b = Tensor::matrix(2, 2, {3, 4, 5, 6}, true);
  std::array<Tensor, 2> parts{a, b};
  Tensor y = concat_rows(tape, parts);
  REQUIRE(y.shape() == Shape{3, 2});
  CHECK(y.values() == std::vector<double>{1, 2, 3, 4, 5, 6});

  Tensor mask = Tensor::matrix(3, 2, {1, 0, 0, 0, 0, 1});
  tape.backward(sum(tape, mul(tape, y, mask)));
  CHECK(a.grad() == std::vector<double>{1, 0});
  CHECK(b.grad() == std::vector<double>{0, 0, 0, 1});
}

TEST_CASE("stack_rows builds a batch matrix from vectors") {
  Tape tape;
  Tensor a = Tensor::vector({1, 2}, true);
  Tensor b = Tensor::vector({3, 4}, true);
  std::array<Tensor, 2> rows{a, b};
  Tensor y = stack_rows(tape, rows);
  REQUIRE(y.shape() == Shape{2, 2});
  CHECK(y.values() == std::vector<double>{1, 2, 3, 4});
  CHECK_THROWS_AS(stack_rows(tape, std::span<const Tensor>{}), ContractError);
}

TEST_CASE("slice_rows takes a half-open row range") {
  Tape tape;
  Tensor x = Tensor::matrix(4, 2, {0, 1, 2, 3, 4, 5, 6, 7}, true);
  Tensor y = slice_rows(tape, x, 1, 3);
  REQUIRE(y.shape() == Shape{2, 2});
  CHECK(y.values() == std::vector<double>{2, 3, 4, 5});
  tape.backward(sum(tape, y));
  CHECK(x.grad() == std::vector<double>{0, 0, 1, 1, 1, 1, 0, 0});
  CHECK_THROWS_AS(slice_rows(tape, x, 2, 2), IndexError);
  CHECK_THROWS_AS(slice_rows(tape, x, 0, 5), IndexError);
}

TEST_CASE("max_over_time picks the column maxima") {
  Tape tape;
  Tensor x = Tensor::matrix(3, 1, {3, 1, 2});
  Tensor y = max_over_time(tape, x, 3);
  CHECK(y.shape() == Shape{1});
  CHECK(y.at(std::size_t{0}) == 3.0);
}

TEST_CASE("max_over_time honors valid_len") {
  Tape tape;
  Tensor x = Tensor::matrix(3, 1, {3, 1, 9});
  Tensor y = max_over_time(tape, x, 2);
  CHECK(y.at(std::size_t{0}) == 3.0);
  CHECK_THROWS_AS(max_over_time(tape, x, 0), IndexError);
  CHECK_THROWS_AS(max_over_time(tape, x, 4), IndexError);
}

TEST_CASE("max_over_time routes the gradient to the first argmax") {
  Tape tape;
  Tensor x = Tensor::matrix(3, 2, {5, 1, 5, 7, 2, 7}, true);
  Tensor y = max_over_time(tape, x, 3);
  tape.backward(sum(tape, y));
  // Column 0 ties at rows 0 and 1; column 1 ties at rows 1 and 2. The
  // gradient must land on the lower row index only.
  CHECK(x.grad() == std::vector<double>{1, 0, 0, 1, 0, 0});
}

TEST_CASE("max_over_time agrees with a brute-force scan") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> nd(1, 8), cd(1, 5);
    std::size_t n = nd(rng), C = cd(rng);
    std::uniform_int_distribution<std::size_t> vd(1, n);
    std::size_t valid = vd(rng);
    Tensor x = random_tensor({n, C}, rng);
    Tape tape;
    Tensor y = max_over_time(tape, x, valid);
    CHECK(max_abs_diff(y.values(), ref_max_over_time(x, valid)) <= 1e-10);
  }
}

TEST_CASE("batch_norm normalizes a column to zero mean, unit variance") {
  Tape tape;
  RunningStats stats(1);
  Tensor x = Tensor::matrix(3, 1, {1, 2, 3});
  Tensor gamma = Tensor::vector({1.0});
  Tensor beta = Tensor::vector({0.0});
  Tensor y = batch_norm(tape, x, gamma, beta, 0.0, Mode::train, stats);
  const double unit = 1.224744871391589;  // sqrt(3/2)
  CHECK(y.at(0, 0) == doctest::Approx(-unit).epsilon(1e-12));
  CHECK(y.at(1, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(y.at(2, 0) == doctest::Approx(unit).epsilon(1e-12));
}

TEST_CASE("batch_norm on a constant batch collapses to beta") {
  Tape tape;
  RunningStats stats(2);
  Tensor x = Tensor::matrix(4, 2, std::vector<double>(8, 3.0));
  Tensor gamma = Tensor::vector({1.0, 1.0});
  Tensor beta = Tensor::vector({7.0, 7.0});
  Tensor y = batch_norm(tape, x, gamma, beta, 1e-5, Mode::train, stats);
  for (std::size_t i = 0; i < y.numel(); ++i)
    CHECK(y.at(i) == doctest::Approx(7.0).epsilon(1e-9));
}

TEST_CASE("batch_norm gamma scales the normalized output") {
  Tensor x = Tensor::matrix(4, 1, {0.3, -1.2, 2.0, 0.8});
  Tensor beta = Tensor::vector({0.0});
  RunningStats s1(1), s2(1);
  Tape t1, t2;
  Tensor y1 = batch_norm(t1, x, Tensor::vector({1.0}), beta, 1e-5, Mode::train, s1);
  Tensor y2 = batch_norm(t2, x, Tensor::vector({2.0}), beta, 1e-5, Mode::train, s2);
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(y2.at(i) == doctest::Approx(2.0 * y1.at(i)).epsilon(1e-12));
}

TEST_CASE("batch_norm updates running stats with momentum 0.1") {
  Tape tape;
  RunningStats stats(1);
  REQUIRE(stats.mean[0] == 0.0);
  REQUIRE(stats.var[0] == 1.0);
  Tensor x = Tensor::matrix(2, 1, {1.0, 3.0});
  Tensor gamma = Tensor::vector({1.0});
  Tensor beta = Tensor::vector({0.0});
  batch_norm(tape, x, gamma, beta, 1e-5, Mode::train, stats);
  // batch mean 2, population variance ((1-2)^2 + (3-2)^2)/2 = 1
  CHECK(stats.mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0).epsilon(1e-14));
  CHECK(stats.var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0).epsilon(1e-14));
}

TEST_CASE("batch_norm infer mode reads stats without touching them") {
  Tape tape;
  RunningStats stats(1);
  stats.mean[0] = 2.0;
  stats.var[0] = 4.0;
  Tensor x = Tensor::matrix(1, 1, {4.0});
  Tensor gamma = Tensor::vector({3.0});
  Tensor beta = Tensor::vector({0.5});
  Tensor y = batch_norm(tape, x, gamma, beta, 0.0, Mode::infer, stats);
  // (4 - 2)/sqrt(4) * 3 + 0.5 = 3.5
  CHECK(y.at(0, 0) == doctest::Approx(3.5).epsilon(1e-12));
  CHECK(stats.mean[0] == 2.0);
  CHECK(stats.var[0] == 4.0);
}

TEST_CASE("batch_norm train mode needs at least two rows") {
  Tape tape;
  RunningStats stats(1);
  Tensor x = Tensor::matrix(1, 1, {1.0});
  Tensor gamma = Tensor::vector({1.0});
  Tensor beta = Tensor::vector({0.0});
  CHECK_THROWS_AS(batch_norm(tape, x, gamma, beta, 1e-5, Mode::train, stats),
                  ContractError);
  CHECK_NOTHROW(batch_norm(tape, x, gamma, beta, 1e-5, Mode::infer, stats));
}

TEST_CASE("softmax_rows matches the closed form and sums to one") {
  Tape tape;
  Tensor logits = Tensor::matrix(2, 3, {0, 0, 0, 1, 2, 3});
  Tensor p = softmax_rows(tape, logits);
  CHECK(p.at(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(std::abs(p.at(1, 0) - 0.09003057317038046) < 1e-15);
  CHECK(std::abs(p.at(1, 1) - 0.24472847105479767) < 1e-15);
  CHECK(std::abs(p.at(1, 2) - 0.6652409557748219) < 1e-15);
  for (std::size_t r = 0; r < 2; ++r) {
    double s = p.at(r, 0) + p.at(r, 1) + p.at(r, 2);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax_rows is invariant to shifting a row") {
  std::mt19937_64 rng(5);
  Tensor q = random_tensor({3, 4}, rng, -2.0, 2.0);
  Tensor shifted = Tensor::zeros({3, 4});
  for (std::size_t i = 0; i < q.numel(); ++i)
    shifted.at(i) = q.at(i) + 100.0;
  Tape t1, t2;
  Tensor p1 = softmax_rows(t1, q);
  Tensor p2 = softmax_rows(t2, shifted);
  CHECK(max_abs_diff(p1.values(), p2.values()) <= 1e-12);
}

TEST_CASE("softmax cross-entropy on uniform logits is ln 2") {
  Tape tape;
  Tensor logits = Tensor::matrix(1, 2, {0.0, 0.0}, true);
  std::vector<int> labels{0};
  SceResult r = softmax_cross_entropy(tape, logits, labels);
  CHECK(std::abs(r.loss.at(std::size_t{0}) - 0.6931471805599453) < 1e-15);
  CHECK(r.probs.at(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("softmax cross-entropy gradient is (p - onehot)/B") {
  Tape tape;
  Tensor logits = Tensor::matrix(2, 2, {1.0, -1.0, 0.25, 0.5}, true);
  std::vector<int> labels{0, 1};
  SceResult r = softmax_cross_entropy(tape, logits, labels);
  tape.backward(r.loss);
  for (std::size_t row = 0; row < 2; ++row) {
    for (std::size_t c = 0; c < 2; ++c) {
      double want = (r.probs.at(row, c) -
                     (static_cast<int>(c) == labels[row] ? 1.0 : 0.0)) /
                    2.0;
      CHECK(logits.grad()[row * 2 + c] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax cross-entropy validates labels") {
  Tape tape;
  Tensor logits = Tensor::matrix(1, 2, {0.0, 0.0});
  std::vector<int> bad{2};
  CHECK_THROWS_AS(softmax_cross_entropy(tape, logits, bad), IndexError);
  std::vector<int> neg{-1};
  CHECK_THROWS_AS(softmax_cross_entropy(tape, logits, neg), IndexError);
  std::vector<int> wrong_count{0, 1};
  CHECK_THROWS_AS(softmax_cross_entropy(tape, logits, wrong_count),
                  DimensionError);
}

TEST_CASE("tape rejects a non-scalar loss and a second backward") {
  Tape tape;
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  Tensor y = relu(tape, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
  Tensor total = sum(tape, y);
  tape.backward(total);
  CHECK_THROWS_AS(tape.backward(total), ContractError);
}

TEST_CASE("tape records one node per differentiable op") {
  Tape tape;
  CHECK(tape.size() == 0);
  Tensor x = Tensor::vector({1.0}, true);
  Tensor y = relu(tape, x);
  Tensor z = sigmoid(tape, y);
  (void)z;
  CHECK(tape.size() == 2);

  // Ops whose inputs carry no gradient stay off the tape entirely.
  Tape quiet;
  Tensor detached = Tensor::vector({1.0});
  relu(quiet, detached);
  CHECK(quiet.size() == 0);
}

TEST_CASE("gradients accumulate when a tensor is used twice") {
  Tape tape;
  Tensor x = Tensor::vector({2.0}, true);
  Tensor y = add(tape, x, x);  // y = 2x, dy/dx = 2
  tape.backward(sum(tape, y));
  CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-14));
}
