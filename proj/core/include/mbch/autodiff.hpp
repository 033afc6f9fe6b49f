#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mbch/tensor.hpp"

namespace mbch {

enum class Mode { train, infer };

/// Per-channel running mean/variance for batch normalization.
/// Updated only in train mode; infer mode reads without mutation.
struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;
  double momentum = 0.1;

  explicit RunningStats(std::size_t channels = 0)
      : mean(channels, 0.0), var(channels, 1.0) {}
};

/// Records one operation node per forward op, in execution order, so the
/// record is topologically sorted by construction. backward() replays the
/// local gradient rules once each, in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_rule) {
    nodes_.push_back(std::move(backward_rule));
  }

  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every tensor
  /// recorded on this tape. `loss` must be a scalar produced by ops on this
  /// tape; a second traversal of the same tape is rejected.
  void backward(Tensor loss);

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

// Elementwise and linear-algebra primitives. Every op validates shapes,
// computes the forward value eagerly, and records its gradient rule on the
// tape. Inputs are never mutated.

/// out[r][c] = sum_k x[r][k] * weight[k][c] + bias[c]
Tensor affine(Tape& tape, const Tensor& x, const Tensor& weight,
              const Tensor& bias);

/// Valid (no padding) 1-D convolution over rows of x [n x M] with a filter
/// bank [F x h x M]; output [(n-h+1) x F].
Tensor conv1d_valid(Tape& tape, const Tensor& x, const Tensor& filters,
                    const Tensor& bias);

Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
/// out = 1 - x, elementwise (the carry gate of a highway layer).
Tensor one_minus(Tape& tape, const Tensor& x);
Tensor sum(Tape& tape, const Tensor& x);

/// Concatenate along the channel axis: 2-D inputs [L x C_i] -> [L x sum C_i],
/// or 1-D inputs [C_i] -> [sum C_i].
Tensor concat_channels(Tape& tape, std::span<const Tensor> parts);
/// Concatenate 2-D inputs with equal column counts along the row axis.
Tensor concat_rows(Tape& tape, std::span<const Tensor> parts);
/// Stack equal-length 1-D tensors into a [B x C] matrix.
Tensor stack_rows(Tape& tape, std::span<const Tensor> rows);
/// Rows [begin, end) of a 2-D tensor.
Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin,
                  std::size_t end);

/// Column-wise maximum over the first valid_len rows; the gradient routes to
/// the first (lowest-index) argmax of each column.
Tensor max_over_time(Tape& tape, const Tensor& x, std::size_t valid_len);

/// Batch normalization over the rows of x [B x C], per channel.
/// Train mode uses batch statistics with population variance (divide by B)
/// and updates `stats`; infer mode reads `stats` only. Gradients flow through
/// the batch mean and variance.
Tensor batch_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, double eps, Mode mode,
                  RunningStats& stats);

/// Row-wise shift-stabilized softmax with full Jacobian gradient.
Tensor softmax_rows(Tape& tape, const Tensor& logits);

struct SceResult {
  Tensor loss;   // scalar, mean negative log-likelihood
  Tensor probs;  // [B x k], detached from the gradient path
};

/// Softmax cross-entropy over logits [B x k] with integer labels.
/// d loss / d logits = (probs - onehot) / B.
SceResult softmax_cross_entropy(Tape& tape, const Tensor& logits,
                                std::span<const int> labels);

}  // namespace mbch
