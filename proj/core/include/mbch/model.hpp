#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mbch/autodiff.hpp"
#include "mbch/tensor.hpp"

namespace mbch {

inline constexpr double kBatchNormEps = 1e-5;

struct ModelConfig {
  std::vector<std::size_t> filter_sizes{2, 3, 4, 5};
  std::size_t feature_maps = 500;
  std::size_t bottleneck_dim = 100;
  std::size_t highway_depth = 2;
  std::size_t num_classes = 2;
  std::size_t embed_dim = 0;
  std::uint64_t seed = 0;

  std::size_t max_filter_size() const {
    return filter_sizes.empty() ? 0 : filter_sizes.back();
  }
  std::size_t pooled_width() const {
    return filter_sizes.size() * bottleneck_dim;
  }
  /// Empty when the config is valid; otherwise one message per violation.
  std::vector<std::string> violations() const;
};

struct BatchNormLayer {
  Parameter gamma;
  Parameter beta;
  RunningStats stats;
};

/// Eq-1 style layer: windowed convolution, batch normalization, ReLU.
struct InitialConvLayer {
  std::size_t filter_size = 0;
  Parameter filters;  // [F x h x M]
  Parameter bias;     // [F]
  BatchNormLayer bn;
};

/// Position-wise 1x1 convolution reducing channel width.
struct BottleneckLayer {
  Parameter weight;  // [C_in x C_out]
  Parameter bias;    // [C_out]
};

/// y = t (.) ReLU(BN(c W_H + b_H)) + (1 - t) (.) c, with the transform gate
/// t = sigmoid(BN(c W_T + b_T)). Weights are square and act position-wise.
struct HighwayLayer {
  Parameter transform_weight;  // W_H
  Parameter transform_bias;    // b_H
  BatchNormLayer transform_bn;
  Parameter gate_weight;  // W_T
  Parameter gate_bias;    // b_T
  BatchNormLayer gate_bn;
};

/// One filter size's pipeline: initial conv, entry bottleneck, then D highway
/// layers with dense connectivity (layer j sees bottleneck(concat of the
/// block input and all previous highway outputs)).
struct Branch {
  InitialConvLayer conv;
  BottleneckLayer entry;
  std::vector<HighwayLayer> highway;        // depth D
  std::vector<BottleneckLayer> bottlenecks; // D-1 inter-layer bottlenecks
};

struct MbchModel {
  ModelConfig config;
  std::vector<Branch> branches;  // ascending filter-size order
  Parameter head_weight;         // [pooled_width x k]
  Parameter head_bias;           // [k]

  /// All learnable parameters in a fixed deterministic order.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  /// Every batch-norm running-stat block, named, in parameter order.
  std::vector<std::pair<std::string, RunningStats*>> running_stats();
  void zero_grad();
};

/// Seeded initialization: He-uniform conv/highway/bottleneck weights,
/// Glorot-uniform softmax head, zero biases except gate biases at -1
/// (carry-biased start), BN gamma 1 / beta 0.
MbchModel init_model(const ModelConfig& config);

/// Eq 1 on a whole sentence: conv -> batch norm over positions -> ReLU.
Tensor initial_conv_forward(Tape& tape, InitialConvLayer& layer,
                            const Tensor& x, Mode mode);

Tensor highway_forward(Tape& tape, HighwayLayer& layer, const Tensor& c,
                       Mode mode);

Tensor block_forward(Tape& tape, Branch& branch, const Tensor& c0, Mode mode);

struct BatchForward {
  Tensor logits;               // [B x k]
  std::vector<Tensor> pooled;  // per sentence, 1-D [pooled_width]
};

/// Forward over a batch of embedded sentences. Each sentence may carry its
/// own padded length; only windows over the first valid_len rows reach batch
/// statistics and pooling, so extra padding never changes the result.
BatchForward model_forward_batch(Tape& tape, MbchModel& model,
                                 std::span<const Tensor> sentences,
                                 std::span<const std::size_t> valid_lens,
                                 Mode mode);

struct SentenceForward {
  Tensor probs;   // 1-D [k], detached
  Tensor pooled;  // 1-D [pooled_width]
};

SentenceForward model_forward(Tape& tape, MbchModel& model, const Tensor& x,
                              std::size_t valid_len, Mode mode);

/// Argmax class under infer mode; ties break toward the lower index.
int predict(MbchModel& model, const Tensor& x, std::size_t valid_len);

/// Binary container of the config, every named parameter, and every BN
/// running-stat block. Round-trips are value-exact.
void save_checkpoint(const MbchModel& model, const std::filesystem::path& path);
MbchModel load_checkpoint(const std::filesystem::path& path);

}  // namespace mbch
