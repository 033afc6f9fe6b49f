#include "mbch/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "mbch/errors.hpp"
#include "mbch/hashing.hpp"

namespace mbch {

std::vector<std::string> ModelConfig::violations() const {
  std::vector<std::string> out;
  if (filter_sizes.empty()) {
    out.push_back("filter_sizes must not be empty");
  } else {
    for (std::size_t i = 0; i < filter_sizes.size(); ++i) {
      if (filter_sizes[i] < 1) {
        out.push_back("filter size at position " + std::to_string(i) +
                      " must be >= 1");
      }
      if (i > 0 && filter_sizes[i] <= filter_sizes[i - 1]) {
        out.push_back("filter_sizes must be strictly increasing, got " +
                      std::to_string(filter_sizes[i - 1]) + " then " +
                      std::to_string(filter_sizes[i]));
      }
    }
  }
  if (feature_maps < 1) out.push_back("feature_maps must be >= 1");
  if (bottleneck_dim < 1) out.push_back("bottleneck_dim must be >= 1");
  if (bottleneck_dim > feature_maps) {
    out.push_back("bottleneck_dim " + std::to_string(bottleneck_dim) +
                  " must not exceed feature_maps " +
                  std::to_string(feature_maps));
  }
  if (highway_depth < 1) out.push_back("highway_depth must be >= 1");
  if (num_classes < 2) out.push_back("num_classes must be >= 2");
  if (embed_dim < 1) out.push_back("embed_dim must be >= 1");
  return out;
}

namespace {

std::string join_violations(const std::vector<std::string>& violations) {
  std::string msg = "invalid model config:";
  for (const auto& v : violations) msg += "\n  - " + v;
  return msg;
}

Tensor uniform_tensor(Shape shape, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

double he_limit(std::size_t fan_in) {
  return std::sqrt(6.0 / static_cast<double>(fan_in));
}

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

BatchNormLayer make_bn(const std::string& prefix, std::size_t channels) {
  BatchNormLayer bn;
  bn.gamma = Parameter(prefix + ".gamma",
                       Tensor::from_values({channels},
                                           std::vector<double>(channels, 1.0)));
  bn.beta = Parameter(prefix + ".beta", Tensor::zeros({channels}));
  bn.stats = RunningStats(channels);
  return bn;
}

BottleneckLayer make_bottleneck(const std::string& prefix, std::size_t in,
                                std::size_t out, std::mt19937_64& rng) {
  BottleneckLayer layer;
  layer.weight =
      Parameter(prefix + ".weight", uniform_tensor({in, out}, he_limit(in), rng));
  layer.bias = Parameter(prefix + ".bias", Tensor::zeros({out}));
  return layer;
}

/// Visits every parameter in the model's canonical order.
template <typename M, typename P, typename Fn>
void for_each_parameter(M& model, Fn&& fn) {
  for (auto& branch : model.branches) {
    fn(static_cast<P>(branch.conv.filters));
    fn(static_cast<P>(branch.conv.bias));
    fn(static_cast<P>(branch.conv.bn.gamma));
    fn(static_cast<P>(branch.conv.bn.beta));
    fn(static_cast<P>(branch.entry.weight));
    fn(static_cast<P>(branch.entry.bias));
    for (std::size_t j = 0; j < branch.highway.size(); ++j) {
      if (j >= 1) {
        fn(static_cast<P>(branch.bottlenecks[j - 1].weight));
        fn(static_cast<P>(branch.bottlenecks[j - 1].bias));
      }
      auto& hw = branch.highway[j];
      fn(static_cast<P>(hw.transform_weight));
      fn(static_cast<P>(hw.transform_bias));
      fn(static_cast<P>(hw.transform_bn.gamma));
      fn(static_cast<P>(hw.transform_bn.beta));
      fn(static_cast<P>(hw.gate_weight));
      fn(static_cast<P>(hw.gate_bias));
      fn(static_cast<P>(hw.gate_bn.gamma));
      fn(static_cast<P>(hw.gate_bn.beta));
    }
  }
  fn(static_cast<P>(model.head_weight));
  fn(static_cast<P>(model.head_bias));
}

}  // namespace

std::vector<Parameter*> MbchModel::parameters() {
  std::vector<Parameter*> out;
  for_each_parameter<MbchModel, Parameter&>(*this,
                                            [&](Parameter& p) { out.push_back(&p); });
  return out;
}

std::vector<const Parameter*> MbchModel::parameters() const {
  std::vector<const Parameter*> out;
  for_each_parameter<const MbchModel, const Parameter&>(
      *this, [&](const Parameter& p) { out.push_back(&p); });
  return out;
}

std::vector<std::pair<std::string, RunningStats*>> MbchModel::running_stats() {
  std::vector<std::pair<std::string, RunningStats*>> out;
  for (auto& branch : branches) {
    const std::string base =
        "branch_h" + std::to_string(branch.conv.filter_size);
    out.emplace_back(base + ".conv.bn", &branch.conv.bn.stats);
    for (std::size_t j = 0; j < branch.highway.size(); ++j) {
      const std::string hw = base + ".hw" + std::to_string(j + 1);
      out.emplace_back(hw + ".transform.bn", &branch.highway[j].transform_bn.stats);
      out.emplace_back(hw + ".gate.bn", &branch.highway[j].gate_bn.stats);
    }
  }
  return out;
}

void MbchModel::zero_grad() {
  for (Parameter* p : parameters()) p->value.zero_grad();
}

MbchModel init_model(const ModelConfig& config) {
  const auto violations = config.violations();
  if (!violations.empty()) throw ConfigError(join_violations(violations));

  std::mt19937_64 rng(config.seed);
  const std::size_t F = config.feature_maps;
  const std::size_t b = config.bottleneck_dim;
  const std::size_t M = config.embed_dim;
  const std::size_t D = config.highway_depth;

  MbchModel model;
  model.config = config;
  model.branches.reserve(config.filter_sizes.size());
  for (std::size_t h : config.filter_sizes) {
    const std::string base = "branch_h" + std::to_string(h);
    Branch branch;
    branch.conv.filter_size = h;
    branch.conv.filters = Parameter(
        base + ".conv.filters", uniform_tensor({F, h, M}, he_limit(h * M), rng));
    branch.conv.bias = Parameter(base + ".conv.bias", Tensor::zeros({F}));
    branch.conv.bn = make_bn(base + ".conv.bn", F);
    branch.entry = make_bottleneck(base + ".entry", F, b, rng);
    branch.highway.reserve(D);
    branch.bottlenecks.reserve(D - 1);
    for (std::size_t j = 1; j <= D; ++j) {
      if (j >= 2) {
        // Layer j consumes the concat of the block input and j-1 previous
        // outputs, squeezed back to the bottleneck width.
        branch.bottlenecks.push_back(make_bottleneck(
            base + ".inter" + std::to_string(j), j * b, b, rng));
      }
      const std::string hw = base + ".hw" + std::to_string(j);
      HighwayLayer layer;
      layer.transform_weight = Parameter(hw + ".transform.weight",
                                         uniform_tensor({b, b}, he_limit(b), rng));
      layer.transform_bias = Parameter(hw + ".transform.bias", Tensor::zeros({b}));
      layer.transform_bn = make_bn(hw + ".transform.bn", b);
      layer.gate_weight = Parameter(hw + ".gate.weight",
                                    uniform_tensor({b, b}, he_limit(b), rng));
      // Gate biases start negative so early training favors the carry path.
      layer.gate_bias = Parameter(
          hw + ".gate.bias", Tensor::from_values({b}, std::vector<double>(b, -1.0)));
      layer.gate_bn = make_bn(hw + ".gate.bn", b);
      branch.highway.push_back(std::move(layer));
    }
    model.branches.push_back(std::move(branch));
  }
  const std::size_t width = config.pooled_width();
  const std::size_t k = config.num_classes;
  model.head_weight = Parameter(
      "head.weight", uniform_tensor({width, k}, glorot_limit(width, k), rng));
  model.head_bias = Parameter("head.bias", Tensor::zeros({k}));
  return model;
}

namespace {

Tensor bn_relu(Tape& tape, BatchNormLayer& bn, const Tensor& x, Mode mode) {
  Tensor normed = batch_norm(tape, x, bn.gamma.value, bn.beta.value,
                             kBatchNormEps, mode, bn.stats);
  return relu(tape, normed);
}

}  // namespace

Tensor initial_conv_forward(Tape& tape, InitialConvLayer& layer,
                            const Tensor& x, Mode mode) {
  Tensor c = conv1d_valid(tape, x, layer.filters.value, layer.bias.value);
  return bn_relu(tape, layer.bn, c, mode);
}

Tensor highway_forward(Tape& tape, HighwayLayer& layer, const Tensor& c,
                       Mode mode) {
  Tensor h_pre = affine(tape, c, layer.transform_weight.value,
                        layer.transform_bias.value);
  Tensor h = relu(tape, batch_norm(tape, h_pre, layer.transform_bn.gamma.value,
                                   layer.transform_bn.beta.value, kBatchNormEps,
                                   mode, layer.transform_bn.stats));
  Tensor t_pre =
      affine(tape, c, layer.gate_weight.value, layer.gate_bias.value);
  Tensor t = sigmoid(tape, batch_norm(tape, t_pre, layer.gate_bn.gamma.value,
                                      layer.gate_bn.beta.value, kBatchNormEps,
                                      mode, layer.gate_bn.stats));
  Tensor transform_path = mul(tape, t, h);
  Tensor carry_path = mul(tape, one_minus(tape, t), c);
  return add(tape, transform_path, carry_path);
}

Tensor block_forward(Tape& tape, Branch& branch, const Tensor& c0, Mode mode) {
  std::vector<Tensor> grown{c0};  // block input plus each highway output
  Tensor y = highway_forward(tape, branch.highway[0], c0, mode);
  for (std::size_t j = 2; j <= branch.highway.size(); ++j) {
    grown.push_back(y);
    Tensor cat = concat_channels(tape, grown);
    BottleneckLayer& squeeze = branch.bottlenecks[j - 2];
    Tensor in = affine(tape, cat, squeeze.weight.value, squeeze.bias.value);
    y = highway_forward(tape, branch.highway[j - 1], in, mode);
  }
  return y;
}

BatchForward model_forward_batch(Tape& tape, MbchModel& model,
                                 std::span<const Tensor> sentences,
                                 std::span<const std::size_t> valid_lens,
                                 Mode mode) {
  const std::size_t B = sentences.size();
  if (B == 0) throw ContractError("model_forward_batch: empty batch");
  if (valid_lens.size() != B) {
    throw DimensionError("model_forward_batch: " + std::to_string(B) +
                         " sentences but " + std::to_string(valid_lens.size()) +
                         " lengths");
  }
  const std::size_t hmax = model.config.max_filter_size();
  for (std::size_t i = 0; i < B; ++i) {
    const Tensor& x = sentences[i];
    if (x.ndim() != 2 || x.cols() != model.config.embed_dim) {
      throw DimensionError("model_forward_batch: sentence " +
                           std::to_string(i) + " has shape " +
                           shape_str(x.shape()) + ", expected [n x " +
                           std::to_string(model.config.embed_dim) + "]");
    }
    if (x.rows() < hmax) {
      throw ContractError("model_forward_batch: sentence " +
                          std::to_string(i) + " has " +
                          std::to_string(x.rows()) +
                          " rows, shorter than the largest filter " +
                          std::to_string(hmax));
    }
    if (valid_lens[i] < 1 || valid_lens[i] > x.rows()) {
      throw IndexError("model_forward_batch: valid_len " +
                       std::to_string(valid_lens[i]) +
                       " out of range for sentence " + std::to_string(i) +
                       " with " + std::to_string(x.rows()) + " rows");
    }
  }

  std::vector<std::vector<Tensor>> pools(B);
  for (auto& p : pools) p.reserve(model.branches.size());

  for (Branch& branch : model.branches) {
    const std::size_t h = branch.conv.filter_size;
    // Gather only windows that start inside the valid prefix, so padded
    // positions never reach batch statistics or pooling. A sentence shorter
    // than the filter keeps its single window over the zero-padded tail.
    std::vector<Tensor> segments;
    segments.reserve(B);
    std::vector<std::size_t> window_counts(B);
    for (std::size_t i = 0; i < B; ++i) {
      Tensor c = conv1d_valid(tape, sentences[i], branch.conv.filters.value,
                              branch.conv.bias.value);
      const std::size_t v = valid_lens[i] >= h ? valid_lens[i] - h + 1 : 1;
      window_counts[i] = v;
      segments.push_back(slice_rows(tape, c, 0, v));
    }
    Tensor gathered = concat_rows(tape, segments);
    Tensor activated = bn_relu(tape, branch.conv.bn, gathered, mode);
    Tensor c0 = affine(tape, activated, branch.entry.weight.value,
                       branch.entry.bias.value);
    Tensor y = block_forward(tape, branch, c0, mode);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < B; ++i) {
      Tensor rows = slice_rows(tape, y, offset, offset + window_counts[i]);
      offset += window_counts[i];
      pools[i].push_back(max_over_time(tape, rows, window_counts[i]));
    }
  }

  BatchForward result;
  result.pooled.reserve(B);
  for (std::size_t i = 0; i < B; ++i) {
    result.pooled.push_back(concat_channels(tape, pools[i]));
  }
  Tensor stacked = stack_rows(tape, result.pooled);
  result.logits = affine(tape, stacked, model.head_weight.value,
                         model.head_bias.value);
  return result;
}

SentenceForward model_forward(Tape& tape, MbchModel& model, const Tensor& x,
                              std::size_t valid_len, Mode mode) {
  const Tensor sentences[] = {x};
  const std::size_t lens[] = {valid_len};
  BatchForward batch = model_forward_batch(tape, model, sentences, lens, mode);
  Tensor probs2d = softmax_rows(tape, batch.logits);
  SentenceForward out;
  out.probs = Tensor::from_values({model.config.num_classes}, probs2d.values());
  out.pooled = batch.pooled.front();
  return out;
}

int predict(MbchModel& model, const Tensor& x, std::size_t valid_len) {
  Tape tape;
  SentenceForward fwd = model_forward(tape, model, x, valid_len, Mode::infer);
  const auto& p = fwd.probs.values();
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

// ---------------------------------------------------------------------------
// Checkpoint container. Fixed-width little-endian fields, raw IEEE doubles,
// so a round trip reproduces every value bit for bit.

namespace {

constexpr char kMagic[8] = {'M', 'B', 'C', 'H', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  os.write(buf, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  os.write(buf, 8);
}

void put_f64s(std::ostream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class CheckpointReader {
 public:
  CheckpointReader(std::istream& is, std::filesystem::path path)
      : is_(is), path_(std::move(path)) {}

  std::uint32_t u32() {
    char buf[4];
    read(buf, 4, "u32");
    std::uint32_t v;
    std::memcpy(&v, buf, 4);
    return v;
  }

  std::uint64_t u64() {
    char buf[8];
    read(buf, 8, "u64");
    std::uint64_t v;
    std::memcpy(&v, buf, 8);
    return v;
  }

  std::vector<double> f64s(std::size_t count) {
    std::vector<double> v(count);
    read(reinterpret_cast<char*>(v.data()), count * sizeof(double), "doubles");
    return v;
  }

  std::string string() {
    const std::uint32_t n = u32();
    if (n > (1u << 20)) fail("unreasonable string length");
    std::string s(n, '\0');
    read(s.data(), n, "string");
    return s;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path_.string(), 0, "checkpoint: " + what);
  }

 private:
  void read(char* dst, std::size_t n, const char* what) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (!is_) fail(std::string("truncated while reading ") + what);
  }

  std::istream& is_;
  std::filesystem::path path_;
};

}  // namespace

void save_checkpoint(const MbchModel& model,
                     const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put_u32(os, kVersion);

  const ModelConfig& cfg = model.config;
  put_u32(os, static_cast<std::uint32_t>(cfg.filter_sizes.size()));
  for (std::size_t h : cfg.filter_sizes) put_u64(os, h);
  put_u64(os, cfg.feature_maps);
  put_u64(os, cfg.bottleneck_dim);
  put_u64(os, cfg.highway_depth);
  put_u64(os, cfg.num_classes);
  put_u64(os, cfg.embed_dim);
  put_u64(os, cfg.seed);

  const auto params = model.parameters();
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put_string(os, p->name);
    put_u32(os, static_cast<std::uint32_t>(p->value.ndim()));
    for (std::size_t d : p->value.shape()) put_u64(os, d);
    put_f64s(os, p->value.values());
  }

  auto& mutable_model = const_cast<MbchModel&>(model);  // stats read only
  const auto stats = mutable_model.running_stats();
  put_u32(os, static_cast<std::uint32_t>(stats.size()));
  for (const auto& [name, rs] : stats) {
    put_string(os, name);
    put_u64(os, rs->mean.size());
    put_f64s(os, rs->mean);
    put_f64s(os, rs->var);
  }
  os.flush();
  if (!os) throw Error("failed writing checkpoint: " + path.string());
}

MbchModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path.string());
  CheckpointReader r(is, path);

  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) r.fail("bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    r.fail("unsupported version " + std::to_string(version));
  }

  ModelConfig cfg;
  cfg.filter_sizes.resize(r.u32());
  for (auto& h : cfg.filter_sizes) h = r.u64();
  cfg.feature_maps = r.u64();
  cfg.bottleneck_dim = r.u64();
  cfg.highway_depth = r.u64();
  cfg.num_classes = r.u64();
  cfg.embed_dim = r.u64();
  cfg.seed = r.u64();

  MbchModel model = init_model(cfg);

  const std::uint32_t param_count = r.u32();
  auto params = model.parameters();
  if (param_count != params.size()) {
    r.fail("expected " + std::to_string(params.size()) + " parameters, found " +
           std::to_string(param_count));
  }
  for (Parameter* p : params) {
    const std::string name = r.string();
    if (name != p->name) {
      r.fail("parameter order mismatch: expected " + p->name + ", found " +
             name);
    }
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    if (shape != p->value.shape()) {
      r.fail("shape mismatch for " + name + ": expected " +
             shape_str(p->value.shape()) + ", found " + shape_str(shape));
    }
    p->value.values() = r.f64s(shape_numel(shape));
  }

  const std::uint32_t stats_count = r.u32();
  auto stats = model.running_stats();
  if (stats_count != stats.size()) {
    r.fail("expected " + std::to_string(stats.size()) +
           " running-stat blocks, found " + std::to_string(stats_count));
  }
  for (auto& [name, rs] : stats) {
    const std::string found = r.string();
    if (found != name) {
      r.fail("running-stat order mismatch: expected " + name + ", found " +
             found);
    }
    const std::uint64_t channels = r.u64();
    if (channels != rs->mean.size()) {
      r.fail("channel count mismatch for " + name);
    }
    rs->mean = r.f64s(channels);
    rs->var = r.f64s(channels);
  }
  return model;
}

}  // namespace mbch
