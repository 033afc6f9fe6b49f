#include "mbch/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace mbch {

namespace {

void require_2d(const Tensor& t, const char* what) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(what) + " must be 2-D, got " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

bool any_requires_grad(std::span<const Tensor> ts) {
  return std::any_of(ts.begin(), ts.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

/// Elementwise unary op with local derivative df(x, out).
template <class Fwd, class Dfn>
Tensor unary_elementwise(Tape& tape, const Tensor& x, Fwd f, Dfn df) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = f(xv[i]);
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([x, out, df]() mutable {
      const auto& og = out.grad();
      const auto& xv = x.values();
      const auto& ov = out.values();
      auto& xg = x.grad();
      for (std::size_t i = 0; i < xv.size(); ++i) {
        xg[i] += og[i] * df(xv[i], ov[i]);
      }
    });
  }
  return out;
}

}  // namespace

void Tape::backward(Tensor loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape())
                                        : std::string("undefined tensor")));
  }
  if (consumed_) {
    throw ContractError("backward already ran on this tape");
  }
  consumed_ = true;
  loss.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

Tensor affine(Tape& tape, const Tensor& x, const Tensor& weight,
              const Tensor& bias) {
  require_2d(x, "affine input");
  require_2d(weight, "affine weight");
  if (bias.ndim() != 1) {
    throw DimensionError("affine bias must be 1-D, got " +
                         shape_str(bias.shape()));
  }
  if (x.cols() != weight.rows() || weight.cols() != bias.numel()) {
    throw DimensionError("affine: input " + shape_str(x.shape()) +
                         ", weight " + shape_str(weight.shape()) + ", bias " +
                         shape_str(bias.shape()));
  }
  const std::size_t B = x.rows(), I = x.cols(), O = weight.cols();
  Tensor out = Tensor::zeros({B, O});
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t c = 0; c < O; ++c) {
      double acc = bias.at(c);
      for (std::size_t k = 0; k < I; ++k) acc += x.at(r, k) * weight.at(k, c);
      out.at(r, c) = acc;
    }
  }
  const Tensor ins[] = {x, weight, bias};
  if (any_requires_grad(ins)) {
    out.set_requires_grad(true);
    tape.record([x, weight, bias, out, B, I, O]() mutable {
      const auto& og = out.grad();
      for (std::size_t r = 0; r < B; ++r) {
        for (std::size_t c = 0; c < O; ++c) {
          const double g = og[r * O + c];
          if (g == 0.0) continue;
          if (x.requires_grad()) {
            auto& xg = x.grad();
            for (std::size_t k = 0; k < I; ++k) {
              xg[r * I + k] += g * weight.at(k, c);
            }
          }
          if (weight.requires_grad()) {
            auto& wg = weight.grad();
            for (std::size_t k = 0; k < I; ++k) {
              wg[k * O + c] += g * x.at(r, k);
            }
          }
          if (bias.requires_grad()) bias.grad()[c] += g;
        }
      }
    });
  }
  return out;
}

Tensor conv1d_valid(Tape& tape, const Tensor& x, const Tensor& filters,
                    const Tensor& bias) {
  require_2d(x, "conv input");
  if (filters.ndim() != 3) {
    throw DimensionError("conv filters must be [F x h x M], got " +
                         shape_str(filters.shape()));
  }
  const std::size_t n = x.rows(), M = x.cols();
  const std::size_t F = filters.shape()[0], h = filters.shape()[1];
  if (filters.shape()[2] != M) {
    throw DimensionError("conv: input " + shape_str(x.shape()) +
                         " vs filters " + shape_str(filters.shape()));
  }
  if (bias.ndim() != 1 || bias.numel() != F) {
    throw DimensionError("conv bias must be [" + std::to_string(F) +
                         "], got " + shape_str(bias.shape()));
  }
  if (n < h) {
    throw DimensionError("sequence too short: input " + shape_str(x.shape()) +
                         " has fewer rows than filter window " +
                         std::to_string(h));
  }
  const std::size_t L = n - h + 1;
  Tensor out = Tensor::zeros({L, F});
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t f = 0; f < F; ++f) {
      double acc = bias.at(f);
      for (std::size_t j = 0; j < h; ++j) {
        const std::size_t xoff = (i + j) * M;
        const std::size_t foff = (f * h + j) * M;
        for (std::size_t m = 0; m < M; ++m) {
          acc += filters.at(foff + m) * x.at(xoff + m);
        }
      }
      out.at(i, f) = acc;
    }
  }
  const Tensor ins[] = {x, filters, bias};
  if (any_requires_grad(ins)) {
    out.set_requires_grad(true);
    tape.record([x, filters, bias, out, L, F, h, M]() mutable {
      const auto& og = out.grad();
      for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t f = 0; f < F; ++f) {
          const double g = og[i * F + f];
          if (g == 0.0) continue;
          if (bias.requires_grad()) bias.grad()[f] += g;
          for (std::size_t j = 0; j < h; ++j) {
            const std::size_t xoff = (i + j) * M;
            const std::size_t foff = (f * h + j) * M;
            if (x.requires_grad()) {
              auto& xg = x.grad();
              for (std::size_t m = 0; m < M; ++m) {
                xg[xoff + m] += g * filters.at(foff + m);
              }
            }
            if (filters.requires_grad()) {
              auto& fg = filters.grad();
              for (std::size_t m = 0; m < M; ++m) {
                fg[foff + m] += g * x.at(xoff + m);
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  return unary_elementwise(
      tape, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary_elementwise(
      tape, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double s) { return s * (1.0 - s); });
}

Tensor one_minus(Tape& tape, const Tensor& x) {
  return unary_elementwise(
      tape, x, [](double v) { return 1.0 - v; },
      [](double, double) { return -1.0; });
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out.at(i) = a.at(i) + b.at(i);
  }
  const Tensor ins[] = {a, b};
  if (any_requires_grad(ins)) {
    out.set_requires_grad(true);
    tape.record([a, b, out]() mutable {
      const auto& og = out.grad();
      if (a.requires_grad()) {
        auto& ag = a.grad();
        for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
      }
      if (b.requires_grad()) {
        auto& bg = b.grad();
        for (std::size_t i = 0; i < og.size(); ++i) bg[i] += og[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out.at(i) = a.at(i) * b.at(i);
  }
  const Tensor ins[] = {a, b};
  if (any_requires_grad(ins)) {
    out.set_requires_grad(true);
    tape.record([a, b, out]() mutable {
      const auto& og = out.grad();
      if (a.requires_grad()) {
        auto& ag = a.grad();
        for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * b.at(i);
      }
      if (b.requires_grad()) {
        auto& bg = b.grad();
        for (std::size_t i = 0; i < og.size(); ++i) bg[i] += og[i] * a.at(i);
      }
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([x, out]() mutable {
      const double g = out.grad()[0];
      auto& xg = x.grad();
      for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += g;
    });
  }
  return out;
}

Tensor concat_channels(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_channels on empty list");
  const bool flat = parts.front().ndim() == 1;
  const std::size_t L = flat ? 1 : parts.front().rows();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (flat) {
      if (p.ndim() != 1) {
        throw DimensionError("concat_channels: mixed ranks, got " +
                             shape_str(p.shape()));
      }
      total += p.numel();
    } else {
      require_2d(p, "concat_channels input");
      if (p.rows() != L) {
        throw DimensionError("concat_channels: leading length " +
                             shape_str(parts.front().shape()) + " vs " +
                             shape_str(p.shape()));
      }
      total += p.cols();
    }
  }
  Tensor out = flat ? Tensor::zeros({total}) : Tensor::zeros({L, total});
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t c = flat ? p.numel() : p.cols();
    for (std::size_t r = 0; r < L; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        out.at(r * total + offset + j) = p.at(r * c + j);
      }
    }
    offset += c;
  }
  if (any_requires_grad(parts)) {
    out.set_requires_grad(true);
    std::vector<Tensor> held(parts.begin(), parts.end());
    tape.record([held = std::move(held), out, L, total]() mutable {
      const auto& og = out.grad();
      std::size_t offset = 0;
      for (Tensor& p : held) {
        const std::size_t c = p.numel() / L;
        if (p.requires_grad()) {
          auto& pg = p.grad();
          for (std::size_t r = 0; r < L; ++r) {
            for (std::size_t j = 0; j < c; ++j) {
              pg[r * c + j] += og[r * total + offset + j];
            }
          }
        }
        offset += c;
      }
    });
  }
  return out;
}

Tensor concat_rows(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows on empty list");
  const std::size_t C = parts.front().ndim() == 2 ? parts.front().cols() : 0;
  std::size_t total_rows = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_rows input");
    if (p.cols() != C) {
      throw DimensionError("concat_rows: column count " +
                           shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    total_rows += p.rows();
  }
  Tensor out = Tensor::zeros({total_rows, C});
  std::size_t row = 0;
  for (const Tensor& p : parts) {
    std::copy(p.values().begin(), p.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(row * C));
    row += p.rows();
  }
  if (any_requires_grad(parts)) {
    out.set_requires_grad(true);
    std::vector<Tensor> held(parts.begin(), parts.end());
    tape.record([held = std::move(held), out, C]() mutable {
      const auto& og = out.grad();
      std::size_t offset = 0;
      for (Tensor& p : held) {
        const std::size_t count = p.numel();
        if (p.requires_grad()) {
          auto& pg = p.grad();
          for (std::size_t i = 0; i < count; ++i) pg[i] += og[offset + i];
        }
        offset += count;
      }
      (void)C;
    });
  }
  return out;
}

Tensor stack_rows(Tape& tape, std::span<const Tensor> rows) {
  if (rows.empty()) throw ContractError("stack_rows on empty list");
  const std::size_t C = rows.front().numel();
  for (const Tensor& r : rows) {
    if (r.ndim() != 1 || r.numel() != C) {
      throw DimensionError("stack_rows: expected 1-D length " +
                           std::to_string(C) + ", got " +
                           shape_str(r.shape()));
    }
  }
  Tensor out = Tensor::zeros({rows.size(), C});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].values().begin(), rows[i].values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(i * C));
  }
  if (any_requires_grad(rows)) {
    out.set_requires_grad(true);
    std::vector<Tensor> held(rows.begin(), rows.end());
    tape.record([held = std::move(held), out, C]() mutable {
      const auto& og = out.grad();
      for (std::size_t i = 0; i < held.size(); ++i) {
        if (!held[i].requires_grad()) continue;
        auto& rg = held[i].grad();
        for (std::size_t j = 0; j < C; ++j) rg[j] += og[i * C + j];
      }
    });
  }
  return out;
}

Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin,
                  std::size_t end) {
  require_2d(x, "slice_rows input");
  if (begin >= end || end > x.rows()) {
    throw IndexError("slice_rows [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") out of range for " +
                     shape_str(x.shape()));
  }
  const std::size_t C = x.cols(), L = end - begin;
  Tensor out = Tensor::zeros({L, C});
  std::copy(x.values().begin() + static_cast<std::ptrdiff_t>(begin * C),
            x.values().begin() + static_cast<std::ptrdiff_t>(end * C),
            out.values().begin());
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([x, out, begin, C, L]() mutable {
      const auto& og = out.grad();
      auto& xg = x.grad();
      for (std::size_t i = 0; i < L * C; ++i) xg[begin * C + i] += og[i];
    });
  }
  return out;
}

Tensor max_over_time(Tape& tape, const Tensor& x, std::size_t valid_len) {
  require_2d(x, "max_over_time input");
  if (valid_len < 1 || valid_len > x.rows()) {
    throw IndexError("max_over_time valid_len " + std::to_string(valid_len) +
                     " out of range [1, " + std::to_string(x.rows()) + "]");
  }
  const std::size_t F = x.cols();
  Tensor out = Tensor::zeros({F});
  std::vector<std::size_t> argmax(F, 0);
  for (std::size_t f = 0; f < F; ++f) {
    double best = x.at(0, f);
    std::size_t best_i = 0;
    for (std::size_t i = 1; i < valid_len; ++i) {
      if (x.at(i, f) > best) {  // ties keep the first occurrence
        best = x.at(i, f);
        best_i = i;
      }
    }
    out.at(f) = best;
    argmax[f] = best_i;
  }
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([x, out, argmax = std::move(argmax), F]() mutable {
      const auto& og = out.grad();
      auto& xg = x.grad();
      for (std::size_t f = 0; f < F; ++f) {
        xg[argmax[f] * F + f] += og[f];
      }
    });
  }
  return out;
}

Tensor batch_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, double eps, Mode mode,
                  RunningStats& stats) {
  require_2d(x, "batch_norm input");
  const std::size_t B = x.rows(), C = x.cols();
  if (gamma.ndim() != 1 || gamma.numel() != C || beta.ndim() != 1 ||
      beta.numel() != C) {
    throw DimensionError("batch_norm: input " + shape_str(x.shape()) +
                         ", gamma " + shape_str(gamma.shape()) + ", beta " +
                         shape_str(beta.shape()));
  }
  if (stats.mean.size() != C || stats.var.size() != C) {
    throw DimensionError("batch_norm: running stats sized " +
                         std::to_string(stats.mean.size()) + " for " +
                         std::to_string(C) + " channels");
  }
  if (mode == Mode::train && B < 2) {
    throw ContractError("batch too small: batch_norm train mode needs B >= 2, got B=" +
                        std::to_string(B));
  }

  std::vector<double> mu(C), inv_std(C);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0;
      for (std::size_t r = 0; r < B; ++r) m += x.at(r, c);
      m /= static_cast<double>(B);
      double v = 0.0;  // population variance, divide by B
      for (std::size_t r = 0; r < B; ++r) {
        const double d = x.at(r, c) - m;
        v += d * d;
      }
      v /= static_cast<double>(B);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + eps);
      stats.mean[c] = (1.0 - stats.momentum) * stats.mean[c] + stats.momentum * m;
      stats.var[c] = (1.0 - stats.momentum) * stats.var[c] + stats.momentum * v;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.var[c] + eps);
    }
  }

  Tensor out = Tensor::zeros({B, C});
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      out.at(r, c) = gamma.at(c) * (x.at(r, c) - mu[c]) * inv_std[c] + beta.at(c);
    }
  }

  const Tensor ins[] = {x, gamma, beta};
  if (!any_requires_grad(ins)) return out;
  out.set_requires_grad(true);

  if (mode == Mode::infer) {
    // Running stats are constants here: y = gamma * (x - m) * s + beta.
    tape.record([x, gamma, beta, out, mu = std::move(mu),
                 inv_std = std::move(inv_std), B, C]() mutable {
      const auto& og = out.grad();
      for (std::size_t r = 0; r < B; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
          const double g = og[r * C + c];
          if (x.requires_grad()) {
            x.grad()[r * C + c] += g * gamma.at(c) * inv_std[c];
          }
          if (gamma.requires_grad()) {
            gamma.grad()[c] += g * (x.at(r, c) - mu[c]) * inv_std[c];
          }
          if (beta.requires_grad()) beta.grad()[c] += g;
        }
      }
    });
    return out;
  }

  tape.record([x, gamma, beta, out, mu = std::move(mu),
               inv_std = std::move(inv_std), B, C]() mutable {
    const auto& og = out.grad();
    const double nb = static_cast<double>(B);
    for (std::size_t c = 0; c < C; ++c) {
      // Accumulate channel sums for d(var) and d(mean).
      double sum_dxhat = 0.0, sum_dxhat_xc = 0.0, sum_dout = 0.0,
             sum_dout_xhat = 0.0;
      for (std::size_t r = 0; r < B; ++r) {
        const double g = og[r * C + c];
        const double xc = x.at(r, c) - mu[c];
        const double dxhat = g * gamma.at(c);
        sum_dxhat += dxhat;
        sum_dxhat_xc += dxhat * xc;
        sum_dout += g;
        sum_dout_xhat += g * xc * inv_std[c];
      }
      if (gamma.requires_grad()) gamma.grad()[c] += sum_dout_xhat;
      if (beta.requires_grad()) beta.grad()[c] += sum_dout;
      if (x.requires_grad()) {
        const double s = inv_std[c];
        const double dvar = sum_dxhat_xc * (-0.5) * s * s * s;
        const double dmu = -sum_dxhat * s;  // sum of (x - mu) is zero
        auto& xg = x.grad();
        for (std::size_t r = 0; r < B; ++r) {
          const double g = og[r * C + c];
          const double xc = x.at(r, c) - mu[c];
          xg[r * C + c] +=
              g * gamma.at(c) * s + dvar * 2.0 * xc / nb + dmu / nb;
        }
      }
    }
  });
  return out;
}

namespace {

/// Shift-stabilized row softmax into `probs` (row-major [B x k]).
void softmax_values(const std::vector<double>& logits, std::size_t B,
                    std::size_t k, std::vector<double>& probs) {
  probs.resize(B * k);
  for (std::size_t r = 0; r < B; ++r) {
    const double* q = logits.data() + r * k;
    double* p = probs.data() + r * k;
    double mx = q[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, q[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(q[j] - mx);
      z += p[j];
    }
    for (std::size_t j = 0; j < k; ++j) p[j] /= z;
  }
}

}  // namespace

Tensor softmax_rows(Tape& tape, const Tensor& logits) {
  require_2d(logits, "softmax input");
  const std::size_t B = logits.rows(), k = logits.cols();
  Tensor out = Tensor::zeros({B, k});
  softmax_values(logits.values(), B, k, out.values());
  if (logits.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([logits, out, B, k]() mutable {
      const auto& og = out.grad();
      const auto& p = out.values();
      auto& lg = logits.grad();
      for (std::size_t r = 0; r < B; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += og[r * k + j] * p[r * k + j];
        for (std::size_t j = 0; j < k; ++j) {
          lg[r * k + j] += p[r * k + j] * (og[r * k + j] - dot);
        }
      }
    });
  }
  return out;
}

SceResult softmax_cross_entropy(Tape& tape, const Tensor& logits,
                                std::span<const int> labels) {
  require_2d(logits, "softmax_cross_entropy logits");
  const std::size_t B = logits.rows(), k = logits.cols();
  if (labels.size() != B) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_str(logits.shape()));
  }
  for (std::size_t r = 0; r < B; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
      throw IndexError("label " + std::to_string(labels[r]) + " at row " +
                       std::to_string(r) + " outside [0, " + std::to_string(k) +
                       ")");
    }
  }

  Tensor probs = Tensor::zeros({B, k});
  softmax_values(logits.values(), B, k, probs.values());

  // loss_r = log(sum exp(q - max)) - (q_true - max), accumulated in the
  // shifted domain to stay finite for large logits.
  double total = 0.0;
  for (std::size_t r = 0; r < B; ++r) {
    const double* q = logits.values().data() + r * k;
    double mx = q[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, q[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(q[j] - mx);
    total += std::log(z) - (q[static_cast<std::size_t>(labels[r])] - mx);
  }
  Tensor loss = Tensor::scalar(total / static_cast<double>(B));

  if (logits.requires_grad()) {
    loss.set_requires_grad(true);
    std::vector<int> label_copy(labels.begin(), labels.end());
    tape.record([logits, probs, loss, label_copy = std::move(label_copy), B,
                 k]() mutable {
      const double g = loss.grad()[0] / static_cast<double>(B);
      auto& lg = logits.grad();
      for (std::size_t r = 0; r < B; ++r) {
        for (std::size_t j = 0; j < k; ++j) {
          const double onehot =
              (j == static_cast<std::size_t>(label_copy[r])) ? 1.0 : 0.0;
          lg[r * k + j] += g * (probs.at(r, j) - onehot);
        }
      }
    });
  }
  return {loss, probs};
}

}  // namespace mbch
