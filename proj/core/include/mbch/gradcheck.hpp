#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mbch/autodiff.hpp"
#include "mbch/tensor.hpp"

namespace mbch {

/// Builds the graph under check on a fresh tape and returns the scalar loss.
/// Must be deterministic: grad_check evaluates it many times.
using ForwardFn = std::function<Tensor(Tape&)>;

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::vector<std::size_t> failing_coords;  // rel error > tol
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;

  bool passed() const;
};

/// Central-difference check of every coordinate of every parameter against
/// the analytic gradients from one backward pass.
/// rel_error = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradCheckReport grad_check(const ForwardFn& forward,
                           std::span<Parameter* const> params, double step,
                           double tol);

}  // namespace mbch
