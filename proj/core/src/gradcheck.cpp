#include "mbch/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mbch {

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(),
                     [](const GradCheckEntry& e) {
                       return e.failing_coords.empty();
                     });
}

namespace {

double eval_loss(const ForwardFn& forward) {
  Tape tape;
  Tensor loss = forward(tape);
  if (loss.numel() != 1) {
    throw ContractError("grad_check forward must return a scalar, got " +
                        shape_str(loss.shape()));
  }
  const double v = loss.at(0);
  if (!std::isfinite(v)) {
    throw ContractError("grad_check: forward produced a non-finite value");
  }
  return v;
}

}  // namespace

GradCheckReport grad_check(const ForwardFn& forward,
                           std::span<Parameter* const> params, double step,
                           double tol) {
  // One analytic pass.
  for (Parameter* p : params) {
    p->value.grad();  // ensure allocated so unreached parameters read as zero
    p->value.zero_grad();
  }
  Tape tape;
  Tensor loss = forward(tape);
  if (loss.numel() != 1) {
    throw ContractError("grad_check forward must return a scalar, got " +
                        shape_str(loss.shape()));
  }
  if (!std::isfinite(loss.at(0))) {
    throw ContractError("grad_check: forward produced a non-finite value");
  }
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->value.grad());

  GradCheckReport report;
  report.tolerance = tol;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    GradCheckEntry entry;
    entry.name = p.name;
    auto& vals = p.value.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + step;
      const double up = eval_loss(forward);
      vals[i] = saved - step;
      const double down = eval_loss(forward);
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_coord = i;
        entry.worst_analytic = a;
        entry.worst_numeric = numeric;
      }
      if (rel > tol) entry.failing_coords.push_back(i);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace mbch
