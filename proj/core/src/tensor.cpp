#include "mbch/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace mbch {

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  out += "]";
  return out;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto data = std::make_shared<Data>();
  data->values.assign(shape_numel(shape), 0.0);
  data->shape = std::move(shape);
  data->requires_grad = requires_grad;
  return Tensor(std::move(data));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not fill shape " + shape_str(shape));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("zero dimension in shape " + shape_str(shape));
  }
  auto data = std::make_shared<Data>();
  data->shape = std::move(shape);
  data->values = std::move(values);
  data->requires_grad = requires_grad;
  return Tensor(std::move(data));
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return from_values(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values, bool requires_grad) {
  return from_values({rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

std::vector<double>& Tensor::grad() const {
  if (data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
  return data_->grad;
}

void Tensor::zero_grad() const {
  if (!data_->grad.empty()) {
    std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
  }
}

bool Tensor::all_finite() const {
  return std::all_of(data_->values.begin(), data_->values.end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace mbch
