#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "mbch/errors.hpp"

namespace mbch {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense double-precision array with an optional same-shape gradient.
/// Tensor is a shared handle: copies alias the same storage, which is what
/// lets recorded operations see gradients accumulated later.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  /// 1-D convenience.
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  /// 2-D convenience, row-major.
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }

  const Shape& shape() const { return data_->shape; }
  std::size_t ndim() const { return data_->shape.size(); }
  std::size_t numel() const { return data_->values.size(); }
  /// Leading dimension of a 2-D tensor.
  std::size_t rows() const { return data_->shape.at(0); }
  /// Trailing dimension of a 2-D tensor.
  std::size_t cols() const { return data_->shape.at(1); }

  std::vector<double>& values() { return data_->values; }
  const std::vector<double>& values() const { return data_->values; }

  double at(std::size_t i) const { return data_->values[i]; }
  double at(std::size_t r, std::size_t c) const {
    return data_->values[r * cols() + c];
  }
  double& at(std::size_t i) { return data_->values[i]; }
  double& at(std::size_t r, std::size_t c) {
    return data_->values[r * cols() + c];
  }

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool v) { data_->requires_grad = v; }

  /// Gradient array, allocated to zeros on first access. It lives on the
  /// shared storage, so recorded operations accumulate into it through
  /// const handles as well; only `values` is deep-const.
  std::vector<double>& grad() const;
  bool has_grad() const { return data_ && !data_->grad.empty(); }
  void zero_grad() const;

  /// True when every value is finite.
  bool all_finite() const;

  /// Identity of the underlying storage, for aliasing checks.
  const void* storage_id() const { return data_.get(); }

 private:
  struct Data {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until requested
    bool requires_grad = false;
  };

  explicit Tensor(std::shared_ptr<Data> data) : data_(std::move(data)) {}

  std::shared_ptr<Data> data_;
};

/// Named learnable tensor; requires_grad is always on.
struct Parameter {
  std::string name;
  Tensor value;

  Parameter() = default;
  Parameter(std::string name_, Tensor value_)
      : name(std::move(name_)), value(std::move(value_)) {
    value.set_requires_grad(true);
  }
};

}  // namespace mbch
