#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bayescal/errors.hpp"

namespace bayescal::diff {

/// Rank-2 shape. Scalars are 1x1, vectors are 1xn rows.
struct Shape {
  std::size_t rows = 1;
  std::size_t cols = 1;

  [[nodiscard]] constexpr std::size_t size() const noexcept { return rows * cols; }
  [[nodiscard]] constexpr bool is_scalar() const noexcept { return rows == 1 && cols == 1; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    os << '(' << rows << 'x' << cols << ')';
    return os.str();
  }
};

/// Dense row-major array of 64-bit reals.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
  Array(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw StructuralError("array data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_.str());
    }
  }

  static Array scalar(double v) { return Array(Shape{1, 1}, v); }
  static Array row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Array(Shape{1, n}, std::move(v));
  }
  static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Array(Shape{rows, cols}, std::move(v));
  }
  static Array matrix(std::initializer_list<std::initializer_list<double>> rows_init) {
    const std::size_t r = rows_init.size();
    const std::size_t c = r == 0 ? 0 : rows_init.begin()->size();
    std::vector<double> d;
    d.reserve(r * c);
    for (const auto& row_init : rows_init) {
      if (row_init.size() != c) throw StructuralError("ragged matrix initializer");
      d.insert(d.end(), row_init.begin(), row_init.end());
    }
    return Array(Shape{r, c}, std::move(d));
  }

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t rows() const noexcept { return shape_.rows; }
  [[nodiscard]] std::size_t cols() const noexcept { return shape_.cols; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

  [[nodiscard]] std::span<double> data() noexcept { return data_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_.cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_.cols + c]; }

  [[nodiscard]] double item() const {
    if (!shape_.is_scalar()) throw ContractError("item() on non-scalar array " + shape_.str());
    return data_[0];
  }

  [[nodiscard]] bool all_finite() const noexcept {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Array&, const Array&) = default;

 private:
  Shape shape_{0, 0};
  std::vector<double> data_;
};

}  // namespace bayescal::diff
