#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sgt/error.hpp"

namespace sgt {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool same_shape(const Matrix& o) const noexcept { return rows == o.rows && cols == o.cols; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

inline std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

}  // namespace sgt
