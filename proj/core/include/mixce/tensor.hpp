#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace mixce {

// Dense row-major tensor of doubles, rank 1 or 2. All model math here runs
// in 64-bit; the matrices are tiny by deep-learning standards and double
// precision keeps finite-difference gradient checks meaningful.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;

  static Tensor zeros(std::size_t n);
  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor scalar(double v);
  static Tensor vector(std::initializer_list<double> vs);
  static Tensor vector(std::vector<double> vs);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> vs);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> vs);

  std::size_t rank() const { return shape.size(); }
  std::size_t size() const { return values.size(); }

  // Rank-2 accessors; a rank-1 tensor behaves as a single row.
  std::size_t rows() const { return rank() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 0); }

  double& at(std::size_t i, std::size_t j) { return values[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols() + j]; }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  std::span<double> data() { return values; }
  std::span<const double> data() const { return values; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
};

}  // namespace mixce
