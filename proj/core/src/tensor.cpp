#include "mixce/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace mixce {

Tensor Tensor::zeros(std::size_t n) {
  Tensor t;
  t.shape = {n};
  t.values.assign(n, 0.0);
  return t;
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
  Tensor t;
  t.shape = {rows, cols};
  t.values.assign(rows * cols, 0.0);
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.shape = {1};
  t.values = {v};
  return t;
}

Tensor Tensor::vector(std::initializer_list<double> vs) {
  return vector(std::vector<double>(vs));
}

Tensor Tensor::vector(std::vector<double> vs) {
  Tensor t;
  t.shape = {vs.size()};
  t.values = std::move(vs);
  return t;
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<double> vs) {
  return matrix(rows, cols, std::vector<double>(vs));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> vs) {
  if (vs.size() != rows * cols) {
    throw std::invalid_argument("Tensor::matrix: value count does not match shape");
  }
  Tensor t;
  t.shape = {rows, cols};
  t.values = std::move(vs);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace mixce
