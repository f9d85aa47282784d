#ifndef IMAC_CORE_TENSOR_HPP
#define IMAC_CORE_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "core/error.hpp"

namespace imac {

// Row-major 64-bit real tensor. Training code uses it almost exclusively as a
// [rows, cols] matrix with rows = batch.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols)
      : shape{rows, cols}, data(rows * cols, 0.0) {}
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    data.assign(n, 0.0);
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? (shape.empty() ? 0 : 1) : shape[1]; }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double* row(std::size_t r) { return data.data() + r * cols(); }
  const double* row(std::size_t r) const { return data.data() + r * cols(); }

  void resize(std::size_t rows, std::size_t cols) {
    shape.assign({rows, cols});
    data.assign(rows * cols, 0.0);
  }
  void zero() { std::fill(data.begin(), data.end(), 0.0); }

  bool finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// C = A[m,k] * B[k,n], accumulating when acc is set.
void gemm(const Tensor& a, const Tensor& b, Tensor& c, bool acc = false);
// C = A[m,k] * B[n,k]^T
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c, bool acc = false);
// C = A[k,m]^T * B[k,n]
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c, bool acc = false);

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape != b.shape) throw ConfigError(std::string(what) + ": shape mismatch");
}

}  // namespace imac

#endif
