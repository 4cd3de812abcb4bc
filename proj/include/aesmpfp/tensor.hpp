#pragma once

#include <algorithm>
#include <cstring>
#include <numeric>
#include <vector>

#include "common.hpp"

namespace aesmpfp {

// Dense row-major tensor of doubles with up to 3 dims.  Rank 0 is a scalar.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<size_t> dims) : dims_(std::move(dims)) {
    if (dims_.size() > 3) throw ShapeMismatch("tensor rank > 3");
    data_.assign(numel_of(dims_), 0.0);
  }

  static Tensor scalar(double v) {
    Tensor t{std::vector<size_t>{}};
    t.data_[0] = v;
    return t;
  }

  static Tensor zeros(std::vector<size_t> dims) { return Tensor(std::move(dims)); }

  static Tensor from(std::vector<size_t> dims, std::vector<double> vals) {
    Tensor t;
    t.dims_ = std::move(dims);
    if (t.dims_.size() > 3) throw ShapeMismatch("tensor rank > 3");
    if (vals.size() != numel_of(t.dims_)) throw ShapeMismatch("value count mismatch");
    t.data_ = std::move(vals);
    return t;
  }

  const std::vector<size_t>& dims() const { return dims_; }
  size_t rank() const { return dims_.size(); }
  size_t numel() const { return data_.size(); }
  size_t dim(size_t i) const { return dims_.at(i); }

  // Rows/cols view of a rank-1 or rank-2 tensor (rank-1 is a single row).
  size_t rows() const {
    if (dims_.size() == 2) return dims_[0];
    if (dims_.size() <= 1) return 1;
    throw ShapeMismatch("rows() on rank-3 tensor");
  }
  size_t cols() const {
    if (dims_.size() == 2) return dims_[1];
    if (dims_.size() == 1) return dims_[0];
    if (dims_.empty()) return 1;
    throw ShapeMismatch("cols() on rank-3 tensor");
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double& at2(size_t r, size_t c) { return data_[r * cols() + c]; }
  double at2(size_t r, size_t c) const { return data_[r * cols() + c]; }

  double value() const {
    if (numel() != 1) throw ShapeMismatch("value() on non-scalar");
    return data_[0];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  static size_t numel_of(const std::vector<size_t>& dims) {
    size_t n = 1;
    for (size_t d : dims) n *= d;
    return n;
  }

 private:
  std::vector<size_t> dims_;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// GEMM kernels.  C (m x n) accumulates A*B with the usual transpose variants.
// The ikj loop order keeps the inner loop contiguous in B and C so the
// compiler can vectorize it.
// ---------------------------------------------------------------------------

// C += A(m x k) * B(k x n)
inline void gemm_nn(const double* A, const double* B, double* C, size_t m, size_t k,
                    size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    double* c = C + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double av = a[p];
      const double* b = B + p * n;
      for (size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C += A(m x k) * B^T where B is (n x k)
inline void gemm_nt(const double* A, const double* B, double* C, size_t m, size_t k,
                    size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    double* c = C + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* b = B + j * k;
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) acc += a[p] * b[p];
      c[j] += acc;
    }
  }
}

// C += A^T * B where A is (k x m), B is (k x n)
inline void gemm_tn(const double* A, const double* B, double* C, size_t m, size_t k,
                    size_t n) {
  for (size_t p = 0; p < k; ++p) {
    const double* a = A + p * m;
    const double* b = B + p * n;
    for (size_t i = 0; i < m; ++i) {
      const double av = a[i];
      double* c = C + i * n;
      for (size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace aesmpfp
