#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fna/accounting.hpp"

namespace fna {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DegenerateMaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major 2-D array. Storage is accounted (see accounting.hpp).
template <typename T>
class DenseMatrix {
 public:
  using value_type = T;
  using Storage = std::vector<T, AccountedAllocator<T>>;

  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::span<const T> values)
      : rows_(rows), cols_(cols), data_(values.begin(), values.end()) {
    if (data_.size() != rows * cols) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " != " + std::to_string(rows) + "x" + std::to_string(cols));
    }
  }
  DenseMatrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() noexcept { return {data_.data(), data_.size()}; }
  std::span<const T> data() const noexcept { return {data_.data(), data_.size()}; }

  bool operator==(const DenseMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ &&
           std::equal(data_.begin(), data_.end(), o.data_.begin());
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Storage data_;
};

using Matrix = DenseMatrix<float>;
using MatrixF64 = DenseMatrix<double>;

class BoolMask {
 public:
  BoolMask() = default;
  BoolMask(std::size_t rows, std::size_t cols, bool fill = true)
      : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  bool operator()(std::size_t r, std::size_t c) const noexcept { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) noexcept { bits_[r * cols_ + c] = v ? 1 : 0; }

  BoolMask complement() const;
  bool operator==(const BoolMask&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<unsigned char> bits_;
};

// C = A * B. Each output element accumulates its inner products in double,
// k = 0..K-1 left to right, then rounds once. Bit-identical for any thread count.
Matrix matmul(const Matrix& a, const Matrix& b);
MatrixF64 matmul(const MatrixF64& a, const MatrixF64& b);
// C = A * B^T with the same accumulation contract.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);
MatrixF64 to_f64(const Matrix& m);
Matrix to_f32(const MatrixF64& m);

// Adds bias (length cols) to every row.
void add_row_bias(Matrix& m, std::span<const float> bias);
void scale_inplace(Matrix& m, float factor);
// a += b elementwise.
void add_inplace(Matrix& a, const Matrix& b);

// Selects the listed rows, in order.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows);

void softmax_rows_inplace(Matrix& m);
Matrix softmax_rows(const Matrix& m);
// Softmax over unmasked entries only; masked entries are exactly 0.
Matrix masked_softmax_rows(const Matrix& m, const BoolMask& mask);
// mask (.) softmax(m): no renormalisation, masked entries exactly 0.
Matrix sunk_softmax_rows(const Matrix& m, const BoolMask& mask);

inline constexpr double kPinvRelTol = 1e-6;

// Moore-Penrose pseudo-inverse of a square matrix through a full SVD in
// double precision. Singular values below rel_tol * sigma_max count as zero.
MatrixF64 pinv_f64(const MatrixF64& m, double rel_tol = kPinvRelTol);
Matrix pinv(const Matrix& m, double rel_tol = kPinvRelTol);

Matrix layer_norm(const Matrix& m, std::span<const float> gamma, std::span<const float> beta,
                  float eps);

// Exact erf-form GELU, 0.5 x (1 + erf(x / sqrt 2)). std::erf is accurate to
// well under 1e-7 absolute over the float range.
float gelu(float x);
Matrix gelu(const Matrix& m);

// Euclidean norm of every row, accumulated in double.
std::vector<float> row_norms(const Matrix& m);

float max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& m);

}  // namespace fna
