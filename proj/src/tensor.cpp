#include "fna/tensor.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <limits>

#include "fna/parallel.hpp"

namespace fna {
namespace {

std::string shape_str(std::size_t r, std::size_t c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

void require_same_shape(const BoolMask& mask, const Matrix& m, const char* op) {
  if (mask.rows() != m.rows() || mask.cols() != m.cols()) {
    throw ShapeError(std::string(op) + ": mask " + shape_str(mask.rows(), mask.cols()) +
                     " vs matrix " + shape_str(m.rows(), m.cols()));
  }
}

// Row-form product: acc[j] += a(i,k) * b(k,j) for k ascending. Each output
// element therefore sums its terms strictly left to right.
template <typename Out, typename In>
DenseMatrix<Out> matmul_rows(const DenseMatrix<In>& a, const DenseMatrix<In>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.rows(), a.cols()) + " x " + shape_str(b.rows(), b.cols()));
  }
  const std::size_t n = a.rows();
  const std::size_t inner = a.cols();
  const std::size_t m = b.cols();
  DenseMatrix<Out> c(n, m);
  parallel_for_rows(n, inner * m, [&](std::size_t begin, std::size_t end) {
    std::vector<double> acc(m);
    for (std::size_t i = begin; i < end; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const In* arow = a.row(i).data();
      for (std::size_t k = 0; k < inner; ++k) {
        const double aik = static_cast<double>(arow[k]);
        const In* brow = b.row(k).data();
        for (std::size_t j = 0; j < m; ++j) acc[j] += aik * static_cast<double>(brow[j]);
      }
      Out* crow = c.row(i).data();
      for (std::size_t j = 0; j < m; ++j) crow[j] = static_cast<Out>(acc[j]);
    }
  });
  return c;
}

}  // namespace

BoolMask BoolMask::complement() const {
  BoolMask out(rows_, cols_);
  for (std::size_t i = 0; i < bits_.size(); ++i) out.bits_[i] = bits_[i] ? 0 : 1;
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) { return matmul_rows<float>(a, b); }
MatrixF64 matmul(const MatrixF64& a, const MatrixF64& b) { return matmul_rows<double>(a, b); }

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + shape_str(a.rows(), a.cols()) + " x " +
                     shape_str(b.rows(), b.cols()) + "^T");
  }
  return matmul(a, transpose(b));
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

MatrixF64 to_f64(const Matrix& m) {
  MatrixF64 out(m.rows(), m.cols());
  std::copy(m.data().begin(), m.data().end(), out.data().begin());
  return out;
}

Matrix to_f32(const MatrixF64& m) {
  Matrix out(m.rows(), m.cols());
  auto dst = out.data();
  auto src = m.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i]);
  return out;
}

void add_row_bias(Matrix& m, std::span<const float> bias) {
  if (bias.size() != m.cols()) throw ShapeError("add_row_bias: bias length mismatch");
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
}

void scale_inplace(Matrix& m, float factor) {
  for (float& v : m.data()) v *= factor;
}

void add_inplace(Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("add: " + shape_str(a.rows(), a.cols()) + " + " + shape_str(b.rows(), b.cols()));
  }
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}

void softmax_rows_inplace(Matrix& m) {
  std::vector<double> e(m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    if (r.empty()) continue;
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      e[j] = std::exp(static_cast<double>(r[j]) - mx);
      sum += e[j];
    }
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = static_cast<float>(e[j] / sum);
  }
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out = m;
  softmax_rows_inplace(out);
  return out;
}

Matrix masked_softmax_rows(const Matrix& m, const BoolMask& mask) {
  require_same_shape(mask, m, "masked_softmax_rows");
  Matrix out(m.rows(), m.cols(), 0.0f);
  std::vector<double> e(m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    float mx = -std::numeric_limits<float>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (mask(i, j)) {
        mx = std::max(mx, m(i, j));
        any = true;
      }
    }
    if (!any) throw DegenerateMaskError("masked_softmax_rows: row " + std::to_string(i) + " fully masked");
    double sum = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      e[j] = mask(i, j) ? std::exp(static_cast<double>(m(i, j)) - mx) : 0.0;
      sum += e[j];
    }
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = static_cast<float>(e[j] / sum);
  }
  return out;
}

Matrix sunk_softmax_rows(const Matrix& m, const BoolMask& mask) {
  require_same_shape(mask, m, "sunk_softmax_rows");
  Matrix out = softmax_rows(m);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (!mask(i, j)) out(i, j) = 0.0f;
  return out;
}

MatrixF64 pinv_f64(const MatrixF64& m, double rel_tol) {
  if (m.rows() != m.cols()) throw ShapeError("pinv: non-square " + shape_str(m.rows(), m.cols()));
  const auto n = static_cast<Eigen::Index>(m.rows());
  MatrixF64 out(m.rows(), m.cols(), 0.0);
  if (n == 0) return out;

  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMajor> a(m.data().data(), n, n);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd& sigma = svd.singularValues();
  const double cutoff = rel_tol * (sigma.size() ? sigma(0) : 0.0);

  Eigen::VectorXd inv = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (sigma(i) > cutoff && sigma(i) > 0.0) inv(i) = 1.0 / sigma(i);

  Eigen::Map<RowMajor> result(out.data().data(), n, n);
  result = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  return out;
}

Matrix pinv(const Matrix& m, double rel_tol) { return to_f32(pinv_f64(to_f64(m), rel_tol)); }

Matrix layer_norm(const Matrix& m, std::span<const float> gamma, std::span<const float> beta,
                  float eps) {
  if (gamma.size() != m.cols() || beta.size() != m.cols()) {
    throw ShapeError("layer_norm: gamma/beta length must equal cols " + std::to_string(m.cols()));
  }
  if (!(eps > 0.0f)) throw std::invalid_argument("layer_norm: eps must be positive");
  Matrix out(m.rows(), m.cols());
  const double n = static_cast<double>(m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    double mean = 0.0;
    for (float v : r) mean += v;
    mean /= n;
    double var = 0.0;
    for (float v : r) var += (v - mean) * (v - mean);
    var /= n;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    auto o = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      o[j] = static_cast<float>((r[j] - mean) * inv_std * gamma[j] + beta[j]);
    }
  }
  return out;
}

float gelu(float x) {
  const double xd = x;
  return static_cast<float>(0.5 * xd * (1.0 + std::erf(xd * 0.70710678118654752440)));
}

Matrix gelu(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  auto src = m.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = gelu(src[i]);
  return out;
}

std::vector<float> row_norms(const Matrix& m) {
  std::vector<float> norms(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (float v : m.row(i)) s += static_cast<double>(v) * v;
    norms[i] = static_cast<float>(std::sqrt(s));
  }
  return norms;
}

float max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("max_abs_diff: shape mismatch");
  float worst = 0.0f;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
  return worst;
}

bool all_finite(const Matrix& m) {
  for (float v : m.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace fna
