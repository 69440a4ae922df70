// Reference implementations used by the tests. Everything here is written
// directly from the defining formulas, in double precision where that makes
// the oracle tighter, and shares no code with the library beyond the data
// containers.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "fna/attention.hpp"
#include "fna/rng.hpp"
#include "fna/tensor.hpp"
#include "fna/vit.hpp"

namespace oracle {

using fna::Matrix;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat to_eigen(const Matrix& m) {
  Mat out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j);
  return out;
}

inline Vec to_eigen(const std::vector<float>& v) {
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out(i) = v[i];
  return out;
}

inline Matrix from_eigen(const Mat& m) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out(i, j) = static_cast<float>(m(i, j));
  return out;
}

inline double max_abs(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }
inline double max_abs(const Matrix& a, const Mat& b) { return max_abs(to_eigen(a), b); }
inline double max_abs(const fna::MatrixF64& a, const Mat& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) worst = std::max(worst, std::abs(a(i, j) - b(i, j)));
  return worst;
}

inline Matrix random(std::size_t r, std::size_t c, fna::CounterRng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (float& v : m.data()) v = static_cast<float>((2.0 * rng.uniform() - 1.0) * scale);
  return m;
}

// Triple loop; each element sums in double over k ascending and rounds once.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += static_cast<double>(a(i, k)) * static_cast<double>(b(k, j));
      out(i, j) = static_cast<float>(acc);
    }
  return out;
}

inline Mat softmax(const Mat& w) {
  Mat out(w.rows(), w.cols());
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const double mx = w.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < w.cols(); ++j) sum += std::exp(w(i, j) - mx);
    for (Eigen::Index j = 0; j < w.cols(); ++j) out(i, j) = std::exp(w(i, j) - mx) / sum;
  }
  return out;
}

// sfm: masked logits replaced by -inf, then an ordinary softmax.
inline Mat masked_softmax(const Mat& w, const fna::BoolMask& m) {
  Mat out(w.rows(), w.cols());
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      if (m(i, j)) mx = std::max(mx, w(i, j));
    double sum = 0.0;
    for (Eigen::Index j = 0; j < w.cols(); ++j) sum += m(i, j) ? std::exp(w(i, j) - mx) : 0.0;
    for (Eigen::Index j = 0; j < w.cols(); ++j) out(i, j) = m(i, j) ? std::exp(w(i, j) - mx) / sum : 0.0;
  }
  return out;
}

// sfs = m (.) sf(w).
inline Mat sunk_softmax(const Mat& w, const fna::BoolMask& m) {
  Mat out = softmax(w);
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      if (!m(i, j)) out(i, j) = 0.0;
  return out;
}

// Largest relative Frobenius residual over the four Penrose conditions.
inline double penrose_residual(const Mat& a, const Mat& p) {
  const auto rel = [](const Mat& lhs, const Mat& rhs) {
    const double scale = std::max(rhs.norm(), 1e-30);
    return rhs.norm() == 0.0 && lhs.norm() == 0.0 ? 0.0 : (lhs - rhs).norm() / scale;
  };
  const Mat ap = a * p;
  const Mat pa = p * a;
  return std::max({rel(a * p * a, a), rel(p * a * p, p), rel(ap.transpose(), ap), rel(pa.transpose(), pa)});
}

// Pseudo-inverse through Jacobi SVD with the same relative cutoff as the
// library.
inline Mat pinv(const Mat& m, double rel_tol = fna::kPinvRelTol) {
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec& sv = svd.singularValues();
  const double cutoff = sv.size() ? sv(0) * rel_tol : 0.0;
  Vec inv = Vec::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff && sv(i) > 0.0) inv(i) = 1.0 / sv(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

inline Mat project(const Mat& x, const Matrix& w, const std::vector<float>& bias) {
  Mat out = x * to_eigen(w);
  out.rowwise() += to_eigen(bias).transpose();
  return out;
}

inline Mat head_attention(const Mat& x, const fna::HeadParams& h) {
  const Mat q = project(x, h.query, h.query_bias);
  const Mat k = project(x, h.key, h.key_bias);
  return softmax(q * k.transpose() / std::sqrt(static_cast<double>(q.cols())));
}

// O_bias + sum_h softmax(Q_h K_h^T / sqrt d) V_h O_h^T with explicit loops.
inline Mat mha(const Mat& x, const fna::AttentionParams& p, const fna::BoolMask* mask = nullptr, bool sink = false) {
  const std::size_t n = x.rows();
  Mat out = Mat::Zero(n, p.model_dim);
  for (const auto& h : p.per_head) {
    const Mat q = project(x, h.query, h.query_bias);
    const Mat k = project(x, h.key, h.key_bias);
    const Mat v = project(x, h.value, h.value_bias);
    Mat logits(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < p.head_dim; ++c) dot += q(i, c) * k(j, c);
        logits(i, j) = dot / std::sqrt(static_cast<double>(p.head_dim));
      }
    const Mat a = mask ? (sink ? sunk_softmax(logits, *mask) : masked_softmax(logits, *mask)) : softmax(logits);
    for (std::size_t i = 0; i < n; ++i) {
      Vec mixed = Vec::Zero(p.head_dim);
      for (std::size_t j = 0; j < n; ++j) mixed += a(i, j) * v.row(j).transpose();
      for (std::size_t o = 0; o < p.model_dim; ++o) {
        double acc = 0.0;
        for (std::size_t c = 0; c < p.head_dim; ++c) acc += mixed(c) * h.output(o, c);
        out(i, o) += acc;
      }
    }
  }
  out.rowwise() += to_eigen(p.output_bias).transpose();
  return out;
}

inline Mat mean_attention(const Mat& x, const fna::AttentionParams& p) {
  Mat acc = Mat::Zero(x.rows(), x.rows());
  for (const auto& h : p.per_head) acc += head_attention(x, h);
  return acc / static_cast<double>(p.heads);
}

// Three Nystrom factors materialised densely and multiplied left to right.
inline Mat dense_fna(const Mat& x, const Mat& landmarks, const fna::AttentionParams& p) {
  Mat out = Mat::Zero(x.rows(), p.model_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.head_dim));
  for (const auto& h : p.per_head) {
    const Mat q = project(x, h.query, h.query_bias);
    const Mat k = project(x, h.key, h.key_bias);
    const Mat v = project(x, h.value, h.value_bias);
    const Mat ql = project(landmarks, h.query, h.query_bias);
    const Mat kl = project(landmarks, h.key, h.key_bias);
    const Mat f1 = softmax(q * kl.transpose() * scale);
    const Mat f2 = softmax(ql * kl.transpose() * scale);
    const Mat f3 = softmax(ql * k.transpose() * scale);
    out += ((f1 * pinv(f2)) * f3) * v * to_eigen(h.output).transpose();
  }
  out.rowwise() += to_eigen(p.output_bias).transpose();
  return out;
}

inline Mat dense_nystrom_matrix(const Mat& x, const Mat& landmarks, const fna::HeadParams& h) {
  const Mat q = project(x, h.query, h.query_bias);
  const Mat k = project(x, h.key, h.key_bias);
  const Mat ql = project(landmarks, h.query, h.query_bias);
  const Mat kl = project(landmarks, h.key, h.key_bias);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return softmax(q * kl.transpose() * scale) * pinv(softmax(ql * kl.transpose() * scale)) *
         softmax(ql * k.transpose() * scale);
}

// O(N^2 k) farthest point sampling: every step recomputes each candidate's
// distance to every chosen point. Start = largest norm; ties -> lowest index.
inline std::vector<std::size_t> brute_force_fps(const Matrix& x, std::vector<std::size_t> pool, std::size_t k) {
  std::sort(pool.begin(), pool.end());
  const auto dist2 = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double d = static_cast<double>(x(a, c)) - x(b, c);
      s += d * d;
    }
    return s;
  };
  std::vector<std::size_t> chosen;
  if (k == 0) return chosen;
  std::size_t first = pool.front();
  double best_norm = -1.0;
  for (std::size_t i : pool) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) n2 += static_cast<double>(x(i, c)) * x(i, c);
    if (n2 > best_norm) {
      best_norm = n2;
      first = i;
    }
  }
  chosen.push_back(first);
  while (chosen.size() < k) {
    std::size_t pick = pool.size();
    double best = -1.0;
    for (std::size_t i : pool) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      double mind = std::numeric_limits<double>::infinity();
      for (std::size_t c : chosen) mind = std::min(mind, dist2(i, c));
      if (mind > best) {
        best = mind;
        pick = i;
      }
    }
    chosen.push_back(pick);
  }
  return chosen;
}

inline Mat layer_norm(const Mat& x, const std::vector<float>& g, const std::vector<float>& b, double eps) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().sum() / static_cast<double>(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mean) / std::sqrt(var + eps) * g[j] + b[j];
  }
  return out;
}

inline double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

// One pre-LN block written straight through.
inline Mat block(const Mat& x, const fna::LayerWeights& lw, double eps) {
  Mat h = x + mha(layer_norm(x, lw.ln1.gamma, lw.ln1.beta, eps), lw.attention);
  Mat hidden = project(layer_norm(h, lw.ln2.gamma, lw.ln2.beta, eps), lw.fc1, lw.fc1_bias);
  hidden = hidden.unaryExpr([](double v) { return gelu(v); });
  return h + project(hidden, lw.fc2, lw.fc2_bias);
}

// Eq. 8 by direct summation: P[i][j] = <e_i/|e_i|, (1/H) sum_h O_h V_h(x'_j)>.
inline Mat suppression(const Matrix& emb, const Matrix& value_input, const fna::AttentionParams& p) {
  const std::size_t n = emb.rows();
  Mat out(n, n);
  const Mat xv = to_eigen(value_input);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t c = 0; c < p.model_dim; ++c) norm += static_cast<double>(emb(i, c)) * emb(i, c);
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < n; ++j) {
      double total = 0.0;
      for (const auto& h : p.per_head) {
        for (std::size_t o = 0; o < p.model_dim; ++o) {
          double vo = 0.0;
          for (std::size_t c = 0; c < p.head_dim; ++c) {
            double val = h.value_bias[c];
            for (std::size_t r = 0; r < p.model_dim; ++r) val += xv(j, r) * h.value(r, c);
            vo += h.output(o, c) * val;
          }
          total += emb(i, o) / norm * vo;
        }
      }
      out(i, j) = total / static_cast<double>(p.heads);
    }
  }
  return out;
}

// (1/H) sum_h |O_h V_h(x'_j)| for every j.
inline Vec suppression_bound(const Matrix& value_input, const fna::AttentionParams& p) {
  const Mat xv = to_eigen(value_input);
  Vec out = Vec::Zero(value_input.rows());
  for (const auto& h : p.per_head) {
    const Mat v = project(xv, h.value, h.value_bias) * to_eigen(h.output).transpose();
    for (Eigen::Index j = 0; j < v.rows(); ++j) out(j) += v.row(j).norm();
  }
  return out / static_cast<double>(p.heads);
}

}  // namespace oracle
