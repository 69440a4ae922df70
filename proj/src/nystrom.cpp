#include "fna/nystrom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fna/parallel.hpp"

namespace fna {
namespace {

struct HeadFactors {
  MatrixF64 left;    // F1, (N+1) x s
  MatrixF64 middle;  // pinv(F2), s x s
  MatrixF64 right;   // F3, s x (N+1)
};

// softmax(q k^T / sqrt d) with logits and normalisation in double.
MatrixF64 softmax_factor(const MatrixF64& q, const MatrixF64& k) {
  const std::size_t rows = q.rows(), cols = k.rows(), dim = q.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  MatrixF64 out(rows, cols);
  parallel_for_rows(rows, cols * dim, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto qi = q.row(i);
      auto oi = out.row(i);
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < cols; ++j) {
        auto kj = k.row(j);
        double dot = 0.0;
        for (std::size_t c = 0; c < dim; ++c) dot += qi[c] * kj[c];
        oi[j] = dot * scale;
        top = std::max(top, oi[j]);
      }
      double sum = 0.0;
      for (double& v : oi) sum += (v = std::exp(v - top));
      for (double& v : oi) v /= sum;
    }
  });
  return out;
}

HeadFactors head_factors(const MatrixF64& x, const MatrixF64& landmarks, const HeadParams& head) {
  const MatrixF64 q = project_f64(x, head.query, head.query_bias);
  const MatrixF64 k = project_f64(x, head.key, head.key_bias);
  const MatrixF64 q_lm = project_f64(landmarks, head.query, head.query_bias);
  const MatrixF64 k_lm = project_f64(landmarks, head.key, head.key_bias);

  HeadFactors f;
  f.left = softmax_factor(q, k_lm);
  f.middle = pinv_f64(softmax_factor(q_lm, k_lm));
  f.right = softmax_factor(q_lm, k);
  return f;
}

}  // namespace

Matrix landmark_rows(const Matrix& x, const LandmarkSet& lm) {
  if (lm.kind == LandmarkKind::Features) {
    if (lm.features.cols() != x.cols()) throw ShapeError("landmark feature width does not match the input");
    return lm.features;
  }
  for (std::size_t idx : lm.indices)
    if (idx >= x.rows()) throw ShapeError("landmark index " + std::to_string(idx) + " out of range");
  return gather_rows(x, lm.indices);
}

Matrix fna_attention(const Matrix& x, const AttentionParams& p, const LandmarkSet& lm) {
  if (x.cols() != p.model_dim) throw ShapeError("fna_attention: input width does not match D");
  if (lm.size() == 0) throw SamplerError("fna_attention: empty landmark set");
  const MatrixF64 wide = to_f64(x);
  const MatrixF64 landmarks = to_f64(landmark_rows(x, lm));

  Matrix out(x.rows(), p.model_dim, 0.0f);
  for (const HeadParams& head : p.per_head) {
    HeadFactors f = head_factors(wide, landmarks, head);
    // Right to left: (F3 V) is s x d, so every intermediate is O(sN + Nd).
    const MatrixF64 reduced = matmul(f.right, project_f64(wide, head.value, head.value_bias));
    f.right = MatrixF64();
    const MatrixF64 mixed_core = matmul(f.middle, reduced);
    const Matrix mixed = to_f32(matmul(f.left, mixed_core));
    add_inplace(out, matmul_nt(mixed, head.output));
  }
  add_row_bias(out, p.output_bias);
  return out;
}

Matrix nystrom_attention_matrix(const Matrix& x, const HeadParams& head, const LandmarkSet& lm) {
  if (lm.size() == 0) throw SamplerError("nystrom_attention_matrix: empty landmark set");
  const HeadFactors f = head_factors(to_f64(x), to_f64(landmark_rows(x, lm)), head);
  return to_f32(matmul(matmul(f.left, f.middle), f.right));
}

}  // namespace fna
