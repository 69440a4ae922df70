#include "fna/attention.hpp"

#include <cmath>
#include <string>

namespace fna {
namespace {

Matrix project(const Matrix& x, const Matrix& w, const std::vector<float>& bias) {
  Matrix y = matmul(x, w);
  add_row_bias(y, bias);
  return y;
}

void check_input(const Matrix& x, const AttentionParams& p) {
  if (x.cols() != p.model_dim) {
    throw ShapeError("attention input has " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(p.model_dim));
  }
}

void check_pattern(const Matrix& x, const MaskPattern& pattern) {
  if (pattern.tokens() != x.rows()) {
    throw ShapeError("mask pattern covers " + std::to_string(pattern.tokens()) + " tokens, input has " +
                     std::to_string(x.rows()));
  }
}

Matrix head_weights(const Matrix& x, const HeadParams& head, const MaskPattern* pattern,
                    PatternMode mode) {
  Matrix logits = attention_logits(project_query(x, head), project_key(x, head));
  if (pattern == nullptr) {
    softmax_rows_inplace(logits);
    return logits;
  }
  return mode == PatternMode::Mask ? masked_softmax_rows(logits, pattern->bits())
                                   : sunk_softmax_rows(logits, pattern->bits());
}

Matrix mha_impl(const Matrix& x, const AttentionParams& p, const MaskPattern* pattern,
                PatternMode mode) {
  check_input(x, p);
  Matrix out(x.rows(), p.model_dim, 0.0f);
  for (const HeadParams& head : p.per_head) {
    Matrix weights = head_weights(x, head, pattern, mode);
    const Matrix mixed = matmul(weights, project_value(x, head));
    weights = Matrix();
    add_inplace(out, matmul_nt(mixed, head.output));
  }
  add_row_bias(out, p.output_bias);
  return out;
}

Matrix mean_attention_impl(const Matrix& x, const AttentionParams& p, const MaskPattern* pattern,
                           PatternMode mode) {
  check_input(x, p);
  MatrixF64 acc(x.rows(), x.rows(), 0.0);
  for (const HeadParams& head : p.per_head) {
    const Matrix w = head_weights(x, head, pattern, mode);
    auto dst = acc.data();
    auto src = w.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  }
  const double inv = 1.0 / static_cast<double>(p.per_head.size());
  for (double& v : acc.data()) v *= inv;
  return to_f32(acc);
}

void expect_shape(const Matrix& m, std::size_t r, std::size_t c, const std::string& what) {
  if (m.rows() != r || m.cols() != c) {
    throw ShapeError(what + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                     ", expected " + std::to_string(r) + "x" + std::to_string(c));
  }
}

void expect_len(const std::vector<float>& v, std::size_t n, const std::string& what) {
  if (v.size() != n) {
    throw ShapeError(what + " has length " + std::to_string(v.size()) + ", expected " + std::to_string(n));
  }
}

}  // namespace

void AttentionParams::validate() const {
  if (heads == 0 || head_dim == 0) throw ShapeError("attention needs at least one head of width >= 1");
  if (heads * head_dim != model_dim) {
    throw ShapeError("H*d = " + std::to_string(heads * head_dim) + " != D = " + std::to_string(model_dim));
  }
  if (per_head.size() != heads) throw ShapeError("per-head parameter count != H");
  for (std::size_t h = 0; h < heads; ++h) {
    const auto& hp = per_head[h];
    const std::string tag = "head " + std::to_string(h) + " ";
    expect_shape(hp.query, model_dim, head_dim, tag + "query");
    expect_shape(hp.key, model_dim, head_dim, tag + "key");
    expect_shape(hp.value, model_dim, head_dim, tag + "value");
    expect_shape(hp.output, model_dim, head_dim, tag + "output");
    expect_len(hp.query_bias, head_dim, tag + "query bias");
    expect_len(hp.key_bias, head_dim, tag + "key bias");
    expect_len(hp.value_bias, head_dim, tag + "value bias");
  }
  expect_len(output_bias, model_dim, "output bias");
}

Matrix project_query(const Matrix& x, const HeadParams& head) { return project(x, head.query, head.query_bias); }
Matrix project_key(const Matrix& x, const HeadParams& head) { return project(x, head.key, head.key_bias); }
Matrix project_value(const Matrix& x, const HeadParams& head) { return project(x, head.value, head.value_bias); }

MatrixF64 project_f64(const MatrixF64& x, const Matrix& weight, const std::vector<float>& bias) {
  if (x.cols() != weight.rows() || bias.size() != weight.cols()) throw ShapeError("project_f64: shape mismatch");
  MatrixF64 out = matmul(x, to_f64(weight));
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
  }
  return out;
}

Matrix attention_logits(const Matrix& q, const Matrix& k) {
  Matrix logits = matmul_nt(q, k);
  scale_inplace(logits, static_cast<float>(1.0 / std::sqrt(static_cast<double>(q.cols()))));
  return logits;
}

MaskPattern MaskPattern::type_i(std::size_t tokens, const std::set<std::size_t>& interest) {
  BoolMask bits(tokens, tokens, true);
  for (std::size_t t : interest) {
    if (t == 0) throw std::invalid_argument("mask pattern interest set may not contain CLS");
    if (t >= tokens) throw ShapeError("mask pattern interest index out of range");
    for (std::size_t i = 0; i < tokens; ++i) bits.set(i, t, false);
  }
  return MaskPattern(PatternKind::TypeI, interest, std::move(bits));
}

MaskPattern MaskPattern::type_ii(std::size_t tokens, const std::set<std::size_t>& interest) {
  MaskPattern p = type_i(tokens, interest);
  for (std::size_t t : interest) p.bits_.set(t, t, true);
  p.kind_ = PatternKind::TypeII;
  return p;
}

MaskPattern MaskPattern::all_true(std::size_t tokens) {
  return MaskPattern(PatternKind::Custom, {}, BoolMask(tokens, tokens, true));
}

MaskPattern MaskPattern::custom(BoolMask bits) {
  if (bits.rows() != bits.cols()) throw ShapeError("mask pattern must be square");
  return MaskPattern(PatternKind::Custom, {}, std::move(bits));
}

MaskPattern MaskPattern::complement() const {
  return MaskPattern(PatternKind::Custom, {}, bits_.complement());
}

Matrix exact_mha(const Matrix& x, const AttentionParams& p) {
  return mha_impl(x, p, nullptr, PatternMode::Mask);
}

Matrix mha_with_pattern(const Matrix& x, const AttentionParams& p, const MaskPattern& pattern,
                        PatternMode mode) {
  check_pattern(x, pattern);
  return mha_impl(x, p, &pattern, mode);
}

Matrix mean_attention_matrix(const Matrix& x, const AttentionParams& p) {
  return mean_attention_impl(x, p, nullptr, PatternMode::Mask);
}

Matrix mean_attention_matrix(const Matrix& x, const AttentionParams& p, const MaskPattern& pattern,
                             PatternMode mode) {
  check_pattern(x, pattern);
  return mean_attention_impl(x, p, &pattern, mode);
}

}  // namespace fna
