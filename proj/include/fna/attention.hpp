#pragma once

#include <cstddef>
#include <set>
#include <vector>

#include "fna/tensor.hpp"

namespace fna {

// Projections for one head. Weights are D x d so that q = x * query + query_bias.
struct HeadParams {
  Matrix query, key, value;
  std::vector<float> query_bias, key_bias, value_bias;
  // D x d output block; head h contributes (A V_h) * output^T.
  Matrix output;
};

struct AttentionParams {
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  std::size_t model_dim = 0;
  std::vector<HeadParams> per_head;
  std::vector<float> output_bias;

  // Throws ShapeError when H*d != D or any block has the wrong shape.
  void validate() const;
};

// Per-head projections of a (post layer-norm) input block.
Matrix project_query(const Matrix& x, const HeadParams& head);
Matrix project_key(const Matrix& x, const HeadParams& head);
Matrix project_value(const Matrix& x, const HeadParams& head);
// x W + b without rounding the result to float.
MatrixF64 project_f64(const MatrixF64& x, const Matrix& weight, const std::vector<float>& bias);

// softmax(Q K^T / sqrt d) logits before the softmax.
Matrix attention_logits(const Matrix& q, const Matrix& k);

enum class PatternKind { TypeI, TypeII, Custom };
enum class PatternMode { Mask, Sink };

// (N+1) x (N+1) attention pattern over an interest set. Index 0 (CLS) may
// not be part of the interest set.
class MaskPattern {
 public:
  static MaskPattern type_i(std::size_t tokens, const std::set<std::size_t>& interest);
  static MaskPattern type_ii(std::size_t tokens, const std::set<std::size_t>& interest);
  static MaskPattern all_true(std::size_t tokens);
  static MaskPattern custom(BoolMask bits);

  PatternKind kind() const noexcept { return kind_; }
  const std::set<std::size_t>& interest() const noexcept { return interest_; }
  const BoolMask& bits() const noexcept { return bits_; }
  std::size_t tokens() const noexcept { return bits_.rows(); }

  // Same pattern with the realised bits inverted (kind becomes Custom).
  MaskPattern complement() const;

 private:
  MaskPattern(PatternKind kind, std::set<std::size_t> interest, BoolMask bits)
      : kind_(kind), interest_(std::move(interest)), bits_(std::move(bits)) {}

  PatternKind kind_ = PatternKind::Custom;
  std::set<std::size_t> interest_;
  BoolMask bits_;
};

// O_bias + sum_h softmax(Q_h K_h^T / sqrt d) V_h O_h^T, heads summed in order.
Matrix exact_mha(const Matrix& x, const AttentionParams& p);

// exact_mha with masked (renormalised) or sunk softmax per head.
Matrix mha_with_pattern(const Matrix& x, const AttentionParams& p, const MaskPattern& pattern,
                        PatternMode mode);

// Mean over heads of softmax(Q_h K_h^T / sqrt d).
Matrix mean_attention_matrix(const Matrix& x, const AttentionParams& p);
Matrix mean_attention_matrix(const Matrix& x, const AttentionParams& p, const MaskPattern& pattern,
                             PatternMode mode);

}  // namespace fna
