#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fna/attention.hpp"
#include "fna/tensor.hpp"
#include "fna/vit.hpp"

namespace fna {

class SinkAnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kDefaultFormationLayer = 9;
inline constexpr std::size_t kDefaultDetectionLayer = 13;
inline constexpr std::size_t kDefaultMaxIters = 10;

struct SinkReport {
  std::vector<std::size_t> sinks;                   // in detection order
  std::vector<std::vector<std::size_t>> additions;  // tokens appended per iteration
  std::vector<std::vector<float>> cls_rows;         // CLS row of the mean attention per iteration
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t formation_layer = kDefaultFormationLayer;
  std::size_t detection_layer = kDefaultDetectionLayer;
};

// Keys: sinks, iterations, converged, formation_layer, detection_layer,
// additions, cls_rows.
std::string to_json(const SinkReport& report, int indent = 2);

// { t >= 1 : A[0][t] >= A[0][0] }, ascending. A must be a mean attention
// matrix (square, rows summing to 1 within 1e-4).
std::vector<std::size_t> detect_sinks_onepass(const Matrix& mean_attention);

// Iterative removal: layers [0, lm) run once; each iteration reruns
// [lm, ld] with Type I masking of the sinks found so far and appends the
// tokens that cross the CLS threshold at ld (largest attention first).
// Converged once an iteration appends nothing.
SinkReport detect_sinks_iterative(const Matrix& x0, const ModelWeights& w,
                                  std::size_t lm = kDefaultFormationLayer,
                                  std::size_t ld = kDefaultDetectionLayer, std::size_t max_iters = kDefaultMaxIters);

struct PatchGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
};

// Grid of a model, if it records one.
std::optional<PatchGrid> model_grid(const ModelWeights& w);

// Rows in `sinks` replaced by their nearest normal token. Token t >= 1 sits at
// patch (t-1) / cols, (t-1) % cols. Grid distance is Manhattan with ties to
// the smaller row, then column; without a grid the nearest row in Euclidean
// feature distance wins, ties to the lowest index.
Matrix replace_sinks(const Matrix& emb, std::span<const std::size_t> sinks, std::optional<PatchGrid> grid = {});

// Forward pass that replaces `sinks` at the input of every layer from
// `first_layer` on (default: the last layer only).
ForwardResult forward_with_replacement(const Matrix& x0, const ModelWeights& w, std::span<const std::size_t> sinks,
                                       std::optional<std::size_t> first_layer = {},
                                       std::span<const LayerOverride> overrides = {},
                                       const ForwardOptions& options = {});

struct SuppressionMatrix {
  MatrixF64 projection;  // (N+1) x (N+1)
  std::size_t layer = 0;
};

// P[i][j] = <emb_i / |emb_i|, (1/H) sum_h O_h V_h(value_input_j)>, where
// value_input is the post layer-norm block fed to the value projections and
// O_h maps each head's value vector back to model space.
SuppressionMatrix suppression_projection(const Matrix& emb, const Matrix& value_input, const AttentionParams& p,
                                         std::size_t layer = 0);

// Block input and post-LN1 features of `layer` from a standard forward pass,
// fed into suppression_projection.
SuppressionMatrix suppression_projection_at(const Matrix& x0, const ModelWeights& w, std::size_t layer);

// Per-layer Euclidean token norms recomputed from the trace's block outputs.
std::map<std::size_t, std::vector<float>> norm_trace(const RunTrace& trace);

// Long-format CSV: layer,token,norm.
std::string norm_trace_csv(const std::map<std::size_t, std::vector<float>>& norms);

}  // namespace fna
