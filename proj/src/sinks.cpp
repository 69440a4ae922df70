#include "fna/sinks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

#include "fna/format.hpp"

namespace fna {

std::string to_json(const SinkReport& report, int indent) {
  nlohmann::ordered_json j;
  j["sinks"] = report.sinks;
  j["iterations"] = report.iterations;
  j["converged"] = report.converged;
  j["formation_layer"] = report.formation_layer;
  j["detection_layer"] = report.detection_layer;
  j["additions"] = report.additions;
  j["cls_rows"] = report.cls_rows;
  return j.dump(indent);
}

std::vector<std::size_t> detect_sinks_onepass(const Matrix& a) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw ShapeError("mean attention must be square and non-empty, got " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()));
  }
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double sum = 0.0;
    for (float v : a.row(i)) sum += v;
    if (std::abs(sum - 1.0) > 1e-4) {
      throw SinkAnalysisError("row " + std::to_string(i) + " of the attention matrix sums to " + format_number(sum));
    }
  }
  std::vector<std::size_t> out;
  const auto cls = a.row(0);
  for (std::size_t t = 1; t < a.cols(); ++t)
    if (cls[t] >= cls[0]) out.push_back(t);
  return out;
}

SinkReport detect_sinks_iterative(const Matrix& x0, const ModelWeights& w, std::size_t lm, std::size_t ld,
                                  std::size_t max_iters) {
  if (!(lm <= ld && ld < w.depth())) {
    throw std::out_of_range("need lm <= ld < L, got lm=" + std::to_string(lm) + " ld=" + std::to_string(ld) +
                            " L=" + std::to_string(w.depth()));
  }
  if (max_iters == 0) throw std::invalid_argument("max_iters must be positive");

  SinkReport report;
  report.formation_layer = lm;
  report.detection_layer = ld;

  ForwardOptions frozen_opts;
  frozen_opts.capture.block_outputs = false;
  frozen_opts.capture.norms = false;
  const Matrix frozen = run_layers(x0, w, 0, lm, {}, frozen_opts).output;

  ForwardOptions opts;
  opts.capture.block_outputs = false;
  opts.capture.norms = false;
  opts.capture.attention_layers = {ld};

  const std::size_t tokens = x0.rows();
  std::set<std::size_t> found;
  while (report.iterations < max_iters) {
    std::vector<LayerOverride> overrides;
    if (!found.empty()) {
      const MaskPattern pattern = MaskPattern::type_i(tokens, found);
      for (std::size_t l = lm; l <= ld; ++l) overrides.push_back({l, MaskedAttention{pattern, PatternMode::Mask}});
    }
    const ForwardResult run = run_layers(frozen, w, lm, ld + 1, overrides, opts);
    const Matrix& attn = run.trace.mean_attention.at(ld);
    ++report.iterations;

    std::vector<std::size_t> fresh;
    for (std::size_t t : detect_sinks_onepass(attn))
      if (!found.contains(t)) fresh.push_back(t);
    const auto cls = attn.row(0);
    report.cls_rows.emplace_back(cls.begin(), cls.end());
    std::stable_sort(fresh.begin(), fresh.end(), [&](std::size_t a, std::size_t b) { return cls[a] > cls[b]; });
    report.additions.push_back(fresh);
    if (fresh.empty()) {
      report.converged = true;
      break;
    }
    for (std::size_t t : fresh) {
      found.insert(t);
      report.sinks.push_back(t);
    }
  }
  return report;
}

std::optional<PatchGrid> model_grid(const ModelWeights& w) {
  if (w.grid_h == 0 || w.grid_w == 0) return std::nullopt;
  return PatchGrid{w.grid_h, w.grid_w};
}

Matrix replace_sinks(const Matrix& emb, std::span<const std::size_t> sinks, std::optional<PatchGrid> grid) {
  const std::size_t n_tokens = emb.rows();
  std::vector<bool> is_sink(n_tokens, false);
  for (std::size_t t : sinks) {
    if (t == 0) throw std::invalid_argument("the CLS token cannot be replaced");
    if (t >= n_tokens) throw std::out_of_range("sink index " + std::to_string(t) + " out of range");
    is_sink[t] = true;
  }
  if (grid && grid->rows * grid->cols + 1 != n_tokens) {
    throw ShapeError("patch grid " + std::to_string(grid->rows) + "x" + std::to_string(grid->cols) +
                     " does not match " + std::to_string(n_tokens - 1) + " tokens");
  }
  std::vector<std::size_t> normal;
  for (std::size_t t = 1; t < n_tokens; ++t)
    if (!is_sink[t]) normal.push_back(t);
  Matrix out = emb;
  if (sinks.empty()) return out;
  if (normal.empty()) throw SinkAnalysisError("every non-CLS token is a sink; nothing to replace them with");

  for (std::size_t t = 1; t < n_tokens; ++t) {
    if (!is_sink[t]) continue;
    std::size_t best = normal.front();
    if (grid) {
      const auto pos = [&](std::size_t k) { return std::pair{(k - 1) / grid->cols, (k - 1) % grid->cols}; };
      const auto [tr, tc] = pos(t);
      std::size_t best_dist = std::numeric_limits<std::size_t>::max();
      // Normal tokens are visited in row-major order, so the first strict
      // minimum is already the smaller row, then smaller column.
      for (std::size_t k : normal) {
        const auto [r, c] = pos(k);
        const std::size_t dist = (r > tr ? r - tr : tr - r) + (c > tc ? c - tc : tc - c);
        if (dist < best_dist) {
          best_dist = dist;
          best = k;
        }
      }
    } else {
      double best_dist = std::numeric_limits<double>::infinity();
      const auto row_t = emb.row(t);
      for (std::size_t k : normal) {
        const auto row_k = emb.row(k);
        double dist = 0.0;
        for (std::size_t c = 0; c < emb.cols(); ++c) {
          const double diff = static_cast<double>(row_t[c]) - row_k[c];
          dist += diff * diff;
        }
        if (dist < best_dist) {
          best_dist = dist;
          best = k;
        }
      }
    }
    std::ranges::copy(emb.row(best), out.row(t).begin());
  }
  return out;
}

ForwardResult forward_with_replacement(const Matrix& x0, const ModelWeights& w, std::span<const std::size_t> sinks,
                                       std::optional<std::size_t> first_layer,
                                       std::span<const LayerOverride> overrides, const ForwardOptions& options) {
  const std::size_t first = first_layer.value_or(w.depth() - 1);
  if (first >= w.depth()) throw std::out_of_range("replacement layer " + std::to_string(first) + " out of range");
  const std::vector<std::size_t> targets(sinks.begin(), sinks.end());
  const auto grid = model_grid(w);
  ForwardOptions opts = options;
  opts.before_layer = [&, inner = options.before_layer](std::size_t layer, Matrix& emb) {
    if (inner) inner(layer, emb);
    if (layer >= first) emb = replace_sinks(emb, targets, grid);
  };
  return forward(x0, w, overrides, opts);
}

SuppressionMatrix suppression_projection(const Matrix& emb, const Matrix& value_input, const AttentionParams& p,
                                         std::size_t layer) {
  p.validate();
  if (emb.cols() != p.model_dim || value_input.cols() != p.model_dim || emb.rows() != value_input.rows()) {
    throw ShapeError("suppression_projection: emb and value input must both be (N+1) x D");
  }
  const std::size_t n = emb.rows();
  const std::size_t D = p.model_dim;

  // Mean model-space value vector of every token.
  MatrixF64 mean_values(n, D, 0.0);
  const MatrixF64 wide = to_f64(value_input);
  for (const auto& head : p.per_head) {
    const MatrixF64 v = project_f64(wide, head.value, head.value_bias);
    const MatrixF64 mapped = matmul(v, to_f64(transpose(head.output)));
    auto dst = mean_values.data();
    auto src = mapped.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  for (double& v : mean_values.data()) v /= static_cast<double>(p.heads);

  MatrixF64 directions(n, D);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = emb.row(i);
    double norm2 = 0.0;
    for (float v : row) norm2 += static_cast<double>(v) * v;
    if (norm2 == 0.0) throw SinkAnalysisError("token " + std::to_string(i) + " has a zero embedding");
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t c = 0; c < D; ++c) directions(i, c) = row[c] * inv;
  }

  MatrixF64 values_t(D, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < D; ++c) values_t(c, j) = mean_values(j, c);
  return {matmul(directions, values_t), layer};
}

SuppressionMatrix suppression_projection_at(const Matrix& x0, const ModelWeights& w, std::size_t layer) {
  if (layer >= w.depth()) throw std::out_of_range("layer " + std::to_string(layer) + " out of range");
  ForwardOptions opts;
  opts.capture.block_outputs = false;
  opts.capture.norms = false;
  const Matrix emb = run_layers(x0, w, 0, layer, {}, opts).output;
  const auto& lw = w.layers[layer];
  return suppression_projection(emb, layer_norm(emb, lw.ln1.gamma, lw.ln1.beta, w.ln_eps), lw.attention, layer);
}

std::map<std::size_t, std::vector<float>> norm_trace(const RunTrace& trace) {
  std::map<std::size_t, std::vector<float>> out;
  for (const auto& [layer, emb] : trace.block_outputs) out[layer] = row_norms(emb);
  return out;
}

std::string norm_trace_csv(const std::map<std::size_t, std::vector<float>>& norms) {
  std::string out = "layer,token,norm\n";
  for (const auto& [layer, row] : norms)
    for (std::size_t t = 0; t < row.size(); ++t)
      out += std::to_string(layer) + "," + std::to_string(t) + "," + format_number(row[t]) + "\n";
  return out;
}

}  // namespace fna
