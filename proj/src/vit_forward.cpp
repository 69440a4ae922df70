#include <algorithm>
#include <string>

#include "fna/vit.hpp"

namespace fna {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Matrix mean_of_heads(const Matrix& x, const AttentionParams& p, const LandmarkSet& lm) {
  MatrixF64 acc(x.rows(), x.rows(), 0.0);
  for (const auto& head : p.per_head) {
    const Matrix a = nystrom_attention_matrix(x, head, lm);
    auto dst = acc.data();
    auto src = a.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  }
  for (double& v : acc.data()) v /= static_cast<double>(p.per_head.size());
  return to_f32(acc);
}

Matrix mlp(const Matrix& x, const LayerWeights& lw) {
  Matrix hidden = matmul(x, lw.fc1);
  add_row_bias(hidden, lw.fc1_bias);
  Matrix out = matmul(gelu(hidden), lw.fc2);
  add_row_bias(out, lw.fc2_bias);
  return out;
}

}  // namespace

ForwardResult run_layers(const Matrix& x, const ModelWeights& w, std::size_t begin, std::size_t end,
                         std::span<const LayerOverride> overrides, const ForwardOptions& options) {
  const std::size_t depth = w.depth();
  if (begin > end || end > depth) {
    throw std::out_of_range("layer range [" + std::to_string(begin) + ", " + std::to_string(end) +
                            ") outside model depth " + std::to_string(depth));
  }
  if (x.cols() != w.model_dim) {
    throw ShapeError("input width " + std::to_string(x.cols()) + " != D " + std::to_string(w.model_dim));
  }
  std::vector<const OverrideKind*> per_layer(depth, nullptr);
  for (const auto& o : overrides) {
    if (o.layer >= depth) {
      throw std::out_of_range("override references layer " + std::to_string(o.layer) + " of a " +
                              std::to_string(depth) + "-layer model");
    }
    if (per_layer[o.layer] != nullptr) {
      throw std::invalid_argument("more than one override for layer " + std::to_string(o.layer));
    }
    per_layer[o.layer] = &o.kind;
  }
  const auto& capture = options.capture;
  const auto wants_attention = [&](std::size_t l) {
    return std::find(capture.attention_layers.begin(), capture.attention_layers.end(), l) !=
           capture.attention_layers.end();
  };

  ForwardResult result;
  RunTrace& trace = result.trace;
  Matrix emb = x;
  std::optional<LandmarkSet> carried;
  const OverrideKind standard{StandardAttention{}};
  for (std::size_t l = begin; l < end; ++l) {
    const LayerWeights& lw = w.layers[l];
    if (options.before_layer) options.before_layer(l, emb);

    const Matrix normed = layer_norm(emb, lw.ln1.gamma, lw.ln1.beta, w.ln_eps);
    const OverrideKind& kind = per_layer[l] ? *per_layer[l] : standard;
    std::optional<Matrix> attn = std::visit(
        Overloaded{
            [&](const StandardAttention&) -> std::optional<Matrix> {
              if (wants_attention(l)) trace.mean_attention[l] = mean_attention_matrix(normed, lw.attention);
              return exact_mha(normed, lw.attention);
            },
            [&](const MaskedAttention& m) -> std::optional<Matrix> {
              if (wants_attention(l)) {
                trace.mean_attention[l] = mean_attention_matrix(normed, lw.attention, m.pattern, m.mode);
              }
              return mha_with_pattern(normed, lw.attention, m.pattern, m.mode);
            },
            [&](const SkipAttention&) -> std::optional<Matrix> { return std::nullopt; },
            [&](const FnaAttention& f) -> std::optional<Matrix> {
              LandmarkSet lm;
              if (f.landmarks) {
                lm = *f.landmarks;
              } else if (f.reuse && carried) {
                lm = *carried;
              } else {
                const bool by_index = f.sampler.strategy == SamplerStrategy::FPS ||
                                      f.sampler.strategy == SamplerStrategy::Uniform;
                // Index samplers look at the raw block input, aggregate
                // samplers build landmark features in post-norm space.
                lm = sample_landmarks(by_index ? emb : normed, f.sampler, f.roles, l);
              }
              if (lm.kind == LandmarkKind::Indices) carried = lm;
              if (wants_attention(l)) trace.mean_attention[l] = mean_of_heads(normed, lw.attention, lm);
              Matrix out = fna_attention(normed, lw.attention, lm);
              trace.landmarks[l] = std::move(lm);
              return out;
            },
        },
        kind);

    if (attn) add_inplace(emb, *attn);
    if (capture.half_outputs) trace.half_outputs[l] = emb;

    add_inplace(emb, mlp(layer_norm(emb, lw.ln2.gamma, lw.ln2.beta, w.ln_eps), lw));
    if (capture.block_outputs) trace.block_outputs[l] = emb;
    if (capture.norms) trace.norms[l] = row_norms(emb);
  }
  result.output = std::move(emb);
  return result;
}

ForwardResult forward(const Matrix& x0, const ModelWeights& w, std::span<const LayerOverride> overrides,
                      const ForwardOptions& options) {
  return run_layers(x0, w, 0, w.depth(), overrides, options);
}

std::vector<LayerOverride> fna_schedule(std::size_t first, std::size_t depth, const SamplerSpec& sampler,
                                        const TokenRoles& roles, bool resample) {
  std::vector<LayerOverride> out;
  for (std::size_t l = first; l < depth; ++l) {
    FnaAttention f;
    f.sampler = sampler;
    f.roles = roles;
    f.reuse = !resample;
    out.push_back({l, f});
  }
  return out;
}

}  // namespace fna
