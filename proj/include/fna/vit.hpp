#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "fna/attention.hpp"
#include "fna/nystrom.hpp"
#include "fna/tensor.hpp"

namespace fna {

struct LayerNormParams {
  std::vector<float> gamma;
  std::vector<float> beta;
};

struct LayerWeights {
  LayerNormParams ln1;
  AttentionParams attention;
  LayerNormParams ln2;
  Matrix fc1;  // D x D_mlp
  std::vector<float> fc1_bias;
  Matrix fc2;  // D_mlp x D
  std::vector<float> fc2_bias;
};

struct ModelWeights {
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  std::size_t model_dim = 0;
  std::size_t mlp_dim = 0;
  // Patch grid; both zero when unknown. Otherwise grid_h * grid_w == N.
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  float ln_eps = 1e-5f;
  std::vector<LayerWeights> layers;

  std::size_t depth() const noexcept { return layers.size(); }
  void validate() const;
};

// Zero-initialised weights of the given shape with unit layer-norm gains.
ModelWeights make_zero_model(std::size_t layers, std::size_t heads, std::size_t head_dim, std::size_t mlp_dim);

// ---- VITW weight files -----------------------------------------------------

class WeightFormatError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, VersionMismatch, Truncated, ShapeInconsistent };
  WeightFormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kVitwVersion = 1;

std::vector<std::uint8_t> serialize_weights(const ModelWeights& w);
ModelWeights deserialize_weights(std::span<const std::uint8_t> blob);
void save_weights(const ModelWeights& w, const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path);

// ---- forward pass -----------------------------------------------------------

struct StandardAttention {};
struct SkipAttention {};

struct FnaAttention {
  SamplerSpec sampler;
  TokenRoles roles;
  // Reuse the Indices landmarks sampled at an earlier FNA layer of the same
  // forward call; samples here when none exist yet.
  bool reuse = false;
  std::optional<LandmarkSet> landmarks;
};

struct MaskedAttention {
  MaskPattern pattern;
  PatternMode mode = PatternMode::Mask;
};

using OverrideKind = std::variant<StandardAttention, FnaAttention, MaskedAttention, SkipAttention>;

struct LayerOverride {
  std::size_t layer = 0;
  OverrideKind kind;
};

struct TraceOptions {
  bool block_outputs = true;
  bool half_outputs = false;
  bool norms = true;
  std::vector<std::size_t> attention_layers;
};

// Keys are layer indices. block_outputs[l] is the output of layer l;
// half_outputs[l] is the residual stream after its attention sub-block.
struct RunTrace {
  std::map<std::size_t, Matrix> block_outputs;
  std::map<std::size_t, Matrix> half_outputs;
  std::map<std::size_t, Matrix> mean_attention;
  std::map<std::size_t, std::vector<float>> norms;
  std::map<std::size_t, LandmarkSet> landmarks;
};

struct ForwardOptions {
  TraceOptions capture;
  // Called with the block input of each layer before it runs.
  std::function<void(std::size_t layer, Matrix& emb)> before_layer;
};

struct ForwardResult {
  Matrix output;
  RunTrace trace;
};

// Runs layers [begin, end). Overrides outside the range are ignored but still
// validated against the model depth.
ForwardResult run_layers(const Matrix& x, const ModelWeights& w, std::size_t begin, std::size_t end,
                         std::span<const LayerOverride> overrides = {}, const ForwardOptions& options = {});

ForwardResult forward(const Matrix& x0, const ModelWeights& w, std::span<const LayerOverride> overrides = {},
                      const ForwardOptions& options = {});

// FNA overrides for layers [first, depth): sampled at `first` and carried
// forward by index unless resample is set.
std::vector<LayerOverride> fna_schedule(std::size_t first, std::size_t depth, const SamplerSpec& sampler,
                                        const TokenRoles& roles = {}, bool resample = false);

// ---- synthetic sink fixture -------------------------------------------------

struct SyntheticSpec {
  std::size_t layers = 16;
  std::size_t heads = 2;
  std::size_t head_dim = 8;
  std::size_t mlp_dim = 32;
  std::size_t tokens = 36;  // N, excluding CLS
  // Highest priority first; token indices in [1, N].
  std::vector<std::size_t> planted;
  std::uint64_t seed = 0;
  std::size_t formation_layer = 9;
  std::size_t detection_layer = 13;
  // Norm of the active sink after growth, in multiples of the common token norm.
  float massive_factor = 4.0f;
};

// Weights whose detection-layer CLS attention concentrates on the highest
// priority planted token that is not masked, with lower-priority planted
// tokens suppressed until those above them are masked.
ModelWeights make_synthetic_model(const SyntheticSpec& spec);
// Matching (N+1) x D input embedding; every row has the same norm.
Matrix make_synthetic_input(const SyntheticSpec& spec);

}  // namespace fna
