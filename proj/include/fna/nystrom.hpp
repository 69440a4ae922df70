#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fna/attention.hpp"
#include "fna/tensor.hpp"

namespace fna {

class SamplerError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class SamplerStrategy { FPS, Uniform, SegmentMeans, KMeans };

std::string to_string(SamplerStrategy s);
SamplerStrategy parse_strategy(const std::string& name);

// How a token role is treated while sampling.
enum class RoleTreatment { Guarantee, Exclude, Ignore };

std::string to_string(RoleTreatment t);

struct RolePolicy {
  RoleTreatment cls = RoleTreatment::Guarantee;
  RoleTreatment massive = RoleTreatment::Ignore;
  RoleTreatment artifact = RoleTreatment::Ignore;

  bool operator==(const RolePolicy&) const = default;
};

std::string to_string(const RolePolicy& p);

// Token indices carrying the massive / artifact roles (CLS is always 0).
struct TokenRoles {
  std::vector<std::size_t> massive;
  std::vector<std::size_t> artifact;
};

struct SamplerSpec {
  SamplerStrategy strategy = SamplerStrategy::FPS;
  std::size_t samples = 64;
  std::vector<std::size_t> guarantee;
  std::vector<std::size_t> exclude;
  std::uint64_t seed = 0;
  std::size_t kmeans_iters = 10;
  RolePolicy role_policy;
};

enum class LandmarkKind { Indices, Features };

struct LandmarkSet {
  LandmarkKind kind = LandmarkKind::Indices;
  std::vector<std::size_t> indices;  // Indices kind
  Matrix features;                   // Features kind, s x D
  std::size_t source_layer = 0;

  std::size_t size() const noexcept { return kind == LandmarkKind::Indices ? indices.size() : features.rows(); }
};

// Greedy farthest point sampling over the rows listed in pool. Starts from the
// pool element of largest norm; each further pick maximises the minimum
// Euclidean distance to the picks so far. Ties go to the lowest index.
// seed is accepted for interface symmetry; the procedure is deterministic.
std::vector<std::size_t> fps_sample(const Matrix& features, std::span<const std::size_t> pool,
                                    std::size_t k, std::uint64_t seed = 0);

// s distinct pool elements drawn without replacement, in draw order.
LandmarkSet uniform_sample(std::span<const std::size_t> pool, std::size_t s, std::uint64_t seed);

// Contiguous near-equal segments (longer segments first), one mean row each.
LandmarkSet segment_means(const Matrix& features, std::size_t s);

// Lloyd's algorithm for a fixed number of iterations from a seeded uniform
// initialisation. Empty clusters are re-seeded to the point farthest from its
// assigned centroid.
LandmarkSet kmeans_landmarks(const Matrix& features, std::size_t s, std::size_t iters, std::uint64_t seed);

// Guarantee / exclusion sets after merging the role policy.
struct ResolvedSets {
  std::vector<std::size_t> guarantee;  // ascending
  std::vector<std::size_t> exclude;    // ascending
};

ResolvedSets resolve_sets(const SamplerSpec& spec, std::size_t tokens, const TokenRoles& roles = {});

// S = G + Sample([N]_0 \ (G u E), s - |G|) for index strategies; aggregate
// strategies return s - |G| aggregate rows followed by the rows of G.
LandmarkSet sample_landmarks(const Matrix& features, const SamplerSpec& spec, const TokenRoles& roles = {},
                             std::size_t source_layer = 0);

// Landmark feature rows (s x D) drawn from the post layer-norm block x.
Matrix landmark_rows(const Matrix& x, const LandmarkSet& lm);

// Nystrom attention: O_bias + sum_h F1 pinv(F2) (F3 V_h) O_h^T with
// F1 = softmax(Q k~^T / sqrt d), F2 = softmax(q~ k~^T / sqrt d),
// F3 = softmax(q~ K^T / sqrt d). Never forms an (N+1) x (N+1) buffer.
Matrix fna_attention(const Matrix& x, const AttentionParams& p, const LandmarkSet& lm);

// Dense approximation F1 pinv(F2) F3 for one head. Quadratic memory; used by
// error sweeps only.
Matrix nystrom_attention_matrix(const Matrix& x, const HeadParams& head, const LandmarkSet& lm);

// All 27 assignments of {guarantee, exclude, ignore} to (CLS, massive,
// artifact), CLS varying slowest.
std::vector<RolePolicy> config_grid();

}  // namespace fna
