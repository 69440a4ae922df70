#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fna/nystrom.hpp"
#include "fna/rng.hpp"

namespace fna {
namespace {

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s;
}

double squared_norm(std::span<const float> a) {
  double s = 0.0;
  for (float v : a) s += static_cast<double>(v) * v;
  return s;
}

std::vector<std::size_t> draw_without_replacement(std::span<const std::size_t> pool, std::size_t s,
                                                  std::uint64_t seed) {
  if (s > pool.size()) {
    throw SamplerError("cannot draw " + std::to_string(s) + " samples from a pool of " +
                       std::to_string(pool.size()));
  }
  std::vector<std::size_t> items(pool.begin(), pool.end());
  std::sort(items.begin(), items.end());
  CounterRng rng(seed);
  for (std::size_t i = 0; i < s; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(items.size() - i));
    std::swap(items[i], items[j]);
  }
  items.resize(s);
  return items;
}

void insert_sorted_unique(std::vector<std::size_t>& v, std::size_t x) {
  auto it = std::lower_bound(v.begin(), v.end(), x);
  if (it == v.end() || *it != x) v.insert(it, x);
}

void apply_role(RoleTreatment t, std::span<const std::size_t> tokens, ResolvedSets& sets) {
  for (std::size_t idx : tokens) {
    if (t == RoleTreatment::Guarantee) insert_sorted_unique(sets.guarantee, idx);
    if (t == RoleTreatment::Exclude) insert_sorted_unique(sets.exclude, idx);
  }
}

}  // namespace

std::string to_string(SamplerStrategy s) {
  switch (s) {
    case SamplerStrategy::FPS: return "fps";
    case SamplerStrategy::Uniform: return "uniform";
    case SamplerStrategy::SegmentMeans: return "segment-means";
    case SamplerStrategy::KMeans: return "kmeans";
  }
  return "?";
}

SamplerStrategy parse_strategy(const std::string& name) {
  if (name == "fps") return SamplerStrategy::FPS;
  if (name == "uniform") return SamplerStrategy::Uniform;
  if (name == "segment-means" || name == "segment_means") return SamplerStrategy::SegmentMeans;
  if (name == "kmeans" || name == "k-means") return SamplerStrategy::KMeans;
  throw SamplerError("unknown sampling strategy '" + name + "'");
}

std::string to_string(RoleTreatment t) {
  switch (t) {
    case RoleTreatment::Guarantee: return "guarantee";
    case RoleTreatment::Exclude: return "exclude";
    case RoleTreatment::Ignore: return "ignore";
  }
  return "?";
}

std::string to_string(const RolePolicy& p) {
  return "cls:" + to_string(p.cls) + ";massive:" + to_string(p.massive) + ";artifact:" + to_string(p.artifact);
}

std::vector<std::size_t> fps_sample(const Matrix& features, std::span<const std::size_t> pool, std::size_t k,
                                    std::uint64_t /*seed*/) {
  if (k > pool.size()) {
    throw SamplerError("fps: requested " + std::to_string(k) + " points from a pool of " +
                       std::to_string(pool.size()));
  }
  std::vector<std::size_t> candidates(pool.begin(), pool.end());
  std::sort(candidates.begin(), candidates.end());
  if (std::adjacent_find(candidates.begin(), candidates.end()) != candidates.end()) {
    throw SamplerError("fps: pool contains duplicate indices");
  }
  for (std::size_t idx : candidates)
    if (idx >= features.rows()) throw SamplerError("fps: pool index out of range");

  std::vector<std::size_t> picked;
  picked.reserve(k);
  if (k == 0) return picked;

  // Candidates are in ascending index order, so strict comparisons keep the
  // lowest index on ties.
  std::size_t first = 0;
  double best_norm = -1.0;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const double n = squared_norm(features.row(candidates[c]));
    if (n > best_norm) {
      best_norm = n;
      first = c;
    }
  }

  std::vector<double> min_dist(candidates.size(), std::numeric_limits<double>::infinity());
  std::vector<char> taken(candidates.size(), 0);
  std::size_t current = first;
  for (;;) {
    picked.push_back(candidates[current]);
    taken[current] = 1;
    if (picked.size() == k) break;
    const auto anchor = features.row(candidates[current]);
    std::size_t next = candidates.size();
    double best = -1.0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (taken[c]) continue;
      min_dist[c] = std::min(min_dist[c], squared_distance(features.row(candidates[c]), anchor));
      if (min_dist[c] > best) {
        best = min_dist[c];
        next = c;
      }
    }
    current = next;
  }
  return picked;
}

LandmarkSet uniform_sample(std::span<const std::size_t> pool, std::size_t s, std::uint64_t seed) {
  LandmarkSet lm;
  lm.kind = LandmarkKind::Indices;
  lm.indices = draw_without_replacement(pool, s, seed);
  return lm;
}

LandmarkSet segment_means(const Matrix& features, std::size_t s) {
  const std::size_t n = features.rows();
  if (s == 0 || s > n) {
    throw SamplerError("segment_means: s = " + std::to_string(s) + " outside [1, " + std::to_string(n) + "]");
  }
  const std::size_t base = n / s;
  const std::size_t extra = n % s;
  LandmarkSet lm;
  lm.kind = LandmarkKind::Features;
  lm.features = Matrix(s, features.cols());
  std::vector<double> acc(features.cols());
  std::size_t start = 0;
  for (std::size_t seg = 0; seg < s; ++seg) {
    const std::size_t len = base + (seg < extra ? 1 : 0);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t r = start; r < start + len; ++r) {
      auto row = features.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) acc[j] += row[j];
    }
    auto out = lm.features.row(seg);
    for (std::size_t j = 0; j < acc.size(); ++j) out[j] = static_cast<float>(acc[j] / static_cast<double>(len));
    start += len;
  }
  return lm;
}

LandmarkSet kmeans_landmarks(const Matrix& features, std::size_t s, std::size_t iters, std::uint64_t seed) {
  const std::size_t n = features.rows();
  const std::size_t dim = features.cols();
  if (s == 0 || s > n) {
    throw SamplerError("kmeans: s = " + std::to_string(s) + " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  Matrix centroids = gather_rows(features, draw_without_replacement(all, s, seed));

  std::vector<std::size_t> assignment(n, 0);
  std::vector<double> dist(n, 0.0);
  MatrixF64 sums(s, dim);
  std::vector<std::size_t> counts(s);
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < s; ++c) {
        const double d = squared_distance(features.row(i), centroids.row(c));
        if (d < best) {
          best = d;
          assignment[i] = c;
        }
      }
      dist[i] = best;
    }
    std::fill(sums.data().begin(), sums.data().end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = features.row(i);
      auto acc = sums.row(assignment[i]);
      for (std::size_t j = 0; j < dim; ++j) acc[j] += row[j];
      ++counts[assignment[i]];
    }
    std::vector<char> used_for_reseed(n, 0);
    for (std::size_t c = 0; c < s; ++c) {
      auto out = centroids.row(c);
      if (counts[c] > 0) {
        for (std::size_t j = 0; j < dim; ++j)
          out[j] = static_cast<float>(sums(c, j) / static_cast<double>(counts[c]));
        continue;
      }
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!used_for_reseed[i] && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      used_for_reseed[far] = 1;
      std::copy(features.row(far).begin(), features.row(far).end(), out.begin());
    }
  }
  LandmarkSet lm;
  lm.kind = LandmarkKind::Features;
  lm.features = std::move(centroids);
  return lm;
}

ResolvedSets resolve_sets(const SamplerSpec& spec, std::size_t tokens, const TokenRoles& roles) {
  ResolvedSets sets;
  for (std::size_t g : spec.guarantee) insert_sorted_unique(sets.guarantee, g);
  for (std::size_t e : spec.exclude) insert_sorted_unique(sets.exclude, e);
  const std::size_t cls[] = {0};
  apply_role(spec.role_policy.cls, cls, sets);
  apply_role(spec.role_policy.massive, roles.massive, sets);
  apply_role(spec.role_policy.artifact, roles.artifact, sets);

  for (std::size_t i : sets.guarantee)
    if (i >= tokens) throw SamplerError("guarantee index " + std::to_string(i) + " out of range");
  for (std::size_t i : sets.exclude)
    if (i >= tokens) throw SamplerError("exclusion index " + std::to_string(i) + " out of range");
  std::vector<std::size_t> both;
  std::set_intersection(sets.guarantee.begin(), sets.guarantee.end(), sets.exclude.begin(), sets.exclude.end(),
                        std::back_inserter(both));
  if (!both.empty()) {
    throw SamplerError("guarantee and exclusion sets overlap at token " + std::to_string(both.front()));
  }
  if (sets.guarantee.size() > spec.samples) {
    throw SamplerError("|G| = " + std::to_string(sets.guarantee.size()) + " exceeds s = " +
                       std::to_string(spec.samples));
  }
  if (spec.samples + sets.exclude.size() > tokens) {
    throw SamplerError("s = " + std::to_string(spec.samples) + " exceeds N+1-|E| = " +
                       std::to_string(tokens - sets.exclude.size()));
  }
  return sets;
}

LandmarkSet sample_landmarks(const Matrix& features, const SamplerSpec& spec, const TokenRoles& roles,
                             std::size_t source_layer) {
  const std::size_t tokens = features.rows();
  if (spec.samples == 0) throw SamplerError("sample count must be at least 1");
  const ResolvedSets sets = resolve_sets(spec, tokens, roles);
  const std::size_t quota = spec.samples - sets.guarantee.size();

  LandmarkSet lm;
  lm.source_layer = source_layer;
  if (quota == 0) {
    lm.indices = sets.guarantee;
    return lm;
  }

  switch (spec.strategy) {
    case SamplerStrategy::FPS:
    case SamplerStrategy::Uniform: {
      std::vector<std::size_t> pool;
      pool.reserve(tokens);
      for (std::size_t i = 0; i < tokens; ++i) {
        if (!std::binary_search(sets.guarantee.begin(), sets.guarantee.end(), i) &&
            !std::binary_search(sets.exclude.begin(), sets.exclude.end(), i)) {
          pool.push_back(i);
        }
      }
      lm.indices = sets.guarantee;
      const auto drawn = spec.strategy == SamplerStrategy::FPS ? fps_sample(features, pool, quota, spec.seed)
                                                              : uniform_sample(pool, quota, spec.seed).indices;
      lm.indices.insert(lm.indices.end(), drawn.begin(), drawn.end());
      return lm;
    }
    case SamplerStrategy::SegmentMeans:
    case SamplerStrategy::KMeans: {
      LandmarkSet agg = spec.strategy == SamplerStrategy::SegmentMeans
                            ? segment_means(features, quota)
                            : kmeans_landmarks(features, quota, spec.kmeans_iters, spec.seed);
      lm.kind = LandmarkKind::Features;
      lm.features = Matrix(spec.samples, features.cols());
      for (std::size_t r = 0; r < quota; ++r)
        std::copy(agg.features.row(r).begin(), agg.features.row(r).end(), lm.features.row(r).begin());
      for (std::size_t g = 0; g < sets.guarantee.size(); ++g) {
        auto src = features.row(sets.guarantee[g]);
        std::copy(src.begin(), src.end(), lm.features.row(quota + g).begin());
      }
      return lm;
    }
  }
  throw SamplerError("unhandled sampling strategy");
}

std::vector<RolePolicy> config_grid() {
  constexpr std::array<RoleTreatment, 3> kOrder = {RoleTreatment::Guarantee, RoleTreatment::Exclude,
                                                   RoleTreatment::Ignore};
  std::vector<RolePolicy> grid;
  grid.reserve(27);
  for (RoleTreatment c : kOrder)
    for (RoleTreatment m : kOrder)
      for (RoleTreatment a : kOrder) grid.push_back(RolePolicy{c, m, a});
  return grid;
}

}  // namespace fna
