#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "fna/accounting.hpp"
#include "fna/nystrom.hpp"
#include "fna/random.hpp"
#include "oracles.hpp"

using namespace fna;

namespace {

std::vector<std::size_t> iota_pool(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

LandmarkSet all_tokens(std::size_t n) {
  LandmarkSet lm;
  lm.indices = iota_pool(n);
  return lm;
}

}  // namespace

TEST_CASE("fps on a 1-D line picks the ends then the lowest tied midpoint") {
  Matrix x(10, 1);
  for (std::size_t i = 0; i < 10; ++i) x(i, 0) = static_cast<float>(i);
  const auto pool = iota_pool(10);
  CHECK(fps_sample(x, pool, 3) == std::vector<std::size_t>{9, 0, 4});
  CHECK(oracle::brute_force_fps(x, pool, 3) == std::vector<std::size_t>{9, 0, 4});

  const auto everything = fps_sample(x, pool, 10);
  CHECK(std::set<std::size_t>(everything.begin(), everything.end()).size() == 10);
  CHECK_THROWS_AS(fps_sample(x, pool, 11), SamplerError);
}

TEST_CASE("fps matches the brute-force oracle") {
  CounterRng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = trial < 10 ? 32 : 128;
    const Matrix x = random_matrix(n, 6, rng);
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < n; ++i)
      if (rng.uniform() < 0.8) pool.push_back(i);
    const std::size_t k = std::min<std::size_t>(pool.size(), 8 + trial);
    const auto got = fps_sample(x, pool, k);
    CHECK(got == oracle::brute_force_fps(x, pool, k));
    CHECK(std::set<std::size_t>(got.begin(), got.end()).size() == k);
    for (std::size_t i : got) CHECK(std::binary_search(pool.begin(), pool.end(), i));
  }
}

TEST_CASE("uniform sampling is seeded and draws distinct pool members") {
  const auto pool = iota_pool(50);
  const auto a = uniform_sample(pool, 12, 7);
  CHECK(a.indices == uniform_sample(pool, 12, 7).indices);
  CHECK(a.indices != uniform_sample(pool, 12, 8).indices);
  CHECK(std::set<std::size_t>(a.indices.begin(), a.indices.end()).size() == 12);
  CHECK_THROWS_AS(uniform_sample(pool, 51, 0), SamplerError);
}

TEST_CASE("segment means partition 10 rows as 4, 3, 3") {
  CounterRng rng(32);
  const Matrix x = random_matrix(10, 3, rng);
  const LandmarkSet lm = segment_means(x, 3);
  REQUIRE(lm.kind == LandmarkKind::Features);
  REQUIRE(lm.features.rows() == 3);
  const std::size_t bounds[] = {0, 4, 7, 10};
  for (std::size_t seg = 0; seg < 3; ++seg)
    for (std::size_t c = 0; c < 3; ++c) {
      double sum = 0.0;
      for (std::size_t r = bounds[seg]; r < bounds[seg + 1]; ++r) sum += x(r, c);
      CHECK(lm.features(seg, c) == doctest::Approx(sum / static_cast<double>(bounds[seg + 1] - bounds[seg])));
    }
  CHECK(segment_means(x, 10).features == x);
  CHECK_THROWS_AS(segment_means(x, 11), SamplerError);
}

TEST_CASE("kmeans returns finite centroids and recovers separated clusters") {
  Matrix x(30, 2);
  CounterRng rng(33);
  for (std::size_t i = 0; i < 30; ++i) {
    const float cx = static_cast<float>((i % 3) * 100);
    x(i, 0) = cx + static_cast<float>(rng.normal());
    x(i, 1) = static_cast<float>(rng.normal());
  }
  const LandmarkSet lm = kmeans_landmarks(x, 3, 10, 5);
  REQUIRE(lm.features.rows() == 3);
  CHECK(all_finite(lm.features));
  std::vector<float> centres;
  for (std::size_t c = 0; c < 3; ++c) centres.push_back(lm.features(c, 0));
  std::ranges::sort(centres);
  CHECK(std::abs(centres[0]) < 2.0f);
  CHECK(std::abs(centres[1] - 100.0f) < 2.0f);
  CHECK(std::abs(centres[2] - 200.0f) < 2.0f);
  CHECK(kmeans_landmarks(x, 3, 10, 5).features == lm.features);

  // Duplicate points force empty clusters, which must be re-seeded.
  const Matrix same(6, 2, 1.0f);
  CHECK(all_finite(kmeans_landmarks(same, 4, 5, 0).features));
}

TEST_CASE("sample_landmarks honours guarantee and exclusion sets") {
  CounterRng rng(34);
  const Matrix x = random_matrix(40, 5, rng);
  for (SamplerStrategy strat : {SamplerStrategy::FPS, SamplerStrategy::Uniform}) {
    for (int trial = 0; trial < 10; ++trial) {
      SamplerSpec spec;
      spec.strategy = strat;
      spec.samples = 6 + rng.below(10);
      spec.seed = rng.next();
      spec.guarantee = {3, 17};
      spec.exclude = {5, 6, 7};
      const LandmarkSet lm = sample_landmarks(x, spec);
      const std::set<std::size_t> s(lm.indices.begin(), lm.indices.end());
      CHECK(s.size() == spec.samples);
      for (std::size_t g : {0, 3, 17}) CHECK(s.contains(g));
      for (std::size_t e : {5, 6, 7}) CHECK_FALSE(s.contains(e));
    }
  }
}

TEST_CASE("a guarantee set that fills the quota is returned as is") {
  CounterRng rng(35);
  const Matrix x = random_matrix(12, 4, rng);
  for (SamplerStrategy strat :
       {SamplerStrategy::FPS, SamplerStrategy::Uniform, SamplerStrategy::SegmentMeans, SamplerStrategy::KMeans}) {
    SamplerSpec spec;
    spec.strategy = strat;
    spec.samples = 3;
    spec.guarantee = {4, 9};
    const LandmarkSet lm = sample_landmarks(x, spec);
    CHECK(lm.kind == LandmarkKind::Indices);
    CHECK(lm.indices == std::vector<std::size_t>{0, 4, 9});
  }
}

TEST_CASE("fps landmarks compose guarantee rows with fps on the reduced pool") {
  CounterRng rng(36);
  const Matrix x = random_matrix(30, 4, rng);
  SamplerSpec spec;
  spec.samples = 9;
  spec.guarantee = {12};
  spec.exclude = {2, 20};
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < 30; ++i)
    if (i != 0 && i != 12 && i != 2 && i != 20) pool.push_back(i);
  std::vector<std::size_t> expected{0, 12};
  const auto picked = fps_sample(x, pool, 7);
  expected.insert(expected.end(), picked.begin(), picked.end());
  CHECK(sample_landmarks(x, spec).indices == expected);
}

TEST_CASE("aggregate strategies append guarantee rows verbatim") {
  CounterRng rng(37);
  const Matrix x = random_matrix(20, 4, rng);
  SamplerSpec spec;
  spec.strategy = SamplerStrategy::SegmentMeans;
  spec.samples = 5;
  const LandmarkSet lm = sample_landmarks(x, spec, {}, 3);
  REQUIRE(lm.kind == LandmarkKind::Features);
  CHECK(lm.features.rows() == 5);
  CHECK(lm.source_layer == 3);
  for (std::size_t c = 0; c < 4; ++c) CHECK(lm.features(4, c) == x(0, c));
}

TEST_CASE("sampler specs that break their invariants are rejected") {
  const Matrix x(10, 2, 0.5f);
  SamplerSpec spec;
  spec.samples = 4;
  spec.guarantee = {3};
  spec.exclude = {3};
  CHECK_THROWS_AS(sample_landmarks(x, spec), SamplerError);
  spec.guarantee = {1, 2, 3, 4};
  spec.exclude = {};
  CHECK_THROWS_AS(sample_landmarks(x, spec), SamplerError);  // |G| = 5 with CLS
  spec.guarantee = {};
  spec.exclude = {1, 2, 3, 4, 5, 6, 7};
  CHECK_THROWS_AS(sample_landmarks(x, spec), SamplerError);
  spec.exclude = {};
  spec.samples = 0;
  CHECK_THROWS_AS(sample_landmarks(x, spec), SamplerError);
  spec.samples = 2;
  spec.role_policy.cls = RoleTreatment::Exclude;
  spec.guarantee = {0};
  CHECK_THROWS_AS(sample_landmarks(x, spec), SamplerError);
}

TEST_CASE("role policies map onto guarantee and exclusion") {
  SamplerSpec spec;
  spec.samples = 5;
  spec.role_policy = {RoleTreatment::Exclude, RoleTreatment::Guarantee, RoleTreatment::Exclude};
  const ResolvedSets sets = resolve_sets(spec, 20, TokenRoles{{4, 8}, {11}});
  CHECK(sets.guarantee == std::vector<std::size_t>{4, 8});
  CHECK(sets.exclude == std::vector<std::size_t>{0, 11});
}

TEST_CASE("fna with every token as a landmark equals exact attention") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    CounterRng rng(seed + 40);
    const std::size_t n = 2 + rng.below(63);
    const AttentionParams p = random_attention(2, 4, seed + 50);
    const Matrix x = random_matrix(n, 8, rng);
    CHECK(max_abs_diff(fna_attention(x, p, all_tokens(n)), exact_mha(x, p)) <= 1e-4f);
  }
}

TEST_CASE("fna matches the dense three-factor oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CounterRng rng(seed + 60);
    const AttentionParams p = random_attention(2, 4, seed + 70);
    const Matrix x = random_matrix(8, 8, rng);
    SamplerSpec spec;
    spec.samples = 4;
    const LandmarkSet lm = sample_landmarks(x, spec);
    const oracle::Mat rows = oracle::to_eigen(landmark_rows(x, lm));
    CHECK(oracle::max_abs(fna_attention(x, p, lm), oracle::dense_fna(oracle::to_eigen(x), rows, p)) <= 1e-5);
    CHECK(oracle::max_abs(nystrom_attention_matrix(x, p.per_head[0], lm),
                          oracle::dense_nystrom_matrix(oracle::to_eigen(x), rows, p.per_head[0])) <= 1e-5);

    LandmarkSet feats;
    feats.kind = LandmarkKind::Features;
    feats.features = random_matrix(3, 8, rng);
    CHECK(oracle::max_abs(fna_attention(x, p, feats),
                          oracle::dense_fna(oracle::to_eigen(x), oracle::to_eigen(feats.features), p)) <= 1e-5);
  }
}

TEST_CASE("fna rejects an empty landmark set and bad indices") {
  const AttentionParams p = random_attention(1, 4, 1);
  const Matrix x(5, 4, 0.1f);
  CHECK_THROWS_AS(fna_attention(x, p, LandmarkSet{}), SamplerError);
  LandmarkSet bad;
  bad.indices = {0, 9};
  CHECK_THROWS_AS(fna_attention(x, p, bad), ShapeError);
}

TEST_CASE("fna scratch stays linear in the token count") {
  const AttentionParams p = random_attention(4, 16, 2);
  CounterRng rng(80);
  const std::size_t s = 16, dim = 64;
  for (std::size_t n : {512u, 2048u}) {
    const Matrix x = random_matrix(n, dim, rng);
    SamplerSpec spec;
    spec.samples = s;
    const LandmarkSet lm = sample_landmarks(x, spec);
    ScratchScope scope;
    const Matrix out = fna_attention(x, p, lm);
    const std::size_t bound = 16 * sizeof(double) * (s * n + n * dim + s * s);
    CHECK(scope.peak_scratch_bytes() <= bound);
    CHECK(scope.peak_scratch_bytes() < n * n * sizeof(float));
  }
}

TEST_CASE("config grid lists all 27 role policies once") {
  const auto grid = config_grid();
  CHECK(grid.size() == 27);
  CHECK(std::ranges::find(grid, RolePolicy{}) != grid.end());
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t j = i + 1; j < grid.size(); ++j) CHECK_FALSE(grid[i] == grid[j]);
  CHECK(grid.front() == RolePolicy{RoleTreatment::Guarantee, RoleTreatment::Guarantee, RoleTreatment::Guarantee});
  CHECK(grid.back() == RolePolicy{RoleTreatment::Ignore, RoleTreatment::Ignore, RoleTreatment::Ignore});
}

TEST_CASE("strategy names round trip") {
  for (SamplerStrategy s :
       {SamplerStrategy::FPS, SamplerStrategy::Uniform, SamplerStrategy::SegmentMeans, SamplerStrategy::KMeans})
    CHECK(parse_strategy(to_string(s)) == s);
  CHECK_THROWS_AS(parse_strategy("spectral"), SamplerError);
}
