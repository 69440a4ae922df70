#include <doctest.h>

#include <algorithm>
#include <json.hpp>

#include "fna/random.hpp"
#include "fna/sinks.hpp"
#include "oracles.hpp"

using namespace fna;

namespace {

SyntheticSpec planted(std::vector<std::size_t> order) {
  SyntheticSpec spec;
  spec.planted = std::move(order);
  return spec;
}

Matrix cls_row_matrix(std::vector<float> row) {
  const std::size_t n = row.size();
  Matrix a(n, n, 0.0f);
  for (std::size_t j = 0; j < n; ++j) a(0, j) = row[j];
  for (std::size_t i = 1; i < n; ++i) a(i, i) = 1.0f;
  return a;
}

// Exhaustive scan: nearest normal token on the grid, row-major first minimum.
std::size_t grid_neighbour(std::size_t t, const std::set<std::size_t>& sinks, std::size_t cols, std::size_t n) {
  const long r = static_cast<long>((t - 1) / cols), c = static_cast<long>((t - 1) % cols);
  std::size_t best = 0;
  long best_d = -1;
  for (std::size_t u = 1; u < n; ++u) {
    if (sinks.contains(u)) continue;
    const long ur = static_cast<long>((u - 1) / cols), uc = static_cast<long>((u - 1) % cols);
    const long d = std::abs(ur - r) + std::abs(uc - c);
    if (best_d < 0 || d < best_d) {
      best_d = d;
      best = u;
    }
  }
  return best;
}

float median(std::vector<float> v) {
  std::ranges::sort(v);
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("one-pass detection examples") {
  CHECK(detect_sinks_onepass(cls_row_matrix({1.0f, 0.0f, 0.0f})).empty());
  CHECK(detect_sinks_onepass(cls_row_matrix({0.1f, 0.05f, 0.6f, 0.25f})) == std::vector<std::size_t>{2, 3});
  // Equality counts as a sink.
  CHECK(detect_sinks_onepass(cls_row_matrix({0.4f, 0.4f, 0.2f})) == std::vector<std::size_t>{1});
}

TEST_CASE("one-pass detection rejects malformed matrices") {
  Matrix a = cls_row_matrix({0.5f, 0.5f, 0.0f});
  a(2, 2) = 0.9f;
  CHECK_THROWS_AS(detect_sinks_onepass(a), SinkAnalysisError);
  CHECK_THROWS_AS(detect_sinks_onepass(Matrix(2, 3, 0.5f)), ShapeError);
  CHECK_THROWS_AS(detect_sinks_onepass(Matrix()), ShapeError);
}

TEST_CASE("iterative detection recovers the planted order") {
  const SyntheticSpec spec = planted({5, 9, 2});
  const ModelWeights w = make_synthetic_model(spec);
  const SinkReport r = detect_sinks_iterative(make_synthetic_input(spec), w);
  CHECK(r.sinks == std::vector<std::size_t>{5, 9, 2});
  CHECK(r.converged);
  CHECK(r.iterations == 4);
  CHECK(r.formation_layer == 9);
  CHECK(r.detection_layer == 13);
  REQUIRE(r.additions.size() == r.iterations);
  REQUIRE(r.cls_rows.size() == r.iterations);

  std::vector<std::size_t> prefix;
  for (std::size_t i = 0; i < r.iterations; ++i) {
    for (std::size_t t : r.additions[i]) {
      CHECK(r.cls_rows[i][t] >= r.cls_rows[i][0]);
      CHECK(std::ranges::find(prefix, t) == prefix.end());
      prefix.push_back(t);
    }
    CHECK(std::equal(prefix.begin(), prefix.end(), r.sinks.begin()));
  }
  CHECK(prefix == r.sinks);
  CHECK(r.additions.back().empty());
}

TEST_CASE("iterative detection on an unplanted model stops after one pass") {
  const SyntheticSpec spec;
  const SinkReport r = detect_sinks_iterative(make_synthetic_input(spec), make_synthetic_model(spec));
  CHECK(r.sinks.empty());
  CHECK(r.iterations == 1);
  CHECK(r.converged);
}

TEST_CASE("one-pass detection equals the first iteration") {
  for (const auto& order : std::vector<std::vector<std::size_t>>{{5, 9, 2}, {12}, {30, 1}, {}}) {
    const SyntheticSpec spec = planted(order);
    const ModelWeights w = make_synthetic_model(spec);
    const Matrix x = make_synthetic_input(spec);
    const ForwardOptions opts{TraceOptions{false, false, false, {spec.detection_layer}}, {}};
    const ForwardResult plain = run_layers(x, w, 0, spec.detection_layer + 1, {}, opts);
    const auto once = detect_sinks_onepass(plain.trace.mean_attention.at(spec.detection_layer));
    const SinkReport r = detect_sinks_iterative(x, w);
    auto first = r.additions.at(0);
    std::ranges::sort(first);
    CHECK(once == first);
  }
}

TEST_CASE("three planted sinks give a count of three") {
  const SyntheticSpec spec = planted({17, 4, 33});
  const SinkReport r = detect_sinks_iterative(make_synthetic_input(spec), make_synthetic_model(spec));
  CHECK(r.sinks.size() == 3);
  CHECK(r.sinks == spec.planted);
}

TEST_CASE("iterative detection limits and errors") {
  const SyntheticSpec spec = planted({5, 9, 2});
  const ModelWeights w = make_synthetic_model(spec);
  const Matrix x = make_synthetic_input(spec);
  const SinkReport capped = detect_sinks_iterative(x, w, 9, 13, 2);
  CHECK(capped.sinks == std::vector<std::size_t>{5, 9});
  CHECK_FALSE(capped.converged);
  CHECK(capped.iterations == 2);
  CHECK_THROWS_AS(detect_sinks_iterative(x, w, 14, 13), std::out_of_range);
  CHECK_THROWS_AS(detect_sinks_iterative(x, w, 9, 16), std::out_of_range);
  CHECK_THROWS_AS(detect_sinks_iterative(x, w, 9, 13, 0), std::invalid_argument);
}

TEST_CASE("sink report JSON layout") {
  const SyntheticSpec spec = planted({5, 9, 2});
  const SinkReport r = detect_sinks_iterative(make_synthetic_input(spec), make_synthetic_model(spec));
  const auto j = nlohmann::json::parse(to_json(r));
  CHECK(j.at("sinks") == nlohmann::json({5, 9, 2}));
  CHECK(j.at("iterations") == 4);
  CHECK(j.at("converged") == true);
  CHECK(j.at("formation_layer") == 9);
  CHECK(j.at("detection_layer") == 13);
  CHECK(j.at("additions").size() == 4);
  CHECK(j.at("cls_rows").at(0).size() == 37);
}

TEST_CASE("replace_sinks on a 4x4 grid takes the row-first Manhattan neighbour") {
  CounterRng rng(70);
  const Matrix emb = random_matrix(17, 4, rng);
  const PatchGrid grid{4, 4};
  const std::size_t sink[] = {6};
  const Matrix out = replace_sinks(emb, sink, grid);
  for (std::size_t c = 0; c < 4; ++c) CHECK(out(6, c) == emb(2, c));
  for (std::size_t t = 0; t < 17; ++t)
    if (t != 6)
      for (std::size_t c = 0; c < 4; ++c) CHECK(out(t, c) == emb(t, c));

  for (int trial = 0; trial < 20; ++trial) {
    std::set<std::size_t> sinks;
    while (sinks.size() < 1 + rng.below(8)) sinks.insert(1 + rng.below(16));
    const std::vector<std::size_t> list(sinks.begin(), sinks.end());
    const Matrix got = replace_sinks(emb, list, grid);
    for (std::size_t t : list) {
      const std::size_t src = grid_neighbour(t, sinks, 4, 17);
      for (std::size_t c = 0; c < 4; ++c) CHECK(got(t, c) == emb(src, c));
    }
    CHECK(replace_sinks(got, list, grid) == got);
  }
}

TEST_CASE("replace_sinks without a grid uses the nearest feature row") {
  Matrix emb{{9, 9}, {0, 0}, {1, 0}, {5, 5}, {0.9f, 0.1f}, {0, 1}};
  const std::size_t sinks[] = {2};
  const Matrix out = replace_sinks(emb, sinks);
  CHECK(out(2, 0) == 0.9f);
  CHECK(out(2, 1) == 0.1f);
  // Equidistant rows 2 and 5 from row 1: the lower index wins.
  const std::size_t origin[] = {1, 4};
  const Matrix tie = replace_sinks(emb, origin);
  CHECK(tie(1, 0) == 1.0f);
  CHECK(tie(1, 1) == 0.0f);
  CHECK(replace_sinks(tie, origin) == tie);
}

TEST_CASE("replace_sinks edge cases") {
  CounterRng rng(71);
  const Matrix emb = random_matrix(5, 3, rng);
  CHECK(replace_sinks(emb, std::span<const std::size_t>{}) == emb);
  const std::size_t all[] = {1, 2, 3, 4};
  CHECK_THROWS_AS(replace_sinks(emb, all), SinkAnalysisError);
  const std::size_t cls[] = {0};
  CHECK_THROWS_AS(replace_sinks(emb, cls), std::invalid_argument);
  const std::size_t far[] = {5};
  CHECK_THROWS_AS(replace_sinks(emb, far), std::out_of_range);
  const std::size_t one[] = {1};
  CHECK_THROWS_AS(replace_sinks(emb, one, PatchGrid{3, 3}), ShapeError);
}

TEST_CASE("forward with replacement edits the last layer's input") {
  const SyntheticSpec spec = planted({5, 9, 2});
  const ModelWeights w = make_synthetic_model(spec);
  const Matrix x = make_synthetic_input(spec);
  const std::vector<std::size_t> sinks{5, 9, 2};
  const std::size_t last = w.depth() - 1;
  const Matrix before = run_layers(x, w, 0, last).output;
  const Matrix want = run_layers(replace_sinks(before, sinks, model_grid(w)), w, last, w.depth()).output;
  CHECK(forward_with_replacement(x, w, sinks).output == want);
  CHECK(max_abs_diff(forward_with_replacement(x, w, {}).output, forward(x, w).output) == 0.0f);
  CHECK_THROWS_AS(forward_with_replacement(x, w, sinks, w.depth()), std::out_of_range);
}

TEST_CASE("suppression projection examples") {
  AttentionParams p = random_attention(1, 2, 72);
  auto& h = p.per_head[0];
  h.value = Matrix::identity(2);
  h.output = Matrix::identity(2);
  std::ranges::fill(h.value_bias, 0.0f);
  const Matrix value_input{{3, 4}, {0, 2}};
  const Matrix emb{{-4, 3}, {6, 8}};
  const MatrixF64 proj = suppression_projection(emb, value_input, p, 3).projection;
  CHECK(std::abs(proj(0, 0)) <= 1e-12);
  CHECK(proj(1, 0) == doctest::Approx(5.0));
  CHECK(proj(1, 1) == doctest::Approx(1.6));
  CHECK(suppression_projection(emb, value_input, p, 3).layer == 3);

  const Matrix zero_row{{0, 0}, {1, 1}};
  CHECK_THROWS_AS(suppression_projection(zero_row, value_input, p), SinkAnalysisError);
}

TEST_CASE("suppression projection matches the direct sum and the Cauchy-Schwarz bound") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const AttentionParams p = random_attention(3, 2, seed + 80, 2.0);
    CounterRng rng(seed + 90);
    const Matrix emb = random_matrix(7, 6, rng, 3.0);
    const Matrix vin = random_matrix(7, 6, rng);
    const MatrixF64 proj = suppression_projection(emb, vin, p).projection;
    CHECK(oracle::max_abs(proj, oracle::suppression(emb, vin, p)) <= 1e-6);
    const oracle::Vec bound = oracle::suppression_bound(vin, p);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j) CHECK(std::abs(proj(i, j)) <= bound(j) + 1e-6);
  }
}

TEST_CASE("suppression at a layer uses that layer's block input and LN1") {
  const SyntheticSpec spec = planted({5});
  const ModelWeights w = make_synthetic_model(spec);
  const Matrix x = make_synthetic_input(spec);
  const std::size_t layer = 11;
  const Matrix emb = run_layers(x, w, 0, layer).output;
  const auto& lw = w.layers[layer];
  const Matrix normed = layer_norm(emb, lw.ln1.gamma, lw.ln1.beta, w.ln_eps);
  const SuppressionMatrix s = suppression_projection_at(x, w, layer);
  CHECK(s.layer == layer);
  CHECK(s.projection == suppression_projection(emb, normed, lw.attention).projection);
  CHECK_THROWS_AS(suppression_projection_at(x, w, 16), std::out_of_range);
}

TEST_CASE("norm trace examples and recomputation") {
  RunTrace zeros;
  zeros.block_outputs[0] = Matrix(3, 4, 0.0f);
  const auto z = norm_trace(zeros);
  CHECK(z.at(0) == std::vector<float>{0, 0, 0});

  const SyntheticSpec spec = planted({5, 9, 2});
  const ModelWeights w = make_synthetic_model(spec);
  const ForwardResult r = forward(make_synthetic_input(spec), w);
  const auto norms = norm_trace(r.trace);
  CHECK(norms.size() == w.depth());
  for (const auto& [l, v] : norms) {
    const Matrix& out = r.trace.block_outputs.at(l);
    for (std::size_t t = 0; t < v.size(); ++t) {
      double s = 0.0;
      for (float c : out.row(t)) s += static_cast<double>(c) * c;
      CHECK(std::abs(v[t] - std::sqrt(s)) <= 1e-5 * std::max(1.0, std::sqrt(s)));
    }
  }
  // The active sink grows past the configured factor at the formation layer.
  const auto& formed = norms.at(spec.formation_layer);
  CHECK(formed[5] > spec.massive_factor * median(formed));

  const std::string csv = norm_trace_csv(z);
  CHECK(csv == "layer,token,norm\n0,0,0\n0,1,0\n0,2,0\n");
}

TEST_CASE("type I sinking of the top sink grows the next token at the detection layer") {
  const SyntheticSpec spec = planted({5, 9, 2});
  const ModelWeights w = make_synthetic_model(spec);
  const Matrix x = make_synthetic_input(spec);
  std::vector<LayerOverride> sink_top;
  for (std::size_t l = spec.formation_layer; l <= spec.detection_layer; ++l)
    sink_top.push_back({l, MaskedAttention{MaskPattern::type_i(x.rows(), {5}), PatternMode::Sink}});
  const auto plain = forward(x, w).trace.norms.at(spec.detection_layer);
  const auto sunk = forward(x, w, sink_top).trace.norms.at(spec.detection_layer);
  CHECK(sunk[9] > plain[9]);
}
