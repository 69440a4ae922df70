// Synthetic sink fixture.
//
// The residual stream carries five signed features, each stored as a
// (+v, -v) coordinate pair so that layer norm sees a zero-mean row:
//   one      constant 1 on every token
//   cls      1 on the CLS row
//   planted  1 on planted tokens
//   priority planted priority (top of the list = k, then k-1, ...)
//   sink     grows on the token that wins the competition layer
// The remaining coordinates hold seeded random content, scaled so that every
// input row has the same norm R.
//
// Competition (formation layer): every token attends to the planted tokens
// with logits 12 * priority and subtracts the attended priority from its own.
// Only the highest-priority unmasked planted token is left with a
// non-negative priority; the MLP turns that into a large sink coordinate.
// Detection layer: the CLS query reads its own cls flag against keys made of
// the sink coordinate plus a fixed CLS self term, so CLS attends to the grown
// token ahead of itself while every other token stays below the threshold.
// All queries are also drawn toward the grown token.
// All other layers are exact residual pass-throughs.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "fna/rng.hpp"
#include "fna/vit.hpp"

namespace fna {
namespace {

enum Feature : std::size_t { kOne = 0, kCls = 1, kPlanted = 2, kPriority = 3, kSink = 4 };
constexpr std::size_t kFeatureCoords = 10;

// Logit gap between consecutive priorities in the competition head.
constexpr double kCompetitionSharpness = 12.0;
// Post layer-norm pre-activation of the winning MLP unit.
constexpr double kGrowthActivation = 8.0;
// Detection head: CLS logit scale and CLS self key.
constexpr double kDetectionScale = 4.0;
constexpr double kClsSelfKey = 1.2;
// Detection head: logit per unit of sink coordinate for every query.
constexpr double kSinkPull = 2.0;

void fill_gaussian(Matrix& m, CounterRng& rng, double scale) {
  for (float& v : m.data()) v = static_cast<float>(rng.normal() * scale);
}

// Writes `value` into the pair of a feature: coordinate 2f gets +value,
// 2f+1 gets -value (for a column of a D x k weight or a row of a k x D one).
void read_feature(Matrix& w, Feature f, std::size_t col, double value) {
  w(2 * f, col) = static_cast<float>(value / 2.0);
  w(2 * f + 1, col) = static_cast<float>(-value / 2.0);
}

void write_feature(Matrix& w, Feature f, std::size_t col_or_row, double value, bool row_major) {
  if (row_major) {
    w(col_or_row, 2 * f) = static_cast<float>(value);
    w(col_or_row, 2 * f + 1) = static_cast<float>(-value);
  } else {
    w(2 * f, col_or_row) = static_cast<float>(value);
    w(2 * f + 1, col_or_row) = static_cast<float>(-value);
  }
}

void validate(const SyntheticSpec& spec) {
  const std::size_t D = spec.heads * spec.head_dim;
  if (spec.heads == 0 || spec.head_dim == 0 || spec.mlp_dim == 0) {
    throw std::invalid_argument("synthetic model needs H, d, D_mlp >= 1");
  }
  if (D < kFeatureCoords + 2 || D % 2 != 0) {
    throw std::invalid_argument("synthetic model needs an even D >= 12, got " + std::to_string(D));
  }
  if (!(spec.formation_layer < spec.detection_layer && spec.detection_layer < spec.layers)) {
    throw std::invalid_argument("synthetic model needs formation < detection < layers");
  }
  if (spec.tokens == 0) throw std::invalid_argument("synthetic model needs N >= 1");
  if (spec.planted.size() > spec.tokens) {
    throw std::invalid_argument("planted priority list (" + std::to_string(spec.planted.size()) +
                                ") longer than N = " + std::to_string(spec.tokens));
  }
  std::set<std::size_t> seen;
  for (std::size_t t : spec.planted) {
    if (t == 0 || t > spec.tokens) throw std::invalid_argument("planted token " + std::to_string(t) + " outside [1, N]");
    if (!seen.insert(t).second) throw std::invalid_argument("planted token " + std::to_string(t) + " listed twice");
  }
}

double common_norm(const SyntheticSpec& spec) {
  const double D = static_cast<double>(spec.heads * spec.head_dim);
  const double k = static_cast<double>(spec.planted.size());
  // Feature pairs of a planted row use 2 * (1 + 1 + k^2); leave room for bulk.
  return std::max(3.0 * std::sqrt(D), 1.5 * std::sqrt(2.0 * (2.0 + k * k)));
}

}  // namespace

ModelWeights make_synthetic_model(const SyntheticSpec& spec) {
  validate(spec);
  const std::size_t D = spec.heads * spec.head_dim;
  const std::size_t d = spec.head_dim;
  const double R = common_norm(spec);
  const double u = std::sqrt(static_cast<double>(D)) / R;  // layer-norm gain of a norm-R row
  const double sqrt_d = std::sqrt(static_cast<double>(d));

  ModelWeights w = make_zero_model(spec.layers, spec.heads, spec.head_dim, spec.mlp_dim);
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(spec.tokens))));
  if (side * side == spec.tokens) {
    w.grid_h = side;
    w.grid_w = side;
  }

  CounterRng rng(spec.seed ^ 0x5EEDF00DULL);
  const double init = 1.0 / std::sqrt(static_cast<double>(D));
  for (auto& lw : w.layers) {
    for (auto& head : lw.attention.per_head) {
      fill_gaussian(head.query, rng, init);
      fill_gaussian(head.key, rng, init);
      fill_gaussian(head.value, rng, init);
    }
    fill_gaussian(lw.fc1, rng, init);
  }

  // Formation layer: head 0 runs the priority competition, other heads idle.
  {
    auto& lw = w.layers[spec.formation_layer];
    auto& h0 = lw.attention.per_head[0];
    h0.query = Matrix(D, d);
    h0.key = Matrix(D, d);
    h0.value = Matrix(D, d);
    read_feature(h0.query, kOne, 0, kCompetitionSharpness * sqrt_d / (u * u));
    read_feature(h0.key, kPriority, 0, 1.0);
    read_feature(h0.value, kPriority, 0, 1.0);
    write_feature(h0.output, kPriority, 0, -1.0 / u, false);

    const double alpha = 2.0 * kGrowthActivation / u;
    for (std::size_t i = 0; i < D; ++i) lw.fc1(i, 0) = 0.0f;
    read_feature(lw.fc1, kPriority, 0, alpha);
    read_feature(lw.fc1, kPlanted, 0, alpha);
    read_feature(lw.fc1, kOne, 0, -0.5 * alpha);
    write_feature(lw.fc2, kSink, 0, spec.massive_factor * R / kGrowthActivation, true);
  }

  // Detection layer: head dim 0 carries the CLS-to-sink pattern and dim 1
  // pulls every token toward the sink. Values and outputs stay random.
  {
    auto& lw = w.layers[spec.detection_layer];
    for (auto& head : lw.attention.per_head) {
      head.query = Matrix(D, d);
      head.key = Matrix(D, d);
      read_feature(head.query, kCls, 0, kDetectionScale * sqrt_d / u);
      read_feature(head.key, kSink, 0, 1.0);
      read_feature(head.key, kCls, 0, kClsSelfKey / u);
      if (d > 1) {
        read_feature(head.query, kOne, 1, kSinkPull * sqrt_d / u);
        read_feature(head.key, kSink, 1, 1.0);
      }
      fill_gaussian(head.output, rng, init);
    }
  }
  return w;
}

Matrix make_synthetic_input(const SyntheticSpec& spec) {
  validate(spec);
  const std::size_t D = spec.heads * spec.head_dim;
  const std::size_t N = spec.tokens;
  const std::size_t k = spec.planted.size();
  const double R = common_norm(spec);

  Matrix x(N + 1, D, 0.0f);
  CounterRng rng(spec.seed);
  for (std::size_t t = 0; t <= N; ++t) {
    auto row = x.row(t);
    auto set = [&](Feature f, double v) {
      row[2 * f] = static_cast<float>(v);
      row[2 * f + 1] = static_cast<float>(-v);
    };
    set(kOne, 1.0);
    if (t == 0) set(kCls, 1.0);
    const auto it = std::find(spec.planted.begin(), spec.planted.end(), t);
    if (it != spec.planted.end()) {
      set(kPlanted, 1.0);
      set(kPriority, static_cast<double>(k - static_cast<std::size_t>(it - spec.planted.begin())));
    }
    double used = 0.0;
    for (std::size_t j = 0; j < kFeatureCoords; ++j) used += static_cast<double>(row[j]) * row[j];

    const std::size_t pairs = (D - kFeatureCoords) / 2;
    std::vector<double> bulk(pairs);
    double bulk_norm2 = 0.0;
    for (double& b : bulk) {
      b = rng.normal();
      bulk_norm2 += 2.0 * b * b;
    }
    const double scale = std::sqrt((R * R - used) / std::max(bulk_norm2, 1e-12));
    for (std::size_t p = 0; p < pairs; ++p) {
      row[kFeatureCoords + 2 * p] = static_cast<float>(bulk[p] * scale);
      row[kFeatureCoords + 2 * p + 1] = static_cast<float>(-bulk[p] * scale);
    }
  }
  return x;
}

}  // namespace fna
