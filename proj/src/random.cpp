#include "fna/random.hpp"

#include <cmath>

namespace fna {

Matrix random_matrix(std::size_t rows, std::size_t cols, CounterRng& rng, double scale) {
  Matrix m(rows, cols);
  for (float& v : m.data()) v = static_cast<float>(rng.normal() * scale);
  return m;
}

AttentionParams random_attention(std::size_t heads, std::size_t head_dim, std::uint64_t seed, double weight_scale) {
  CounterRng rng(seed);
  AttentionParams p;
  p.heads = heads;
  p.head_dim = head_dim;
  p.model_dim = heads * head_dim;
  const std::size_t D = p.model_dim;
  const double scale = weight_scale / std::sqrt(static_cast<double>(D));
  const auto vec = [&](std::size_t n) {
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.normal() * scale);
    return v;
  };
  p.per_head.resize(heads);
  for (auto& h : p.per_head) {
    h.query = random_matrix(D, head_dim, rng, scale);
    h.key = random_matrix(D, head_dim, rng, scale);
    h.value = random_matrix(D, head_dim, rng, scale);
    h.output = random_matrix(D, head_dim, rng, scale);
    h.query_bias = vec(head_dim);
    h.key_bias = vec(head_dim);
    h.value_bias = vec(head_dim);
  }
  p.output_bias = vec(D);
  return p;
}

}  // namespace fna
