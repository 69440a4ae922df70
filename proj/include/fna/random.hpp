#pragma once

#include <cstddef>
#include <cstdint>

#include "fna/attention.hpp"
#include "fna/rng.hpp"
#include "fna/tensor.hpp"

namespace fna {

// Entries drawn i.i.d. from N(0, scale^2).
Matrix random_matrix(std::size_t rows, std::size_t cols, CounterRng& rng, double scale = 1.0);

// Gaussian attention parameters: projections and biases with std 1/sqrt(D)
// times weight_scale.
AttentionParams random_attention(std::size_t heads, std::size_t head_dim, std::uint64_t seed,
                                 double weight_scale = 1.0);

}  // namespace fna
