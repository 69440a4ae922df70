#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fna/nystrom.hpp"
#include "fna/vit.hpp"

namespace fna {

enum class ImplKind { Exact, Fna, Masked };

struct ImplSpec {
  ImplKind kind = ImplKind::Exact;
  std::size_t samples = 64;  // FNA only

  // "exact", "fna:64" or "masked".
  std::string label() const;
  static ImplSpec parse(const std::string& text);
};

struct BenchConfig {
  std::vector<std::size_t> lengths;
  std::size_t batch = 1;
  std::vector<ImplSpec> impls;
  std::uint64_t seed = 0;
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t trials = 5;
  std::size_t warmups = 2;
  // Exact and masked runs whose N x N buffers would exceed this are skipped.
  std::size_t memory_cap_bytes = std::size_t{2} << 30;
};

struct BenchRecord {
  std::string impl;
  std::size_t length = 0;
  std::size_t batch = 0;
  double median_ms = 0.0;
  std::size_t scratch_bytes = 0;
  std::size_t trials = 0;
  bool skipped = false;
};

// Times every (impl, length) pair on seeded Gaussian inputs of `length` tokens.
// Timing runs single-threaded; the FNA time includes landmark sampling (FPS,
// CLS guaranteed). Throws ShapeError on an empty or too-short length list.
std::vector<BenchRecord> bench_attention(const BenchConfig& config);

struct ErrorSweepConfig {
  std::size_t tokens = 256;  // N; inputs have N + 1 rows
  std::size_t head_dim = 16;
  std::size_t heads = 4;
  std::vector<std::size_t> samples = {8, 16, 32, 64};
  std::size_t seeds = 20;
  SamplerStrategy strategy = SamplerStrategy::FPS;
};

struct ErrorRecord {
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  double frob_err = 0.0;    // mean over heads of |A_h - A~_h|_F
  double maxabs_err = 0.0;  // max |exact_mha - fna_attention|
};

std::vector<ErrorRecord> error_sweep(const ErrorSweepConfig& config);

// Mean frob_err per sample count, in config order.
std::vector<double> mean_frob_by_samples(const std::vector<ErrorRecord>& records,
                                         const std::vector<std::size_t>& samples);

struct GridConfig {
  std::size_t samples = 8;
  std::size_t formation_layer = 9;
  std::size_t detection_layer = 13;
  SamplerStrategy strategy = SamplerStrategy::FPS;
  std::uint64_t seed = 0;
};

struct GridRecord {
  RolePolicy policy;
  double drift = 0.0;  // max-abs final embedding difference vs the exact model
};

struct GridResult {
  TokenRoles roles;
  std::vector<GridRecord> rows;
};

// Runs every role policy of config_grid() with FNA from the detection layer to
// the last layer, sampled once there. Massive tokens are the one-pass sinks at
// the detection layer; artifacts are the remaining iterative-detection sinks.
GridResult grid_sweep(const Matrix& x0, const ModelWeights& w, const GridConfig& config);

// CSV (header row, LF endings) and JSON renderings.
std::string bench_csv(const std::vector<BenchRecord>& records);
std::string bench_json(const std::vector<BenchRecord>& records);
std::string errors_csv(const std::vector<ErrorRecord>& records);
std::string errors_json(const std::vector<ErrorRecord>& records);
std::string grid_csv(const GridResult& result);
std::string grid_json(const GridResult& result);

}  // namespace fna
