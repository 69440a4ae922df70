#include "fna/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include <json.hpp>

#include "fna/accounting.hpp"
#include "fna/format.hpp"
#include "fna/parallel.hpp"
#include "fna/random.hpp"
#include "fna/sinks.hpp"

namespace fna {
namespace {

using Clock = std::chrono::steady_clock;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double frobenius_diff(const Matrix& a, const Matrix& b) {
  double sum = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

Matrix run_impl(const ImplSpec& impl, const Matrix& x, const AttentionParams& p, const MaskPattern* pattern) {
  switch (impl.kind) {
    case ImplKind::Exact:
      return exact_mha(x, p);
    case ImplKind::Masked:
      return mha_with_pattern(x, p, *pattern, PatternMode::Mask);
    case ImplKind::Fna: {
      SamplerSpec spec;
      spec.samples = std::min(impl.samples, x.rows());
      return fna_attention(x, p, sample_landmarks(x, spec));
    }
  }
  return {};
}

}  // namespace

std::string ImplSpec::label() const {
  switch (kind) {
    case ImplKind::Exact:
      return "exact";
    case ImplKind::Masked:
      return "masked";
    case ImplKind::Fna:
      return "fna:" + std::to_string(samples);
  }
  return {};
}

ImplSpec ImplSpec::parse(const std::string& text) {
  if (text == "exact") return {ImplKind::Exact, 0};
  if (text == "masked") return {ImplKind::Masked, 0};
  if (text.starts_with("fna:")) {
    const std::string num = text.substr(4);
    std::size_t pos = 0;
    unsigned long long s = 0;
    try {
      s = std::stoull(num, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == num.size() && !num.empty() && s > 0) return {ImplKind::Fna, static_cast<std::size_t>(s)};
  }
  throw std::invalid_argument("unknown impl '" + text + "' (expected exact, masked or fna:<s>)");
}

std::vector<BenchRecord> bench_attention(const BenchConfig& config) {
  if (config.lengths.empty()) throw ShapeError("bench_attention: no sequence lengths given");
  for (std::size_t n : config.lengths)
    if (n < 2) throw ShapeError("bench_attention: sequence length " + std::to_string(n) + " < 2");
  if (config.impls.empty()) throw std::invalid_argument("bench_attention: no implementations given");
  if (config.batch == 0 || config.trials == 0) throw std::invalid_argument("bench_attention: batch and trials >= 1");

  const AttentionParams params = random_attention(config.heads, config.head_dim, config.seed);
  std::vector<BenchRecord> records;
  for (const ImplSpec& impl : config.impls) {
    for (std::size_t n : config.lengths) {
      BenchRecord rec{impl.label(), n, config.batch, 0.0, 0, 0, false};
      const std::size_t quadratic_bytes = 2 * n * n * sizeof(float);
      if (impl.kind != ImplKind::Fna && quadratic_bytes > config.memory_cap_bytes) {
        rec.skipped = true;
        records.push_back(rec);
        continue;
      }
      std::vector<Matrix> inputs;
      for (std::size_t b = 0; b < config.batch; ++b) {
        CounterRng rng(config.seed * 1000003ULL + n * 131ULL + b);
        inputs.push_back(random_matrix(n, params.model_dim, rng));
      }
      const MaskPattern pattern = MaskPattern::type_i(n, {1});

      ThreadCap single(1);
      std::vector<double> times;
      for (std::size_t trial = 0; trial < config.warmups + config.trials; ++trial) {
        ScratchScope scope;
        const auto t0 = Clock::now();
        for (const Matrix& x : inputs) {
          const Matrix out = run_impl(impl, x, params, &pattern);
          if (out.rows() != n) throw ShapeError("bench_attention: unexpected output shape");
        }
        const auto t1 = Clock::now();
        rec.scratch_bytes = std::max(rec.scratch_bytes, scope.peak_scratch_bytes());
        if (trial >= config.warmups) times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      }
      rec.median_ms = median(times);
      rec.trials = times.size();
      records.push_back(rec);
    }
  }
  return records;
}

std::vector<ErrorRecord> error_sweep(const ErrorSweepConfig& config) {
  const std::size_t rows = config.tokens + 1;
  for (std::size_t s : config.samples) {
    if (s == 0 || s > rows) {
      throw std::invalid_argument("error_sweep: sample count " + std::to_string(s) + " outside [1, N+1]");
    }
  }
  std::vector<ErrorRecord> records;
  for (std::size_t s : config.samples) {
    for (std::uint64_t seed = 0; seed < config.seeds; ++seed) {
      const AttentionParams p = random_attention(config.heads, config.head_dim, 2 * seed + 1);
      CounterRng rng(2 * seed + 2);
      const Matrix x = random_matrix(rows, p.model_dim, rng);

      SamplerSpec spec;
      spec.strategy = config.strategy;
      spec.samples = s;
      spec.seed = seed;
      const LandmarkSet lm = sample_landmarks(x, spec);

      double frob = 0.0;
      for (const HeadParams& head : p.per_head) {
        const Matrix exact = softmax_rows(attention_logits(project_query(x, head), project_key(x, head)));
        frob += frobenius_diff(exact, nystrom_attention_matrix(x, head, lm));
      }
      const double maxabs = max_abs_diff(exact_mha(x, p), fna_attention(x, p, lm));
      records.push_back({s, seed, frob / static_cast<double>(p.heads), maxabs});
    }
  }
  return records;
}

std::vector<double> mean_frob_by_samples(const std::vector<ErrorRecord>& records,
                                         const std::vector<std::size_t>& samples) {
  std::vector<double> out;
  for (std::size_t s : samples) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& r : records) {
      if (r.samples == s) {
        sum += r.frob_err;
        ++count;
      }
    }
    out.push_back(count ? sum / static_cast<double>(count) : 0.0);
  }
  return out;
}

GridResult grid_sweep(const Matrix& x0, const ModelWeights& w, const GridConfig& config) {
  const std::size_t ld = config.detection_layer;
  if (ld >= w.depth()) throw std::out_of_range("grid_sweep: detection layer outside the model");

  ForwardOptions opts;
  opts.capture.block_outputs = false;
  opts.capture.norms = false;
  opts.capture.attention_layers = {ld};
  const ForwardResult exact = forward(x0, w, {}, opts);

  GridResult result;
  result.roles.massive = detect_sinks_onepass(exact.trace.mean_attention.at(ld));
  const SinkReport report = detect_sinks_iterative(x0, w, config.formation_layer, ld);
  const std::set<std::size_t> massive(result.roles.massive.begin(), result.roles.massive.end());
  for (std::size_t t : report.sinks)
    if (!massive.contains(t)) result.roles.artifact.push_back(t);
  std::sort(result.roles.artifact.begin(), result.roles.artifact.end());

  ForwardOptions quiet;
  quiet.capture.block_outputs = false;
  quiet.capture.norms = false;
  for (const RolePolicy& policy : config_grid()) {
    SamplerSpec spec;
    spec.strategy = config.strategy;
    spec.samples = config.samples;
    spec.seed = config.seed;
    spec.role_policy = policy;
    const auto overrides = fna_schedule(ld, w.depth(), spec, result.roles);
    const Matrix out = forward(x0, w, overrides, quiet).output;
    result.rows.push_back({policy, static_cast<double>(max_abs_diff(out, exact.output))});
  }
  return result;
}

std::string bench_csv(const std::vector<BenchRecord>& records) {
  std::string out = "impl,length,batch,median_ms,scratch_bytes,trials,skipped\n";
  for (const auto& r : records) {
    out += csv_field(r.impl) + "," + std::to_string(r.length) + "," + std::to_string(r.batch) + "," +
           format_number(r.median_ms) + "," + std::to_string(r.scratch_bytes) + "," + std::to_string(r.trials) +
           "," + (r.skipped ? "true" : "false") + "\n";
  }
  return out;
}

std::string bench_json(const std::vector<BenchRecord>& records) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    arr.push_back({{"impl", r.impl},
                   {"length", r.length},
                   {"batch", r.batch},
                   {"median_ms", r.median_ms},
                   {"scratch_bytes", r.scratch_bytes},
                   {"trials", r.trials},
                   {"skipped", r.skipped}});
  }
  return arr.dump(2) + "\n";
}

std::string errors_csv(const std::vector<ErrorRecord>& records) {
  std::string out = "s,seed,frob_err,maxabs_err\n";
  for (const auto& r : records) {
    out += std::to_string(r.samples) + "," + std::to_string(r.seed) + "," + format_number(r.frob_err) + "," +
           format_number(r.maxabs_err) + "\n";
  }
  return out;
}

std::string errors_json(const std::vector<ErrorRecord>& records) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    arr.push_back({{"s", r.samples}, {"seed", r.seed}, {"frob_err", r.frob_err}, {"maxabs_err", r.maxabs_err}});
  }
  return arr.dump(2) + "\n";
}

std::string grid_csv(const GridResult& result) {
  std::string out = "cls,massive,artifact,drift\n";
  for (const auto& r : result.rows) {
    out += to_string(r.policy.cls) + "," + to_string(r.policy.massive) + "," + to_string(r.policy.artifact) + "," +
           format_number(r.drift) + "\n";
  }
  return out;
}

std::string grid_json(const GridResult& result) {
  nlohmann::ordered_json j;
  j["massive"] = result.roles.massive;
  j["artifact"] = result.roles.artifact;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : result.rows) {
    rows.push_back({{"cls", to_string(r.policy.cls)},
                    {"massive", to_string(r.policy.massive)},
                    {"artifact", to_string(r.policy.artifact)},
                    {"drift", r.drift}});
  }
  j["policies"] = rows;
  return j.dump(2) + "\n";
}

}  // namespace fna
