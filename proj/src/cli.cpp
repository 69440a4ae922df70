#include "fna/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "fna/bench.hpp"
#include "fna/format.hpp"
#include "fna/sinks.hpp"

namespace fna {
namespace {

using json = nlohmann::ordered_json;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  return parts;
}

std::size_t parse_index(const std::string& s, const std::string& what) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (s.empty() || pos != s.size() || s.front() == '-') throw UsageError("bad " + what + " '" + s + "'");
  return static_cast<std::size_t>(v);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

float parse_float(const std::string& s) {
  std::size_t pos = 0;
  float v = 0.0f;
  try {
    v = std::stof(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\r')) ++pos;
  if (s.empty() || pos != s.size()) throw std::runtime_error("bad number '" + s + "' in matrix file");
  return v;
}

Matrix matrix_from_rows(const std::vector<std::vector<float>>& rows) {
  if (rows.empty()) throw std::runtime_error("matrix file has no rows");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.cols()) throw std::runtime_error("ragged matrix file at row " + std::to_string(i));
    std::ranges::copy(rows[i], m.row(i).begin());
  }
  return m;
}

// Writes to `path`, or to `out` when no path was given.
void emit(std::ostream& out, const std::string& path, const std::string& text) {
  if (path.empty()) {
    out << text;
  } else {
    write_text(path, text);
  }
}

std::string report_csv(const SinkReport& r) {
  std::string out = "rank,token,iteration\n";
  std::size_t rank = 0;
  for (std::size_t it = 0; it < r.additions.size(); ++it)
    for (std::size_t t : r.additions[it])
      out += std::to_string(rank++) + "," + std::to_string(t) + "," + std::to_string(it + 1) + "\n";
  return out;
}

SinkReport onepass_report(const Matrix& x0, const ModelWeights& w, std::size_t lm, std::size_t ld) {
  if (ld >= w.depth()) throw std::out_of_range("detection layer " + std::to_string(ld) + " outside the model");
  ForwardOptions opts;
  opts.capture.block_outputs = false;
  opts.capture.norms = false;
  opts.capture.attention_layers = {ld};
  const ForwardResult run = run_layers(x0, w, 0, ld + 1, {}, opts);
  const Matrix& attn = run.trace.mean_attention.at(ld);
  SinkReport r;
  r.formation_layer = lm;
  r.detection_layer = ld;
  r.sinks = detect_sinks_onepass(attn);
  r.additions = {r.sinks};
  const auto cls = attn.row(0);
  r.cls_rows.emplace_back(cls.begin(), cls.end());
  r.iterations = 1;
  r.converged = true;
  return r;
}

std::string trace_json(const RunTrace& trace) {
  json j;
  json norms = json::object();
  for (const auto& [layer, row] : norm_trace(trace)) norms[std::to_string(layer)] = row;
  j["norms"] = norms;
  json lms = json::object();
  for (const auto& [layer, lm] : trace.landmarks) {
    json e;
    e["kind"] = lm.kind == LandmarkKind::Indices ? "indices" : "features";
    e["size"] = lm.size();
    e["source_layer"] = lm.source_layer;
    if (lm.kind == LandmarkKind::Indices) e["indices"] = lm.indices;
    lms[std::to_string(layer)] = e;
  }
  j["landmarks"] = lms;
  return j.dump(2) + "\n";
}

void check_extension(const std::string& path) {
  if (!path.empty()) format_for(path);
}

// Exit code when parsing ends the run (help or a usage error).
std::optional<int> parse_args(CLI::App& app, int argc, const char* const* argv, std::ostream& out,
                              std::ostream& err) {
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }
  return std::nullopt;
}

}  // namespace

FileFormat format_for(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".csv") return FileFormat::Csv;
  if (ext == ".json") return FileFormat::Json;
  throw UsageError("cannot infer format of '" + path.string() + "' (use .csv or .json)");
}

std::string matrix_csv(const Matrix& m) {
  std::string out;
  for (std::size_t c = 0; c < m.cols(); ++c) out += (c ? ",c" : "c") + std::to_string(c);
  out += "\n";
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto row = m.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ",";
      out += format_number(row[c]);
    }
    out += "\n";
  }
  return out;
}

std::string matrix_json(const Matrix& m) {
  json arr = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto row = m.row(i);
    arr.push_back(std::vector<float>(row.begin(), row.end()));
  }
  return arr.dump() + "\n";
}

Matrix read_matrix(const std::filesystem::path& path) {
  const FileFormat fmt = format_for(path);
  const std::string text = read_text(path);
  std::vector<std::vector<float>> rows;
  if (fmt == FileFormat::Json) {
    json j;
    try {
      j = json::parse(text);
      rows = j.get<std::vector<std::vector<float>>>();
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ": " + e.what());
    }
    return matrix_from_rows(rows);
  }
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.front() == 'c') continue;  // header row
    }
    std::vector<float> row;
    for (const auto& cell : split(line, ',')) row.push_back(parse_float(cell));
    rows.push_back(std::move(row));
  }
  return matrix_from_rows(rows);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_matrix(const std::filesystem::path& path, const Matrix& m) {
  write_text(path, format_for(path) == FileFormat::Csv ? matrix_csv(m) : matrix_json(m));
}

LayerOverride parse_override(const std::string& text, std::size_t tokens) {
  const auto parts = split(text, ':');
  if (parts.size() < 2) throw UsageError("override '" + text + "' needs layer:kind");
  LayerOverride o;
  o.layer = parse_index(parts[0], "override layer");
  const std::string& kind = parts[1];
  if (kind == "standard" && parts.size() == 2) {
    o.kind = StandardAttention{};
  } else if (kind == "skip" && parts.size() == 2) {
    o.kind = SkipAttention{};
  } else if (kind == "fna" && parts.size() >= 3 && parts.size() <= 5) {
    FnaAttention f;
    f.sampler.samples = parse_index(parts[2], "sample count");
    for (std::size_t i = 3; i < parts.size(); ++i) {
      if (parts[i] == "reuse") {
        f.reuse = true;
      } else {
        try {
          f.sampler.strategy = parse_strategy(parts[i]);
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
      }
    }
    o.kind = f;
  } else if ((kind == "mask" || kind == "sink") && (parts.size() == 3 || parts.size() == 4)) {
    std::set<std::size_t> interest;
    if (parts.size() == 4 && !parts[3].empty()) {
      for (const auto& t : split(parts[3], ',')) interest.insert(parse_index(t, "token index"));
    }
    const PatternMode mode = kind == "mask" ? PatternMode::Mask : PatternMode::Sink;
    if (parts[2] == "typeI") {
      o.kind = MaskedAttention{MaskPattern::type_i(tokens, interest), mode};
    } else if (parts[2] == "typeII") {
      o.kind = MaskedAttention{MaskPattern::type_ii(tokens, interest), mode};
    } else {
      throw UsageError("unknown mask pattern '" + parts[2] + "' (typeI or typeII)");
    }
  } else {
    throw UsageError("cannot parse override '" + text + "'");
  }
  return o;
}

SyntheticSpec parse_synthetic_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("synthetic spec is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("synthetic spec must be a JSON object");
  SyntheticSpec s;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "layers") s.layers = value.get<std::size_t>();
      else if (key == "heads") s.heads = value.get<std::size_t>();
      else if (key == "head_dim") s.head_dim = value.get<std::size_t>();
      else if (key == "mlp_dim") s.mlp_dim = value.get<std::size_t>();
      else if (key == "tokens") s.tokens = value.get<std::size_t>();
      else if (key == "planted") s.planted = value.get<std::vector<std::size_t>>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else if (key == "formation_layer") s.formation_layer = value.get<std::size_t>();
      else if (key == "detection_layer") s.detection_layer = value.get<std::size_t>();
      else if (key == "massive_factor") s.massive_factor = value.get<float>();
      else throw UsageError("unknown synthetic spec key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad synthetic spec value: ") + e.what());
  }
  return s;
}

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fast Nystrom attention benchmarks and sink analysis", "fna"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  // bench
  auto* bench = app.add_subcommand("bench", "Time exact, masked and FNA attention over sequence lengths");
  BenchConfig bc;
  std::vector<std::string> impl_names{"exact", "fna:64"};
  std::string bench_out;
  std::size_t cap_mb = bc.memory_cap_bytes >> 20;
  bench->add_option("--lengths", bc.lengths, "Sequence lengths")->delimiter(',')->required();
  bench->add_option("--batch", bc.batch, "Inputs per timed call")->capture_default_str();
  bench->add_option("--impls", impl_names, "exact, masked, fna:<s>")->delimiter(',')->capture_default_str();
  bench->add_option("--seed", bc.seed, "Input seed")->capture_default_str();
  bench->add_option("--trials", bc.trials, "Timed trials")->capture_default_str();
  bench->add_option("--warmups", bc.warmups, "Untimed warmup runs")->capture_default_str();
  bench->add_option("--heads", bc.heads, "Attention heads")->capture_default_str();
  bench->add_option("--head-dim", bc.head_dim, "Head width")->capture_default_str();
  bench->add_option("--memory-cap-mb", cap_mb, "Skip quadratic runs above this")->capture_default_str();
  bench->add_option("--out", bench_out, "Output .csv or .json (stdout CSV if omitted)");

  // errors
  auto* errors = app.add_subcommand("errors", "Nystrom attention error against exact attention");
  ErrorSweepConfig ec;
  std::string strategy_name = "fps";
  std::string errors_out;
  errors->add_option("--n", ec.tokens, "Tokens N (inputs have N+1 rows)")->capture_default_str();
  errors->add_option("--d", ec.head_dim, "Head width")->capture_default_str();
  errors->add_option("--heads", ec.heads, "Attention heads")->capture_default_str();
  errors->add_option("--s-list", ec.samples, "Landmark counts")->delimiter(',')->capture_default_str();
  errors->add_option("--seeds", ec.seeds, "Number of seeds (0..n-1)")->capture_default_str();
  errors->add_option("--strategy", strategy_name, "fps, uniform, segment-means, kmeans")->capture_default_str();
  errors->add_option("--out", errors_out, "Output .csv or .json (stdout CSV if omitted)");

  // detect
  auto* detect = app.add_subcommand("detect", "Attention sink detection");
  std::string weights_path, input_path, detect_out, mode = "iterative";
  std::size_t lm = kDefaultFormationLayer, ld = kDefaultDetectionLayer, max_iters = kDefaultMaxIters;
  detect->add_option("--weights", weights_path, "VITW weight file")->required();
  detect->add_option("--input", input_path, "Input embedding .csv or .json")->required();
  detect->add_option("--lm", lm, "Formation layer")->capture_default_str();
  detect->add_option("--ld", ld, "Detection layer")->capture_default_str();
  detect->add_option("--mode", mode, "one-pass or iterative")
      ->check(CLI::IsMember({"one-pass", "iterative"}))
      ->capture_default_str();
  detect->add_option("--max-iters", max_iters, "Iteration limit")->capture_default_str();
  detect->add_option("--out", detect_out, "Output .json or .csv (stdout JSON if omitted)");

  // forward
  auto* fwd = app.add_subcommand("forward", "Forward pass with per-layer attention overrides");
  std::vector<std::string> override_texts;
  std::string trace_out, forward_out;
  fwd->add_option("--weights", weights_path, "VITW weight file")->required();
  fwd->add_option("--input", input_path, "Input embedding .csv or .json")->required();
  fwd->add_option("--override", override_texts,
                  "layer:standard | layer:skip | layer:fna:S[:strategy][:reuse] | layer:mask|sink:typeI|typeII:t,...");
  fwd->add_option("--trace-out", trace_out, "Norm trace .csv or trace .json");
  fwd->add_option("--out", forward_out, "Final embeddings .csv or .json");

  // grid
  auto* grid = app.add_subcommand("grid", "All 27 role policies of FNA sampling, drift against exact");
  GridConfig gc;
  std::string grid_out, grid_strategy = "fps";
  grid->add_option("--weights", weights_path, "VITW weight file")->required();
  grid->add_option("--input", input_path, "Input embedding .csv or .json")->required();
  grid->add_option("--s", gc.samples, "Landmark count (must cover the guaranteed set)")->capture_default_str();
  grid->add_option("--lm", gc.formation_layer, "Formation layer")->capture_default_str();
  grid->add_option("--ld", gc.detection_layer, "Detection and sampling layer")->capture_default_str();
  grid->add_option("--strategy", grid_strategy, "Sampler")->capture_default_str();
  grid->add_option("--seed", gc.seed, "Sampler seed")->capture_default_str();
  grid->add_option("--out", grid_out, "Output .csv or .json (stdout CSV if omitted)");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic sink model");
  std::string spec_arg, synth_out, synth_input_out;
  synth->add_option("--spec", spec_arg, "JSON spec file, or an inline JSON object")->required();
  synth->add_option("--out", synth_out, "Output VITW file")->required();
  synth->add_option("--input-out", synth_input_out, "Also write the matching input (.csv or .json)");

  if (const auto code = parse_args(app, argc, argv, out, err)) return *code;

  try {
    if (bench->parsed()) {
      check_extension(bench_out);
      bc.impls.clear();
      for (const auto& name : impl_names) {
        try {
          bc.impls.push_back(ImplSpec::parse(name));
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
      }
      bc.memory_cap_bytes = cap_mb << 20;
      const auto records = bench_attention(bc);
      const bool as_json = !bench_out.empty() && format_for(bench_out) == FileFormat::Json;
      emit(out, bench_out, as_json ? bench_json(records) : bench_csv(records));
    } else if (errors->parsed()) {
      check_extension(errors_out);
      try {
        ec.strategy = parse_strategy(strategy_name);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const auto records = error_sweep(ec);
      const bool as_json = !errors_out.empty() && format_for(errors_out) == FileFormat::Json;
      emit(out, errors_out, as_json ? errors_json(records) : errors_csv(records));
    } else if (detect->parsed()) {
      check_extension(detect_out);
      const ModelWeights w = load_weights(weights_path);
      const Matrix x = read_matrix(input_path);
      const SinkReport r = mode == "iterative" ? detect_sinks_iterative(x, w, lm, ld, max_iters)
                                               : onepass_report(x, w, lm, ld);
      const bool as_csv = !detect_out.empty() && format_for(detect_out) == FileFormat::Csv;
      emit(out, detect_out, as_csv ? report_csv(r) : to_json(r) + "\n");
    } else if (fwd->parsed()) {
      check_extension(trace_out);
      check_extension(forward_out);
      const ModelWeights w = load_weights(weights_path);
      const Matrix x = read_matrix(input_path);
      std::vector<LayerOverride> overrides;
      for (const auto& t : override_texts) overrides.push_back(parse_override(t, x.rows()));
      const ForwardResult r = forward(x, w, overrides);
      if (!trace_out.empty()) {
        write_text(trace_out, format_for(trace_out) == FileFormat::Csv ? norm_trace_csv(norm_trace(r.trace))
                                                                       : trace_json(r.trace));
      }
      if (!forward_out.empty()) write_matrix(forward_out, r.output);
      if (trace_out.empty() && forward_out.empty()) out << matrix_csv(r.output);
    } else if (grid->parsed()) {
      check_extension(grid_out);
      try {
        gc.strategy = parse_strategy(grid_strategy);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const ModelWeights w = load_weights(weights_path);
      const Matrix x = read_matrix(input_path);
      const GridResult result = grid_sweep(x, w, gc);
      const bool as_json = !grid_out.empty() && format_for(grid_out) == FileFormat::Json;
      emit(out, grid_out, as_json ? grid_json(result) : grid_csv(result));
    } else if (synth->parsed()) {
      check_extension(synth_input_out);
      const bool inline_spec = spec_arg.find('{') != std::string::npos;
      const SyntheticSpec spec = parse_synthetic_spec(inline_spec ? spec_arg : read_text(spec_arg));
      save_weights(make_synthetic_model(spec), synth_out);
      if (!synth_input_out.empty()) write_matrix(synth_input_out, make_synthetic_input(spec));
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("fna");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace fna
