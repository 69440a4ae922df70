#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "fna/vit.hpp"

namespace fna {

// Bad flags, values or file extensions; the CLI exits with status 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class FileFormat { Csv, Json };

// From the extension (.csv / .json); anything else is a UsageError.
FileFormat format_for(const std::filesystem::path& path);

// Matrices as CSV (header c0,c1,... then one row per token) or JSON (array
// of row arrays).
Matrix read_matrix(const std::filesystem::path& path);
void write_matrix(const std::filesystem::path& path, const Matrix& m);
std::string matrix_csv(const Matrix& m);
std::string matrix_json(const Matrix& m);

void write_text(const std::filesystem::path& path, const std::string& text);

// Override syntax, layer first:
//   L:standard | L:skip | L:fna:S[:strategy][:reuse]
//   L:mask:typeI:t1,t2 | L:sink:typeII:t1,... | L:mask:typeI: (empty set)
// `tokens` is N + 1.
LayerOverride parse_override(const std::string& text, std::size_t tokens);

// JSON object with any of: layers, heads, head_dim, mlp_dim, tokens, planted,
// seed, formation_layer, detection_layer, massive_factor.
SyntheticSpec parse_synthetic_spec(const std::string& json_text);

// Entry point of the fna command line tool. Returns 0 on success, 2 on usage
// errors and 1 on runtime failures.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fna
