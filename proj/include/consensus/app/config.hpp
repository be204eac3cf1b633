#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace consensus::app {

enum class SourceKind { kMatrixFile, kFullyConnected, kRing, kBlocks, kKernel };
enum class InitialKind { kUniform, kFile, kList };
enum class Method { kRk4, kDiscrete, kBoth };
enum class ControlKind { kNone, kJurdjevicQuinn, kNonlinear };
enum class Format { kCsv, kJson, kSvg };

// One scenario, read from an INI-style file:
//
//   [scenario]    name, source, n, seed, matrix_file, blocks, kernel, kernel_file,
//                 kernel_dim
//   [initial]     kind = uniform|file|list, lo, hi, file, values
//   [integration] method = rk4|discrete|both, dt, t_end, steps, stride,
//                 window_fraction, lyapunov
//   [control]     kind = none|jurdjevic_quinn|nonlinear, alpha, perturbation, beta
//   [kernel]      sizes (comma separated, >= 3 for a refinement study)
//   [output]      formats = csv,json,svg ; timing
//
// dt = 0 and t_end = 0 mean "choose automatically" (see scenario.cpp).
struct ScenarioConfig {
  std::string name = "scenario";
  SourceKind source = SourceKind::kFullyConnected;
  std::filesystem::path matrix_file;
  std::size_t blocks = 3;
  std::string kernel = "constant";
  // Kernel samples sigma(x_i, x_j) on the 1-d midpoint grid; overrides kernel.
  std::filesystem::path kernel_file;
  int kernel_dim = 1;
  std::size_t n = 0;
  std::uint64_t seed = 0;

  InitialKind initial = InitialKind::kUniform;
  double lo = 0.0;
  double hi = 1.0;
  std::filesystem::path initial_file;
  std::vector<double> initial_values;

  Method method = Method::kRk4;
  double dt = 0.0;
  double t_end = 0.0;
  std::size_t steps = 0;
  std::size_t stride = 1;
  double window_fraction = 0.5;
  bool lyapunov = false;

  ControlKind control = ControlKind::kNone;
  double alpha = 0.0;
  std::string perturbation = "cubic_shrink";
  double beta = 1.0;

  std::vector<std::size_t> kernel_sizes;

  std::set<Format> formats{Format::kCsv, Format::kJson};
  bool timing = false;
};

// Throws ConfigError with line (syntax) or section/key (field) diagnostics.
// Relative paths inside the config are resolved against base_dir.
ScenarioConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
ScenarioConfig load_config(const std::filesystem::path& path);

std::set<Format> parse_formats(std::string_view list);

std::string to_string(SourceKind kind);
std::string to_string(ControlKind kind);

}  // namespace consensus::app
