#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "consensus/app/config.hpp"
#include "consensus/app/io.hpp"

namespace consensus::app {

enum class Mode { kAnalyze, kSimulate, kDiscrete, kKernel };

inline constexpr const char* kPrngName = "mt19937_64";

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitConnectivity = 3;
inline constexpr int kExitNumerical = 4;
inline constexpr int kExitIo = 5;

int exit_code_for(const std::exception& error) noexcept;

// Interaction matrix and initial state, drawn from one generator seeded with
// config.seed (matrix first, then the initial state).
struct ScenarioInputs {
  Eigen::MatrixXd sigma;
  Eigen::VectorXd y_in;
};
ScenarioInputs build_inputs(const ScenarioConfig& config);

// Builtin random families. Entries are uniform on the open interval (0, 1).
Eigen::MatrixXd fully_connected_sigma(std::size_t n, std::uint64_t seed);
Eigen::MatrixXd ring_sigma(std::size_t n, std::uint64_t seed);
Eigen::MatrixXd blocks_sigma(std::size_t n, std::size_t k, std::uint64_t seed);

struct ScenarioOutcome {
  int exit_code = kExitOk;
  std::string stage;  // module that raised the error, when exit_code != 0
  std::string message;
  RunArtifacts artifacts;
};

// Runs the pipeline for one mode. Never throws; failures are reported in the
// outcome. When out_dir is set the artifacts are written there.
ScenarioOutcome run_scenario(const ScenarioConfig& config, Mode mode,
                             const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct BatchJob {
  ScenarioConfig config;
  std::filesystem::path out_dir;
};

// Runs jobs concurrently on up to `threads` workers (0: hardware concurrency).
// Outcomes are returned in job order.
std::vector<ScenarioOutcome> run_batch(const std::vector<BatchJob>& jobs, Mode mode, unsigned threads = 0);

}  // namespace consensus::app
