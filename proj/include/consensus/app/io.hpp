#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "consensus/app/config.hpp"
#include "consensus/dynamics.hpp"

namespace consensus::app {

// Plain-text matrix: whitespace or comma separated rows, '#' comments.
Eigen::MatrixXd read_matrix(const std::filesystem::path& path);
Eigen::VectorXd read_vector(const std::filesystem::path& path);

struct Provenance {
  std::string scenario;
  std::uint64_t seed = 0;
  std::string prng;
};

// Columns: t, y_1..y_n, weighted_mean, var_v, [var_P], min_state, max_state.
// A leading '#' line records the provenance. 17 significant digits.
void write_csv(const Trajectory& traj, const std::filesystem::path& path, const Provenance& prov);
Trajectory read_csv(const std::filesystem::path& path);

// Line plots of the states and of log10 var_v (and var_P) against time.
void write_states_svg(const Trajectory& traj, const std::filesystem::path& path, const Provenance& prov);
void write_variance_svg(const Trajectory& traj, const std::filesystem::path& path, const Provenance& prov);

// Throws NumericalError naming the first non-finite number.
void require_finite(const nlohmann::json& doc, const std::string& where = "summary");

struct RunArtifacts {
  Provenance provenance;
  Trajectory trajectory;
  std::optional<Trajectory> discrete;
  nlohmann::json summary = nlohmann::json::object();
};

// Writes trajectory.csv / discrete.csv, summary.json and states.svg /
// variance.svg into dir depending on the requested formats. Throws IoError.
void emit_outputs(const RunArtifacts& artifacts, const std::filesystem::path& dir, const std::set<Format>& formats);

}  // namespace consensus::app
