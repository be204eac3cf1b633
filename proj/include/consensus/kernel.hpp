#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "consensus/operator.hpp"

namespace consensus {

// sigma(x, x*) on Omega^2, Omega = (0,1)^d.
using KernelFunction = std::function<double(std::span<const double> x, std::span<const double> x_star)>;

struct Kernel {
  std::string name;
  KernelFunction fn;
};

// Builtins: "constant" (1), "row_dependent" (1 + x_1), "translation_invariant"
// (1 + cos(2 pi (x - x*)) / 2, periodic in each axis), "asymmetric_smooth"
// (1 + x_1 sin(2 pi x*_1)).
Kernel builtin_kernel(std::string_view name);
std::vector<std::string> builtin_kernel_names();

// Midpoint samples of a kernel on a uniform grid with unit total measure.
struct KernelGrid {
  int dim = 1;
  Eigen::MatrixXd nodes;          // N x d
  Eigen::MatrixXd sigma_samples;  // sigma(x_i, x_j), diagonal included
  Eigen::VectorXd S_values;       // (1/N) sum_j sigma(x_i, x_j)
  double delta_hat = 0.0;         // min_i S_values(i)

  std::size_t size() const noexcept { return static_cast<std::size_t>(nodes.rows()); }
};

// n points in total; for dim = 2, n must be a perfect square.
Eigen::MatrixXd midpoint_nodes(std::size_t n, int dim = 1);

// Throws ValidationError on negative or non-finite samples.
KernelGrid sample_kernel(const Kernel& kernel, std::size_t n, int dim = 1);
// Samples read from a file, taken as living on the 1-d midpoint grid.
KernelGrid grid_from_samples(Eigen::MatrixXd samples);

// sigma_ij = sigma(x_i, x_j) / N for i != j. Throws ConnectivityError when
// delta_hat <= 0.
InteractionMatrix discretize(const KernelGrid& grid);
InteractionMatrix discretize(const Kernel& kernel, std::size_t n, int dim = 1);

struct ConstantSReport {
  bool applicable = false;  // S constant within 1e-8 relative
  bool passed = false;
  double delta = 0.0;
  double max_deviation = 0.0;  // matching distance between spectrum(A) and spectrum(K) - delta
  std::string note;
};

// Checks spectrum(A) = spectrum(K) - delta, K_ij = sigma(x_i, x_j) / N.
ConstantSReport constant_S_check(const KernelGrid& grid);

struct RefinementEntry {
  std::size_t n = 0;
  double consensus = 0.0;
  double s_A2 = 0.0;
  double delta_hat = 0.0;
};

using InitialProfile = std::function<double(std::span<const double> x)>;

// Requires at least three grid sizes.
std::vector<RefinementEntry> refinement_study(const Kernel& kernel, const std::vector<std::size_t>& sizes,
                                              const InitialProfile& y_in, int dim = 1);

}  // namespace consensus
