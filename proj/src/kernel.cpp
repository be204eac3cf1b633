#include "consensus/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "consensus/spectral.hpp"

namespace consensus {

Kernel builtin_kernel(std::string_view name) {
  using std::numbers::pi;
  if (name == "constant") {
    return {"constant", [](std::span<const double>, std::span<const double>) { return 1.0; }};
  }
  if (name == "row_dependent") {
    return {"row_dependent", [](std::span<const double> x, std::span<const double>) { return 1.0 + x[0]; }};
  }
  if (name == "translation_invariant") {
    return {"translation_invariant", [](std::span<const double> x, std::span<const double> xs) {
              double value = 1.0;
              for (std::size_t k = 0; k < x.size(); ++k) value *= 1.0 + 0.5 * std::cos(2.0 * pi * (x[k] - xs[k]));
              return value;
            }};
  }
  if (name == "asymmetric_smooth") {
    return {"asymmetric_smooth", [](std::span<const double> x, std::span<const double> xs) {
              return 1.0 + x[0] * std::sin(2.0 * pi * xs[0]);
            }};
  }
  throw ConfigError("unknown kernel '" + std::string(name) + "'");
}

std::vector<std::string> builtin_kernel_names() {
  return {"constant", "row_dependent", "translation_invariant", "asymmetric_smooth"};
}

Eigen::MatrixXd midpoint_nodes(std::size_t n, int dim) {
  if (n < 1) throw PreconditionError("midpoint_nodes: need at least one node");
  if (dim == 1) {
    Eigen::MatrixXd nodes(static_cast<Eigen::Index>(n), 1);
    for (std::size_t i = 0; i < n; ++i) {
      nodes(static_cast<Eigen::Index>(i), 0) = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    }
    return nodes;
  }
  if (dim == 2) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    if (side * side != n) throw PreconditionError("midpoint_nodes: for d = 2 the node count must be a square");
    Eigen::MatrixXd nodes(static_cast<Eigen::Index>(n), 2);
    for (std::size_t a = 0; a < side; ++a) {
      for (std::size_t b = 0; b < side; ++b) {
        const auto row = static_cast<Eigen::Index>(a * side + b);
        nodes(row, 0) = (static_cast<double>(a) + 0.5) / static_cast<double>(side);
        nodes(row, 1) = (static_cast<double>(b) + 0.5) / static_cast<double>(side);
      }
    }
    return nodes;
  }
  throw PreconditionError("midpoint_nodes: only d = 1 and d = 2 are supported");
}

namespace {

KernelGrid finish_grid(Eigen::MatrixXd nodes, Eigen::MatrixXd samples, int dim) {
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    for (Eigen::Index j = 0; j < samples.cols(); ++j) {
      if (!std::isfinite(samples(i, j)) || samples(i, j) < 0.0) {
        std::ostringstream os;
        os << "kernel sample (" << i << "," << j << ") = " << samples(i, j) << " is negative or not finite";
        throw ValidationError(os.str());
      }
    }
  }
  KernelGrid grid;
  grid.dim = dim;
  grid.nodes = std::move(nodes);
  grid.S_values = samples.rowwise().sum() / static_cast<double>(samples.rows());
  grid.delta_hat = grid.S_values.minCoeff();
  grid.sigma_samples = std::move(samples);
  return grid;
}

}  // namespace

KernelGrid sample_kernel(const Kernel& kernel, std::size_t n, int dim) {
  if (n < 2) throw PreconditionError("sample_kernel: need at least two grid points");
  Eigen::MatrixXd nodes = midpoint_nodes(n, dim);
  const auto rows = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd samples(rows, rows);
  std::vector<double> xi(static_cast<std::size_t>(dim)), xj(static_cast<std::size_t>(dim));
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (int d = 0; d < dim; ++d) xi[static_cast<std::size_t>(d)] = nodes(i, d);
    for (Eigen::Index j = 0; j < rows; ++j) {
      for (int d = 0; d < dim; ++d) xj[static_cast<std::size_t>(d)] = nodes(j, d);
      samples(i, j) = kernel.fn(xi, xj);
    }
  }
  return finish_grid(std::move(nodes), std::move(samples), dim);
}

KernelGrid grid_from_samples(Eigen::MatrixXd samples) {
  if (samples.rows() != samples.cols()) throw DimensionError("kernel samples must form a square matrix");
  if (samples.rows() < 2) throw PreconditionError("kernel samples need at least two grid points");
  Eigen::MatrixXd nodes = midpoint_nodes(static_cast<std::size_t>(samples.rows()), 1);
  return finish_grid(std::move(nodes), std::move(samples), 1);
}

InteractionMatrix discretize(const KernelGrid& grid) {
  if (!(grid.delta_hat > 0.0)) {
    std::ostringstream os;
    os << "discretize: min_i S(x_i) = " << grid.delta_hat << " is not positive";
    throw ConnectivityError(os.str());
  }
  Eigen::MatrixXd sigma = grid.sigma_samples / static_cast<double>(grid.size());
  sigma.diagonal().setZero();
  return InteractionMatrix(std::move(sigma));
}

InteractionMatrix discretize(const Kernel& kernel, std::size_t n, int dim) {
  return discretize(sample_kernel(kernel, n, dim));
}

namespace {

// Greedy nearest matching; adequate because the two spectra are expected to
// coincide up to rounding.
double multiset_distance(std::vector<std::complex<double>> a, std::vector<std::complex<double>> b) {
  double worst = 0.0;
  for (const auto& z : a) {
    auto best = std::min_element(b.begin(), b.end(),
                                 [&](const auto& p, const auto& q) { return std::abs(p - z) < std::abs(q - z); });
    worst = std::max(worst, std::abs(*best - z));
    b.erase(best);
  }
  return worst;
}

}  // namespace

ConstantSReport constant_S_check(const KernelGrid& grid) {
  ConstantSReport report;
  const double s_max = grid.S_values.maxCoeff();
  const double s_min = grid.S_values.minCoeff();
  const double scale = std::max(std::abs(s_max), std::abs(s_min));
  report.delta = s_min;
  if (!(scale > 0.0) || (s_max - s_min) > 1e-8 * scale) {
    std::ostringstream os;
    os << "S is not constant (range [" << s_min << ", " << s_max << "]); check skipped. -delta_hat = " << -s_min
       << " is an upper bound for the essential part of the spectrum";
    report.note = os.str();
    return report;
  }
  report.applicable = true;
  report.delta = grid.S_values.mean();

  const Eigen::MatrixXd k = grid.sigma_samples / static_cast<double>(grid.size());
  const Generator gen = Generator(discretize(grid));
  auto spec_k = dense_eigenvalues(k);
  for (auto& z : spec_k) z -= report.delta;
  report.max_deviation = multiset_distance(dense_eigenvalues(gen.matrix()), spec_k);
  report.passed = report.max_deviation <= 1e-8 * std::max(1.0, gen.norm_inf());
  std::ostringstream os;
  os << "S constant = " << report.delta << "; spectrum(A) vs spectrum(K) - delta max deviation "
     << report.max_deviation;
  report.note = os.str();
  return report;
}

std::vector<RefinementEntry> refinement_study(const Kernel& kernel, const std::vector<std::size_t>& sizes,
                                              const InitialProfile& y_in, int dim) {
  if (sizes.size() < 3) throw PreconditionError("refinement_study: need at least three grid sizes");
  if (!std::is_sorted(sizes.begin(), sizes.end()) ||
      std::adjacent_find(sizes.begin(), sizes.end()) != sizes.end()) {
    throw PreconditionError("refinement_study: grid sizes must be strictly increasing");
  }
  std::vector<RefinementEntry> out;
  out.reserve(sizes.size());
  for (const std::size_t n : sizes) {
    const KernelGrid grid = sample_kernel(kernel, n, dim);
    const Generator gen(discretize(grid));
    const Weight v = compute_weight(gen);
    State y(static_cast<Eigen::Index>(n));
    std::vector<double> x(static_cast<std::size_t>(dim));
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      for (int d = 0; d < dim; ++d) x[static_cast<std::size_t>(d)] = grid.nodes(i, d);
      y(i) = y_in(x);
    }
    out.push_back({n, weighted_mean(y, v), full_spectrum(gen).spectral_bound_A2, grid.delta_hat});
  }
  return out;
}

}  // namespace consensus
