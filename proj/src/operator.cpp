#include "consensus/operator.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include <Eigen/QR>

#include "consensus/graph.hpp"

namespace consensus {

namespace {

void require_same_size(const State& y, const Weight& v, const char* what) {
  if (static_cast<std::size_t>(y.size()) != v.size()) {
    throw DimensionError(std::string(what) + ": state has " + std::to_string(y.size()) +
                         " entries, weight has " + std::to_string(v.size()));
  }
}

}  // namespace

InteractionMatrix::InteractionMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
  if (entries_.rows() != entries_.cols()) {
    throw DimensionError("interaction matrix must be square, got " + std::to_string(entries_.rows()) + "x" +
                         std::to_string(entries_.cols()));
  }
  for (Eigen::Index i = 0; i < entries_.rows(); ++i) {
    for (Eigen::Index j = 0; j < entries_.cols(); ++j) {
      if (i == j) continue;
      const double s = entries_(i, j);
      if (!std::isfinite(s)) {
        throw ValidationError("interaction matrix entry (" + std::to_string(i) + "," + std::to_string(j) +
                              ") is not finite");
      }
      if (s < 0.0) {
        throw ValidationError("interaction matrix entry (" + std::to_string(i) + "," + std::to_string(j) +
                              ") is negative");
      }
    }
  }
  entries_.diagonal().setZero();
}

bool InteractionMatrix::is_symmetric() const { return entries_ == entries_.transpose(); }

Generator::Generator(const InteractionMatrix& sigma)
    : matrix_(sigma.entries()), row_sums_(sigma.entries().rowwise().sum()), symmetric_(sigma.is_symmetric()) {
  matrix_.diagonal() = -row_sums_;
  norm_inf_ = matrix_.size() == 0 ? 0.0 : matrix_.cwiseAbs().rowwise().sum().maxCoeff();
}

Eigen::MatrixXd Generator::interactions() const {
  Eigen::MatrixXd s = matrix_;
  s.diagonal().setZero();
  return s;
}

Generator assemble_generator(const InteractionMatrix& sigma) { return Generator(sigma); }

Weight::Weight(Eigen::VectorXd values, double residual) : values_(std::move(values)), residual_(residual) {
  if (values_.size() == 0) throw ValidationError("weight must have at least one coordinate");
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_(i)) || values_(i) <= 0.0) {
      throw ValidationError("weight coordinate " + std::to_string(i) + " is not strictly positive");
    }
  }
  if (std::abs(values_.sum() - 1.0) > 1e-10) {
    throw ValidationError("weight must sum to one");
  }
}

Weight Weight::uniform(std::size_t n) {
  return Weight(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n)));
}

Weight compute_weight(const Generator& gen, const WeightOptions& options) {
  const Eigen::MatrixXd& a = gen.matrix();
  const Eigen::Index n = a.rows();
  if (n == 0) throw DimensionError("compute_weight: empty generator");

  require_strong_connectivity(analyze_graph(a, options.tolerance_zero));

  // The normalisation row is scaled like A so the least-squares problem is
  // balanced; the system is consistent so this does not change the solution.
  const double scale = gen.norm_inf() > 0.0 ? gen.norm_inf() : 1.0;
  Eigen::MatrixXd bordered(n + 1, n);
  bordered.topRows(n) = a.transpose();
  bordered.row(n).setConstant(scale);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 1);
  rhs(n) = scale;

  Eigen::VectorXd v;
  switch (options.solver) {
    case QrVariant::kHouseholder:
      v = bordered.householderQr().solve(rhs);
      break;
    case QrVariant::kColumnPivoting:
      v = bordered.colPivHouseholderQr().solve(rhs);
      break;
    case QrVariant::kFullPivoting:
      v = bordered.fullPivHouseholderQr().solve(rhs);
      break;
  }
  if (!v.allFinite()) throw NumericalError("compute_weight: bordered solve produced non-finite values");
  v /= v.sum();

  const double floor = options.positivity_floor * v.maxCoeff();
  Eigen::Index worst = 0;
  const double vmin = v.minCoeff(&worst);
  if (!(vmin > floor)) {
    std::ostringstream os;
    os << "compute_weight: coordinate " << worst << " = " << vmin << " is below the positivity floor " << floor
       << " (near-disconnection or solver failure)";
    throw NumericalDegeneracy(os.str());
  }

  const double residual = (a.transpose() * v).norm();
  if (residual > 1e-10 * a.norm() * v.norm()) {
    std::ostringstream os;
    os << "compute_weight: residual ||A^T v|| = " << residual << " exceeds 1e-10 ||A|| ||v||";
    throw NumericalError(os.str());
  }
  return Weight(std::move(v), residual);
}

HomotopyPath weight_homotopy_path(const InteractionMatrix& sigma, std::size_t grid_size,
                                  const WeightOptions& options) {
  if (grid_size < 2) throw PreconditionError("weight_homotopy_path: grid_size must be at least 2");
  require_strong_connectivity(analyze_graph(sigma.entries(), options.tolerance_zero));

  const Eigen::Index n = static_cast<Eigen::Index>(sigma.size());
  const double top = sigma.entries().maxCoeff();
  const Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(n, n, top);

  HomotopyPath path;
  path.lambda_grid.reserve(grid_size);
  path.weights.reserve(grid_size);
  path.min_coordinate.reserve(grid_size);
  for (std::size_t k = 0; k < grid_size; ++k) {
    const double lambda = static_cast<double>(k) / static_cast<double>(grid_size - 1);
    const InteractionMatrix blended(lambda * sigma.entries() + (1.0 - lambda) * constant);
    try {
      Weight w = compute_weight(Generator(blended), options);
      path.lambda_grid.push_back(lambda);
      path.min_coordinate.push_back(w.min());
      path.weights.push_back(std::move(w));
    } catch (const NumericalDegeneracy& e) {
      throw NumericalDegeneracy(std::string(e.what()) + " [homotopy lambda = " + std::to_string(lambda) + "]");
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " [homotopy lambda = " + std::to_string(lambda) + "]");
    }
  }
  return path;
}

double weighted_inner(const State& y, const State& z, const Weight& v) {
  require_same_size(y, v, "weighted_inner");
  require_same_size(z, v, "weighted_inner");
  return (v.values().array() * y.array() * z.array()).sum();
}

double weighted_mean(const State& y, const Weight& v) {
  require_same_size(y, v, "weighted_mean");
  return v.values().dot(y);
}

State project_pi(const State& y, const Weight& v) {
  require_same_size(y, v, "project_pi");
  return y.array() - v.values().dot(y);
}

double weighted_variance(const State& y, const Weight& v) {
  require_same_size(y, v, "weighted_variance");
  const double mean = v.values().dot(y);
  return (v.values().array() * (y.array() - mean).square()).sum();
}

}  // namespace consensus
