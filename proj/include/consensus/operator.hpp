#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "consensus/errors.hpp"

namespace consensus {

using State = Eigen::VectorXd;

// Nonnegative pairwise interaction frequencies sigma(i, j) (units 1/time).
// The diagonal never influences the dynamics and is zeroed on construction.
class InteractionMatrix {
 public:
  InteractionMatrix() = default;
  // Throws DimensionError (non-square) or ValidationError (non-finite or
  // negative off-diagonal entry).
  explicit InteractionMatrix(Eigen::MatrixXd entries);

  std::size_t size() const noexcept { return static_cast<std::size_t>(entries_.rows()); }
  const Eigen::MatrixXd& entries() const noexcept { return entries_; }
  double operator()(std::size_t i, std::size_t j) const {
    return entries_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  bool is_symmetric() const;

 private:
  Eigen::MatrixXd entries_;
};

// A = sigma - diag(sigma e). Rows sum to zero, off-diagonal entries are
// nonnegative.
class Generator {
 public:
  explicit Generator(const InteractionMatrix& sigma);

  std::size_t size() const noexcept { return static_cast<std::size_t>(matrix_.rows()); }
  const Eigen::MatrixXd& matrix() const noexcept { return matrix_; }
  // S_i = sum_{j != i} sigma_ij, the Gershgorin radii.
  const Eigen::VectorXd& row_sums() const noexcept { return row_sums_; }
  // Off-diagonal part of A, i.e. the interaction matrix it came from.
  Eigen::MatrixXd interactions() const;
  bool symmetric() const noexcept { return symmetric_; }
  // Infinity norm, equal to 2 max_i S_i.
  double norm_inf() const noexcept { return norm_inf_; }

 private:
  Eigen::MatrixXd matrix_;
  Eigen::VectorXd row_sums_;
  bool symmetric_ = false;
  double norm_inf_ = 0.0;
};

Generator assemble_generator(const InteractionMatrix& sigma);

// Positive left null vector of A normalised to sum one.
class Weight {
 public:
  // Validates v > 0 and |sum v - 1| <= 1e-10.
  explicit Weight(Eigen::VectorXd values, double residual = 0.0);

  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }
  const Eigen::VectorXd& values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_(static_cast<Eigen::Index>(i)); }
  // ||A^T v||_2 as measured after the solve.
  double residual() const noexcept { return residual_; }
  double min() const { return values_.minCoeff(); }
  double max() const { return values_.maxCoeff(); }

  static Weight uniform(std::size_t n);

 private:
  Eigen::VectorXd values_;
  double residual_ = 0.0;
};

enum class QrVariant { kHouseholder, kColumnPivoting, kFullPivoting };

struct WeightOptions {
  QrVariant solver = QrVariant::kColumnPivoting;
  // Coordinates at or below floor * max(v) are declared degenerate.
  double positivity_floor = 1e-12;
  double tolerance_zero = 0.0;
};

// Solves the bordered system [A^T; e^T] v = [0; 1] in the least-squares sense.
// Throws NotStronglyConnected or NumericalDegeneracy.
Weight compute_weight(const Generator& gen, const WeightOptions& options = {});

struct HomotopyPath {
  std::vector<double> lambda_grid;
  std::vector<Weight> weights;
  std::vector<double> min_coordinate;
};

// Weights along sigma_l = l sigma + (1 - l) M, M the constant matrix holding
// max sigma_ij, on a uniform grid of l in [0, 1].
HomotopyPath weight_homotopy_path(const InteractionMatrix& sigma, std::size_t grid_size = 101,
                                  const WeightOptions& options = {});

double weighted_inner(const State& y, const State& z, const Weight& v);

// <y, v>, the conserved consensus value.
double weighted_mean(const State& y, const Weight& v);

// pi y = y - <y, e>_v e, the v-orthogonal projection onto im A.
State project_pi(const State& y, const Weight& v);

// sum_i v_i (y_i - <y, e>_v)^2
double weighted_variance(const State& y, const Weight& v);

}  // namespace consensus
