#pragma once

#include <complex>
#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "consensus/operator.hpp"

namespace consensus {

struct SpectralReport {
  std::vector<std::complex<double>> eigenvalues;
  std::size_t zero_index = 0;
  // s(A2) = max Re over the spectrum with the simple zero removed.
  double spectral_bound_A2 = 0.0;
  std::complex<double> lambda2;
  // |Re lambda2|, only when sigma is symmetric.
  std::optional<double> fiedler;
  bool gershgorin_ok = false;
};

struct SpectralOptions {
  // Relative to ||A||_inf.
  double zero_tolerance = 1e-8;
  double gershgorin_slack = 1e-10;
  double tolerance_zero = 0.0;
};

SpectralReport full_spectrum(const Generator& gen, const SpectralOptions& options = {});

// Eigenvalues of an arbitrary dense real matrix (Hessenberg + shifted QR).
// Throws NumericalError when the iteration does not converge.
std::vector<std::complex<double>> dense_eigenvalues(const Eigen::MatrixXd& m);

// Largest real part of the spectrum.
double spectral_abscissa(const Eigen::MatrixXd& m);

// A restricted to im A, written in a v-orthonormal basis of im A.
struct RestrictedOperator {
  Eigen::MatrixXd basis;  // n x (n-1), columns v-orthonormal, <b_k, e>_v = 0
  Eigen::MatrixXd A2;     // (n-1) x (n-1)
  Eigen::VectorXd weights;

  // Coordinates of pi y in the basis, c_k = <b_k, y>_v.
  Eigen::VectorXd coordinates(const State& y) const;
  State lift(const Eigen::VectorXd& coords) const;
};

RestrictedOperator restrict_A2(const Generator& gen, const Weight& v);

// Q(y) = -1/2 sum_ij v_i sigma_ij (y_i - y_j)^2, equal to <y, A y>_v.
double dissipation_Q(const State& y, const Generator& gen, const Weight& v);

struct LyapunovCertificate {
  Eigen::MatrixXd P;
  double residual = 0.0;  // ||P A2 + A2^T P + I||_F
  double min_eig_P = 0.0;
  double lambda_max = 0.0;
};

enum class LyapunovMethod {
  kAuto,       // Kronecker up to kKroneckerLimit unknowns per side, Schur above
  kKronecker,  // dense (m^2 x m^2) vectorised system
  kSchur,      // complex Schur form + triangular back-substitution
};

inline constexpr Eigen::Index kKroneckerLimit = 30;

// Solves P A2 + A2^T P = -I for a Hurwitz A2.
// Throws PreconditionError (not Hurwitz) or NumericalError (residual).
LyapunovCertificate solve_lyapunov(const Eigen::MatrixXd& A2, LyapunovMethod method = LyapunovMethod::kAuto);
LyapunovCertificate solve_lyapunov(const RestrictedOperator& restricted,
                                   LyapunovMethod method = LyapunovMethod::kAuto);

// <z, P z> for z in restricted coordinates.
double variance_P(const Eigen::VectorXd& z, const LyapunovCertificate& cert);

}  // namespace consensus
