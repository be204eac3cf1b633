#include "consensus/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "consensus/graph.hpp"

namespace consensus {

std::vector<std::complex<double>> dense_eigenvalues(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw DimensionError("dense_eigenvalues: matrix must be square");
  if (m.rows() == 0) return {};
  Eigen::EigenSolver<Eigen::MatrixXd> solver(m, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) {
    std::ostringstream os;
    os << "dense_eigenvalues: Hessenberg QR iteration did not converge for a " << m.rows() << "x" << m.cols()
       << " matrix (||M||_F = " << m.norm() << ")";
    throw NumericalError(os.str());
  }
  const Eigen::VectorXcd& ev = solver.eigenvalues();
  std::vector<std::complex<double>> out(ev.data(), ev.data() + ev.size());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() > b.imag();
  });
  return out;
}

double spectral_abscissa(const Eigen::MatrixXd& m) {
  const auto ev = dense_eigenvalues(m);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& z : ev) best = std::max(best, z.real());
  return best;
}

SpectralReport full_spectrum(const Generator& gen, const SpectralOptions& options) {
  if (gen.size() < 2) throw PreconditionError("full_spectrum: at least two agents are required");
  require_strong_connectivity(analyze_graph(gen.matrix(), options.tolerance_zero));

  SpectralReport report;
  report.eigenvalues = dense_eigenvalues(gen.matrix());

  const double norm = gen.norm_inf();
  const double zero_tol = options.zero_tolerance * norm;
  std::size_t candidates = 0;
  double closest = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < report.eigenvalues.size(); ++k) {
    const double mag = std::abs(report.eigenvalues[k]);
    if (mag <= zero_tol) ++candidates;
    if (mag < closest) {
      closest = mag;
      report.zero_index = k;
    }
  }
  if (candidates != 1) {
    std::ostringstream os;
    os << "full_spectrum: expected one eigenvalue within " << zero_tol << " of zero, found " << candidates
       << " (closest |lambda| = " << closest << "); the system is effectively disconnected or ill-conditioned";
    throw NumericalError(os.str());
  }

  report.spectral_bound_A2 = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < report.eigenvalues.size(); ++k) {
    if (k == report.zero_index) continue;
    const auto& z = report.eigenvalues[k];
    // Prefer the member of a conjugate pair with nonnegative imaginary part.
    if (z.real() > report.spectral_bound_A2 ||
        (z.real() == report.spectral_bound_A2 && z.imag() > report.lambda2.imag())) {
      report.spectral_bound_A2 = z.real();
      report.lambda2 = z;
    }
  }
  if (!(report.spectral_bound_A2 < 0.0)) {
    std::ostringstream os;
    os << "full_spectrum: nonzero eigenvalue " << report.lambda2 << " has nonnegative real part";
    throw NumericalError(os.str());
  }

  const Eigen::VectorXd& radii = gen.row_sums();
  const double slack = options.gershgorin_slack * std::max(norm, 1.0);
  report.gershgorin_ok = std::all_of(report.eigenvalues.begin(), report.eigenvalues.end(), [&](const auto& mu) {
    for (Eigen::Index i = 0; i < radii.size(); ++i) {
      if (std::abs(mu + radii(i)) <= radii(i) + slack) return true;
    }
    return false;
  });

  if (gen.symmetric()) report.fiedler = std::abs(report.spectral_bound_A2);
  return report;
}

Eigen::VectorXd RestrictedOperator::coordinates(const State& y) const {
  if (y.size() != basis.rows()) throw DimensionError("RestrictedOperator::coordinates: dimension mismatch");
  return basis.transpose() * weights.cwiseProduct(y);
}

State RestrictedOperator::lift(const Eigen::VectorXd& coords) const {
  if (coords.size() != basis.cols()) throw DimensionError("RestrictedOperator::lift: dimension mismatch");
  return basis * coords;
}

namespace {

double orthogonality_loss(const Eigen::MatrixXd& basis, const Eigen::VectorXd& v) {
  const Eigen::Index m = basis.cols();
  const Eigen::MatrixXd gram = basis.transpose() * v.asDiagonal() * basis;
  double loss = (gram - Eigen::MatrixXd::Identity(m, m)).cwiseAbs().maxCoeff();
  loss = std::max(loss, (basis.transpose() * v).cwiseAbs().maxCoeff());
  return loss;
}

// One modified Gram-Schmidt sweep in the v-inner product, keeping every
// column v-orthogonal to e.
void mgs_sweep(Eigen::MatrixXd& basis, const Eigen::VectorXd& v) {
  for (Eigen::Index k = 0; k < basis.cols(); ++k) {
    auto col = basis.col(k);
    col.array() -= v.dot(col);
    for (Eigen::Index l = 0; l < k; ++l) {
      const double c = basis.col(l).dot(v.cwiseProduct(col));
      col -= c * basis.col(l);
    }
    const double nrm = std::sqrt(col.dot(v.cwiseProduct(col)));
    if (!(nrm > 0.0)) throw NumericalError("restrict_A2: Gram-Schmidt produced a null vector");
    col /= nrm;
  }
}

}  // namespace

RestrictedOperator restrict_A2(const Generator& gen, const Weight& v) {
  const Eigen::Index n = static_cast<Eigen::Index>(gen.size());
  if (static_cast<std::size_t>(n) != v.size()) throw DimensionError("restrict_A2: weight/generator size mismatch");
  if (n < 2) throw PreconditionError("restrict_A2: at least two agents are required");

  const Eigen::VectorXd& w = v.values();
  // delta_i - v_i e for i < n-1; these span the v-orthogonal complement of e.
  Eigen::MatrixXd basis = Eigen::MatrixXd::Identity(n, n - 1);
  basis.rowwise() -= w.head(n - 1).transpose();

  mgs_sweep(basis, w);
  mgs_sweep(basis, w);
  double loss = orthogonality_loss(basis, w);
  if (loss > 1e-10) {
    mgs_sweep(basis, w);
    loss = orthogonality_loss(basis, w);
    if (loss > 1e-8) {
      std::ostringstream os;
      os << "restrict_A2: v-orthogonality lost (" << loss << ") after re-orthogonalisation";
      throw NumericalError(os.str());
    }
  }

  RestrictedOperator out;
  out.A2 = basis.transpose() * w.asDiagonal() * gen.matrix() * basis;
  out.basis = std::move(basis);
  out.weights = w;
  return out;
}

double dissipation_Q(const State& y, const Generator& gen, const Weight& v) {
  const Eigen::Index n = static_cast<Eigen::Index>(gen.size());
  if (y.size() != n || static_cast<Eigen::Index>(v.size()) != n) {
    throw DimensionError("dissipation_Q: dimension mismatch");
  }
  const Eigen::MatrixXd& a = gen.matrix();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = y(i) - y(j);
      row += a(i, j) * d * d;
    }
    sum += v[static_cast<std::size_t>(i)] * row;
  }
  return -0.5 * sum;
}

namespace {

Eigen::MatrixXd lyapunov_kronecker(const Eigen::MatrixXd& a2) {
  const Eigen::Index m = a2.rows();
  const Eigen::Index mm = m * m;
  // Column-major vec: vec(P A) = (A^T (x) I) vec P, vec(A^T P) = (I (x) A^T) vec P.
  Eigen::MatrixXd system = Eigen::MatrixXd::Zero(mm, mm);
  for (Eigen::Index q = 0; q < m; ++q) {
    for (Eigen::Index p = 0; p < m; ++p) {
      for (Eigen::Index r = 0; r < m; ++r) system(q * m + r, p * m + r) += a2(p, q);
    }
  }
  for (Eigen::Index blk = 0; blk < m; ++blk) {
    system.block(blk * m, blk * m, m, m) += a2.transpose();
  }
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(mm);
  for (Eigen::Index k = 0; k < m; ++k) rhs(k * m + k) = -1.0;
  const Eigen::VectorXd x = system.partialPivLu().solve(rhs);
  return Eigen::Map<const Eigen::MatrixXd>(x.data(), m, m);
}

Eigen::MatrixXd lyapunov_schur(const Eigen::MatrixXd& a2) {
  const Eigen::Index m = a2.rows();
  Eigen::ComplexSchur<Eigen::MatrixXd> schur(a2);
  if (schur.info() != Eigen::Success) throw NumericalError("solve_lyapunov: Schur decomposition did not converge");
  const Eigen::MatrixXcd& t = schur.matrixT();
  const Eigen::MatrixXcd& u = schur.matrixU();

  // X T + T^* X = -I with X = U^* P U, solved column by column.
  Eigen::MatrixXcd x = Eigen::MatrixXcd::Zero(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      std::complex<double> acc = (i == j) ? -1.0 : 0.0;
      for (Eigen::Index k = 0; k < j; ++k) acc -= x(i, k) * t(k, j);
      for (Eigen::Index k = 0; k < i; ++k) acc -= std::conj(t(k, i)) * x(k, j);
      x(i, j) = acc / (t(j, j) + std::conj(t(i, i)));
    }
  }
  return (u * x * u.adjoint()).real();
}

}  // namespace

LyapunovCertificate solve_lyapunov(const Eigen::MatrixXd& a2, LyapunovMethod method) {
  if (a2.rows() != a2.cols()) throw DimensionError("solve_lyapunov: A2 must be square");
  if (a2.rows() == 0) throw PreconditionError("solve_lyapunov: A2 is empty");
  const double abscissa = spectral_abscissa(a2);
  if (!(abscissa < 0.0)) {
    std::ostringstream os;
    os << "solve_lyapunov: A2 is not Hurwitz (spectral abscissa " << abscissa << ")";
    throw PreconditionError(os.str());
  }

  if (method == LyapunovMethod::kAuto) {
    method = a2.rows() <= kKroneckerLimit ? LyapunovMethod::kKronecker : LyapunovMethod::kSchur;
  }
  Eigen::MatrixXd p = method == LyapunovMethod::kKronecker ? lyapunov_kronecker(a2) : lyapunov_schur(a2);
  p = 0.5 * (p + p.transpose()).eval();

  LyapunovCertificate cert;
  const Eigen::Index m = a2.rows();
  cert.residual = (p * a2 + a2.transpose() * p + Eigen::MatrixXd::Identity(m, m)).norm();
  if (!p.allFinite() || cert.residual > 1e-8 * p.norm()) {
    std::ostringstream os;
    os << "solve_lyapunov: residual " << cert.residual << " exceeds 1e-8 ||P|| = " << 1e-8 * p.norm();
    throw NumericalError(os.str());
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(p, Eigen::EigenvaluesOnly);
  cert.min_eig_P = eig.eigenvalues().minCoeff();
  cert.lambda_max = eig.eigenvalues().maxCoeff();
  if (!(cert.min_eig_P > 0.0)) throw NumericalError("solve_lyapunov: P is not positive definite");
  cert.P = std::move(p);
  return cert;
}

LyapunovCertificate solve_lyapunov(const RestrictedOperator& restricted, LyapunovMethod method) {
  return solve_lyapunov(restricted.A2, method);
}

double variance_P(const Eigen::VectorXd& z, const LyapunovCertificate& cert) {
  if (z.size() != cert.P.rows()) throw DimensionError("variance_P: dimension mismatch");
  return z.dot(cert.P * z);
}

}  // namespace consensus
