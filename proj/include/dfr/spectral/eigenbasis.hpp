#pragma once

// Laplace-Beltrami eigenbasis: smallest generalized eigenpairs of L phi = lambda M phi.

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "dfr/common/binary_io.hpp"
#include "dfr/common/error.hpp"
#include "dfr/spectral/laplacian.hpp"

namespace dfr {

struct SpectralBasis {
  Eigen::MatrixXd phi;        // n x k, mass-orthonormal columns
  Eigen::VectorXd eigenvalues;  // k, ascending
  Eigen::VectorXd mass;       // n, lumped

  int k() const { return static_cast<int>(phi.cols()); }
  int n() const { return static_cast<int>(phi.rows()); }

  // Phi^T M, the mass-weighted left inverse of Phi.
  Eigen::MatrixXd pseudo_inverse() const { return phi.transpose() * mass.asDiagonal(); }

  void save(const std::string& path) const;
  static SpectralBasis load(const std::string& path);
};

struct EigenOptions {
  int dense_limit = 3000;        // n above this uses shift-invert subspace iteration
  double tolerance = 1e-10;      // relative residual target for the iterative path
  int max_iterations = 500;
  std::uint64_t seed = 0x5eed;
};

namespace spectral_detail {

// Largest-magnitude entry positive; ties keep the smaller index.
inline void fix_signs(Eigen::MatrixXd& phi) {
  for (Eigen::Index c = 0; c < phi.cols(); ++c) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (Eigen::Index r = 0; r < phi.rows(); ++r) {
      const double a = std::abs(phi(r, c));
      if (a > best_abs) {
        best_abs = a;
        best = r;
      }
    }
    if (phi(best, c) < 0.0) phi.col(c) *= -1.0;
  }
}

// Replace the null-space block with mass-normalized component indicators.
inline void set_component_indicators(Eigen::MatrixXd& phi, const Eigen::VectorXd& mass,
                                     const std::vector<int>& labels, int components) {
  if (components <= 1 || labels.size() != static_cast<std::size_t>(phi.rows())) return;
  const int count = std::min<int>(components, static_cast<int>(phi.cols()));
  for (int c = 0; c < count; ++c) {
    Eigen::VectorXd ind = Eigen::VectorXd::Zero(phi.rows());
    double total = 0.0;
    for (Eigen::Index r = 0; r < phi.rows(); ++r)
      if (labels[static_cast<std::size_t>(r)] == c) {
        ind[r] = 1.0;
        total += mass[r];
      }
    phi.col(c) = ind / std::sqrt(total);
  }
}

inline void dense_solve(const Laplacian& lap, int k, Eigen::MatrixXd& phi, Eigen::VectorXd& evals) {
  const Eigen::VectorXd inv_sqrt = lap.mass.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd A = inv_sqrt.asDiagonal() * Eigen::MatrixXd(lap.stiffness) * inv_sqrt.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (A + A.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("dense eigensolver failed to converge");
  evals = es.eigenvalues().head(k);
  phi = inv_sqrt.asDiagonal() * es.eigenvectors().leftCols(k);
}

// M-orthonormalize the columns of Y; drops numerically dependent directions.
// Householder QR on M^(1/2) Y avoids squaring the condition number.
inline Eigen::MatrixXd mass_orthonormalize(const Eigen::MatrixXd& Y, const Eigen::VectorXd& mass) {
  const Eigen::VectorXd root = mass.cwiseSqrt();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(root.asDiagonal() * Y);
  qr.setThreshold(1e-13);
  const Eigen::Index keep = qr.rank();
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(Y.rows(), keep);
  return root.cwiseInverse().asDiagonal() * Q;
}

inline void iterative_solve(const Laplacian& lap, int k, const EigenOptions& opts, Eigen::MatrixXd& phi,
                            Eigen::VectorXd& evals) {
  const Eigen::Index n = lap.stiffness.rows();
  const Eigen::Index p = std::min<Eigen::Index>(n, std::max(2 * k, k + 8));
  const SparseMatrix& L = lap.stiffness;
  const Eigen::VectorXd& m = lap.mass;

  // Small positive shift makes L + sigma M definite; eigenvectors are unchanged.
  double scale = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) scale += L.coeff(i, i) / m[i];
  scale /= static_cast<double>(n);
  const double sigma = 1e-8 * std::max(scale, 1e-300);
  SparseMatrix shifted = L;
  for (Eigen::Index i = 0; i < n; ++i) shifted.coeffRef(i, i) += sigma * m[i];
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(shifted);
  if (ldlt.info() != Eigen::Success) throw NumericalError("shift-invert factorization failed");

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> gauss;
  Eigen::MatrixXd X(n, p);
  for (Eigen::Index c = 0; c < p; ++c)
    for (Eigen::Index r = 0; r < n; ++r) X(r, c) = gauss(rng);
  X = mass_orthonormalize(X, m);

  Eigen::VectorXd residuals(k);
  for (int it = 0; it < opts.max_iterations; ++it) {
    Eigen::MatrixXd Y = ldlt.solve(m.asDiagonal() * X);
    Y = mass_orthonormalize(Y, m);
    const Eigen::MatrixXd LY = L * Y;
    const Eigen::MatrixXd Ar = Y.transpose() * LY;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (Ar + Ar.transpose()));
    X = Y * es.eigenvectors();
    const Eigen::VectorXd theta = es.eigenvalues();
    if (X.cols() < k) throw NumericalError("subspace collapsed below requested basis size");

    const Eigen::MatrixXd LX = LY * es.eigenvectors();
    const double lmax = std::max(std::abs(theta[k - 1]), 1e-300);
    bool converged = true;
    for (int i = 0; i < k; ++i) {
      const Eigen::VectorXd r = LX.col(i) - theta[i] * (m.asDiagonal() * X.col(i));
      const double denom = std::max(LX.col(i).norm(), lmax * (m.asDiagonal() * X.col(i)).norm());
      residuals[i] = r.norm() / denom;
      converged = converged && residuals[i] <= opts.tolerance;
    }
    if (converged) {
      evals = theta.head(k);
      phi = X.leftCols(k);
      return;
    }
  }
  std::ostringstream msg;
  msg << "eigenbasis: subspace iteration did not converge in " << opts.max_iterations
      << " iterations; relative residuals:";
  for (int i = 0; i < k; ++i) msg << ' ' << residuals[i];
  throw NumericalError(msg.str());
}

}  // namespace spectral_detail

inline SpectralBasis eigenbasis(const Laplacian& lap, int k, const EigenOptions& opts = {}) {
  const int n = static_cast<int>(lap.stiffness.rows());
  if (k < 1 || k > n)
    throw InputError("eigenbasis: k=" + std::to_string(k) + " must be in [1, n=" + std::to_string(n) + "]");
  SpectralBasis basis;
  basis.mass = lap.mass;
  if (n <= opts.dense_limit)
    spectral_detail::dense_solve(lap, k, basis.phi, basis.eigenvalues);
  else
    spectral_detail::iterative_solve(lap, k, opts, basis.phi, basis.eigenvalues);
  basis.eigenvalues = basis.eigenvalues.cwiseMax(0.0);
  spectral_detail::set_component_indicators(basis.phi, basis.mass, lap.component_labels, lap.num_components);
  spectral_detail::fix_signs(basis.phi);
  return basis;
}

// Phi^T M f: spectral coefficients of the columns of f.
inline Eigen::MatrixXd project(const SpectralBasis& basis, const Eigen::MatrixXd& f) {
  if (f.rows() != basis.n())
    throw InputError("project: function has " + std::to_string(f.rows()) + " rows, basis has " +
                     std::to_string(basis.n()));
  return basis.phi.transpose() * (basis.mass.asDiagonal() * f);
}

inline void SpectralBasis::save(const std::string& path) const {
  binary::Writer w(path);
  w.magic("DFRB");
  w.put<std::uint32_t>(1);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(n()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(k()));
  w.put_array(eigenvalues.data(), static_cast<std::size_t>(k()));
  w.put_array(mass.data(), static_cast<std::size_t>(n()));
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = phi;
  w.put_array(rm.data(), static_cast<std::size_t>(rm.size()));
  w.finish();
}

inline SpectralBasis SpectralBasis::load(const std::string& path) {
  binary::Reader r(path);
  r.expect_magic("DFRB");
  const auto version = r.get<std::uint32_t>();
  if (version != 1) throw ParseError(path, "byte 4", "unsupported DFRB version " + std::to_string(version));
  const auto n = r.get<std::uint64_t>();
  const auto k = r.get<std::uint64_t>();
  if (r.remaining() != (k + n + n * k) * sizeof(double))
    throw ParseError(path, "byte 24", "payload size does not match header");
  SpectralBasis b;
  b.eigenvalues.resize(static_cast<Eigen::Index>(k));
  b.mass.resize(static_cast<Eigen::Index>(n));
  r.get_array(b.eigenvalues.data(), k);
  r.get_array(b.mass.data(), n);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(n, k);
  r.get_array(rm.data(), n * k);
  b.phi = rm;
  return b;
}

}  // namespace dfr
