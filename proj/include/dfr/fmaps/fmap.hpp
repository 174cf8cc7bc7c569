#pragma once

// Functional-map estimation and the spectral diagnostics computed on supplied
// feature matrices (no network in the loop).

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dfr/common/error.hpp"
#include "dfr/fmaps/features.hpp"
#include "dfr/geometry/kdtree.hpp"
#include "dfr/spectral/eigenbasis.hpp"

namespace dfr {

enum class MapDirection { forward, backward };  // forward: shape 1 -> shape 2

struct FunctionalMap {
  Eigen::MatrixXd C;  // basis-1 coefficients -> basis-2 coefficients
  MapDirection direction = MapDirection::forward;
};

// argmin_C ||C A1 - A2||_F^2 + reg * sum_pq ((evals2_p - evals1_q) C_pq)^2, row by row.
inline FunctionalMap solve_fmap(const Eigen::MatrixXd& A1, const Eigen::MatrixXd& A2, double reg,
                                const Eigen::VectorXd& evals1, const Eigen::VectorXd& evals2,
                                MapDirection direction = MapDirection::forward) {
  if (reg < 0.0) throw InputError("solve_fmap: regularization weight must be >= 0");
  if (A1.cols() != A2.cols())
    throw InputError("solve_fmap: descriptor counts differ (" + std::to_string(A1.cols()) + " vs " +
                     std::to_string(A2.cols()) + ")");
  const Eigen::Index k1 = A1.rows(), k2 = A2.rows();
  if (evals1.size() != k1 || evals2.size() != k2) throw InputError("solve_fmap: eigenvalue count mismatch");

  const Eigen::MatrixXd gram = A1 * A1.transpose();
  const Eigen::MatrixXd rhs = A2 * A1.transpose();  // row p: a2_p A1^T
  FunctionalMap out{Eigen::MatrixXd(k2, k1), direction};
  for (Eigen::Index p = 0; p < k2; ++p) {
    Eigen::MatrixXd S = gram;
    for (Eigen::Index q = 0; q < k1; ++q) {
      const double mu = evals2[p] - evals1[q];
      S(q, q) += reg * mu * mu;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    const Eigen::VectorXd D = ldlt.vectorD();
    const double scale = std::max(D.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    if (ldlt.info() != Eigen::Success || D.minCoeff() <= 1e-13 * scale)
      throw NumericalError("solve_fmap: normal matrix for row " + std::to_string(p) +
                           " is singular; use a regularization weight > 0 or more descriptors");
    out.C.row(p) = ldlt.solve(rhs.row(p).transpose()).transpose();
  }
  return out;
}

// Row-stochastic soft map Pi(i, j) = exp(-alpha * |F1_i - F2_j|) / sum_j'(...),
// materialized one row at a time.
class SoftMap {
 public:
  SoftMap(const FeatureMatrix& from, const FeatureMatrix& to, double alpha)
      : from_(&from), to_(&to), alpha_(alpha) {
    if (!(alpha > 0.0)) throw InputError("soft_map: temperature alpha must be > 0");
    if (from.dim() != to.dim())
      throw InputError("soft_map: feature dimensions differ (" + std::to_string(from.dim()) + " vs " +
                       std::to_string(to.dim()) + ")");
  }

  int rows() const { return from_->rows(); }
  int cols() const { return to_->rows(); }
  double alpha() const { return alpha_; }

  Eigen::VectorXd row(int i) const {
    const auto& a = from_->values();
    const auto& b = to_->values();
    Eigen::VectorXd dist(cols());
    for (int j = 0; j < cols(); ++j) dist[j] = std::sqrt(squared_distance(a.row(i).data(), b, j));
    const double dmin = dist.minCoeff();
    Eigen::VectorXd w = (-alpha_ * (dist.array() - dmin)).exp();
    return w / w.sum();
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd out(rows(), cols());
    for (int i = 0; i < rows(); ++i) out.row(i) = row(i).transpose();
    return out;
  }

 private:
  const FeatureMatrix* from_;
  const FeatureMatrix* to_;
  double alpha_;
};

inline SoftMap soft_map(const FeatureMatrix& from, const FeatureMatrix& to, double alpha) {
  return SoftMap(from, to, alpha);
}

// row_basis^dagger * Pi * col_basis.phi, with Pi streamed by rows.
inline Eigen::MatrixXd spectral_pullback(const SoftMap& pi, const SpectralBasis& row_basis,
                                         const SpectralBasis& col_basis) {
  if (pi.rows() != row_basis.n() || pi.cols() != col_basis.n())
    throw InputError("spectral_pullback: soft map is " + std::to_string(pi.rows()) + "x" +
                     std::to_string(pi.cols()) + ", bases have " + std::to_string(row_basis.n()) + " and " +
                     std::to_string(col_basis.n()) + " points");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(row_basis.k(), col_basis.k());
  for (int i = 0; i < pi.rows(); ++i) {
    const Eigen::RowVectorXd transported = pi.row(i).transpose() * col_basis.phi;
    out.noalias() += (row_basis.mass[i] * row_basis.phi.row(i).transpose()) * transported;
  }
  return out;
}

struct DfmWeights {
  double bij = 1.0;
  double orth = 1.0;
  double align = 1e-4;
};

struct FmapLosses {
  double bij = 0.0;    // ||C12 C21 - I||_F^2
  double ortho = 0.0;  // ||C12 C12^T - I||_F + ||C21 C21^T - I||_F
  double ortho_12 = 0.0, ortho_21 = 0.0;
  double align = 0.0;     // unsquared: ||C12 - P12||_F + ||C21 - P21||_F
  double align_sq = 0.0;  // squared Frobenius variant, used in the combined value
  double dfm = 0.0;       // bij*E_bij + orth*E_ortho + align*E_align(squared)
};

inline FmapLosses fmap_losses(const Eigen::MatrixXd& C12, const Eigen::MatrixXd& C21, const SoftMap& pi12,
                              const SoftMap& pi21, const SpectralBasis& basis1, const SpectralBasis& basis2,
                              const DfmWeights& w = {}) {
  const Eigen::Index k = C12.rows();
  if (C12.cols() != k || C21.rows() != k || C21.cols() != k)
    throw InputError("fmap_losses: functional maps must be square and equally sized");
  if (basis1.k() != k || basis2.k() != k) throw InputError("fmap_losses: basis size differs from map size");

  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
  FmapLosses out;
  out.bij = (C12 * C21 - I).squaredNorm();
  out.ortho_12 = (C12 * C12.transpose() - I).norm();
  out.ortho_21 = (C21 * C21.transpose() - I).norm();
  out.ortho = out.ortho_12 + out.ortho_21;

  const Eigen::MatrixXd P12 = spectral_pullback(pi21, basis2, basis1);  // Phi2^+ Pi21 Phi1
  const Eigen::MatrixXd P21 = spectral_pullback(pi12, basis1, basis2);  // Phi1^+ Pi12 Phi2
  const double r12 = (C12 - P12).squaredNorm(), r21 = (C21 - P21).squaredNorm();
  out.align_sq = r12 + r21;
  out.align = std::sqrt(r12) + std::sqrt(r21);
  out.dfm = w.bij * out.bij + w.orth * out.ortho + w.align * out.align_sq;
  return out;
}

// Contrastive alignment of F against G on one shape (positive pairs on the diagonal).
inline double nce_loss(const FeatureMatrix& F, const FeatureMatrix& G, double gamma) {
  if (!(gamma > 0.0)) throw InputError("nce_loss: temperature gamma must be > 0");
  if (F.rows() != G.rows() || F.dim() != G.dim()) throw InputError("nce_loss: feature shapes differ");
  const Eigen::MatrixXd logits = (F.values() * G.values().transpose()) / gamma;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    loss -= logits(i, i) - lse;
  }
  return loss;
}

// Spectral nearest neighbour: T(i) = argmin_j |(Phi1 C12^T)(i,:) - Phi2(j,:)|.
inline std::vector<int> fmap_to_pointmap(const Eigen::MatrixXd& C12, const Eigen::MatrixXd& phi1,
                                         const Eigen::MatrixXd& phi2) {
  if (C12.cols() != phi1.cols() || C12.rows() != phi2.cols())
    throw InputError("fmap_to_pointmap: map is " + std::to_string(C12.rows()) + "x" +
                     std::to_string(C12.cols()) + " but bases have " + std::to_string(phi1.cols()) + " and " +
                     std::to_string(phi2.cols()) + " columns");
  const RowMatrix emb1 = phi1 * C12.transpose();
  const KdTree tree(phi2);
  return tree.nearest_rows(emb1);
}

}  // namespace dfr
