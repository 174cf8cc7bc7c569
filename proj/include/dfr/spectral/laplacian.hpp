#pragma once

#include <Eigen/Sparse>

#include <cmath>
#include <string>
#include <vector>

#include "dfr/common/log.hpp"
#include "dfr/geometry/mesh.hpp"

namespace dfr {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct LaplacianOptions {
  // Clamp negative cotangent weights (obtuse triangles) to zero.
  bool clamp_negative_weights = false;
};

// Stiffness matrix L (positive semidefinite, L_ii = sum of edge weights, L_ij = -w_ij)
// and barycentric lumped mass.
struct Laplacian {
  SparseMatrix stiffness;
  Eigen::VectorXd mass;
  std::vector<int> component_labels;
  int num_components = 1;
  int degenerate_faces = 0;
};

inline Laplacian cotan_laplacian(const TriMesh& mesh, const LaplacianOptions& opts = {}) {
  const int n = mesh.num_vertices();
  const auto& V = mesh.vertices();
  const auto& F = mesh.faces();

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(F.rows()) * 12);
  Laplacian out;
  out.mass = Eigen::VectorXd::Zero(n);

  for (Eigen::Index f = 0; f < F.rows(); ++f) {
    const int idx[3] = {F(f, 0), F(f, 1), F(f, 2)};
    const Vec3 p[3] = {V.row(idx[0]), V.row(idx[1]), V.row(idx[2])};
    const double double_area = (p[1] - p[0]).cross(p[2] - p[0]).norm();
    if (!(double_area > 0.0)) {
      ++out.degenerate_faces;
      continue;
    }
    for (int c = 0; c < 3; ++c) out.mass[idx[c]] += double_area / 6.0;
    // Corner c is opposite edge (c+1, c+2).
    for (int c = 0; c < 3; ++c) {
      const int i = idx[(c + 1) % 3], j = idx[(c + 2) % 3];
      const Vec3 a = p[(c + 1) % 3] - p[c];
      const Vec3 b = p[(c + 2) % 3] - p[c];
      double w = 0.5 * a.dot(b) / double_area;
      if (opts.clamp_negative_weights && w < 0.0) w = 0.0;
      trips.emplace_back(i, j, -w);
      trips.emplace_back(j, i, -w);
      trips.emplace_back(i, i, w);
      trips.emplace_back(j, j, w);
    }
  }
  if (out.degenerate_faces > 0)
    log::warn("cotan_laplacian: " + std::to_string(out.degenerate_faces) +
              " zero-area faces contribute no weights");

  const double mean_mass = out.mass.sum() / std::max(1, n);
  int massless = 0;
  for (int i = 0; i < n; ++i)
    if (!(out.mass[i] > 0.0)) {
      out.mass[i] = 1e-12 * (mean_mass > 0.0 ? mean_mass : 1.0);
      ++massless;
    }
  if (massless > 0)
    log::warn("cotan_laplacian: " + std::to_string(massless) +
              " vertices touch only degenerate faces; mass floored");

  SparseMatrix L(n, n);
  L.setFromTriplets(trips.begin(), trips.end());
  SparseMatrix Lt = L.transpose();
  out.stiffness = 0.5 * (L + Lt);
  out.component_labels = mesh.component_labels();
  out.num_components = mesh.num_components();
  return out;
}

}  // namespace dfr
