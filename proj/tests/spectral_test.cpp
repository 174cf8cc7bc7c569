#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <random>

#include "dfr/geometry/area.hpp"
#include "dfr/spectral/eigenbasis.hpp"
#include "dfr/spectral/laplacian.hpp"
#include "support/shapes.hpp"

using namespace dfr;
using dfr::testing::make_mesh;

namespace {

// Generalized dense problem L x = lambda M x solved directly.
Eigen::VectorXd dense_oracle(const Laplacian& lap) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(lap.stiffness),
                                                               Eigen::MatrixXd(lap.mass.asDiagonal()));
  return es.eigenvalues();
}

double orthonormality_error(const SpectralBasis& b) {
  const Eigen::MatrixXd G = b.phi.transpose() * b.mass.asDiagonal() * b.phi;
  return (G - Eigen::MatrixXd::Identity(b.k(), b.k())).cwiseAbs().maxCoeff();
}

double max_residual(const Laplacian& lap, const SpectralBasis& b) {
  const Eigen::MatrixXd R = lap.stiffness * b.phi - b.mass.asDiagonal() * b.phi * b.eigenvalues.asDiagonal();
  return R.cwiseAbs().maxCoeff();
}

TriMesh unit_square() {
  return make_mesh({{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}}, {{0, 1, 2}, {0, 2, 3}}, "square");
}

}  // namespace

TEST(Laplacian, UnitSquareByHand) {
  const Laplacian lap = cotan_laplacian(unit_square());
  Eigen::Matrix4d expected;
  expected << 1, -0.5, 0, -0.5, -0.5, 1, -0.5, 0, 0, -0.5, 1, -0.5, -0.5, 0, -0.5, 1;
  EXPECT_LE((Eigen::MatrixXd(lap.stiffness) - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(lap.mass[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(lap.mass[1], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(lap.mass[2], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(lap.mass[3], 1.0 / 6.0, 1e-15);
}

TEST(Laplacian, SymmetricRowsSumToZeroMassIsArea) {
  const TriMesh m = dfr::testing::icosphere(2);
  const Laplacian lap = cotan_laplacian(m);
  const Eigen::MatrixXd L(lap.stiffness);
  EXPECT_LE((L - L.transpose()).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((L * Eigen::VectorXd::Ones(L.rows())).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(lap.mass.sum(), surface_area(m), 1e-12);
  EXPECT_EQ(lap.num_components, 1);
}

TEST(Laplacian, ObtuseClampRemovesNegativeWeights) {
  const TriMesh m = make_mesh({{0, 0, 0}, {2, 0, 0}, {1, 0.1, 0}, {1, -1, 0}}, {{0, 1, 2}, {0, 3, 1}}, "obtuse");
  const Eigen::MatrixXd raw(cotan_laplacian(m).stiffness);
  LaplacianOptions o;
  o.clamp_negative_weights = true;
  const Eigen::MatrixXd clamped(cotan_laplacian(m, o).stiffness);
  EXPECT_GT(raw(0, 1), 0.0);  // negative cotangent weight on the long edge
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      if (i != j) {
        EXPECT_LE(clamped(i, j), 0.0);
      }
    }
}

TEST(Eigenbasis, SingleFunctionIsConstant) {
  const TriMesh m = dfr::testing::octahedron();
  const Laplacian lap = cotan_laplacian(m);
  const SpectralBasis b = eigenbasis(lap, 1);
  ASSERT_EQ(b.k(), 1);
  const double c = 1.0 / std::sqrt(lap.mass.sum());
  for (int i = 0; i < b.n(); ++i) EXPECT_NEAR(b.phi(i, 0), c, 1e-12);
  EXPECT_LE(b.eigenvalues[0], 1e-8);
}

TEST(Eigenbasis, OctahedronMatchesOracle) {
  const Laplacian lap = cotan_laplacian(dfr::testing::octahedron());
  const SpectralBasis b = eigenbasis(lap, 6);
  const Eigen::VectorXd want = dense_oracle(lap);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(b.eigenvalues[i], std::max(0.0, want[i]), 1e-8);
  EXPECT_LE(orthonormality_error(b), 1e-6);
  EXPECT_LE(max_residual(lap, b), 1e-10);
  for (int i = 1; i < 6; ++i) EXPECT_GE(b.eigenvalues[i], b.eigenvalues[i - 1]);
}

TEST(Eigenbasis, RingSphereMatchesOracle) {
  const TriMesh m = dfr::testing::ring_sphere(20, 20);
  const Laplacian lap = cotan_laplacian(m);
  const SpectralBasis b = eigenbasis(lap, 30);
  const Eigen::VectorXd want = dense_oracle(lap);
  EXPECT_LE(b.eigenvalues[0], 1e-8);
  for (int i = 0; i < 30; ++i) EXPECT_NEAR(b.eigenvalues[i], std::max(0.0, want[i]), 1e-8) << i;
  EXPECT_LE(orthonormality_error(b), 1e-6);
  EXPECT_LE(max_residual(lap, b), 1e-9);
}

TEST(Eigenbasis, IterativePathAgreesWithDense) {
  const TriMesh m = dfr::testing::ring_sphere(20, 20);
  const Laplacian lap = cotan_laplacian(m);
  EigenOptions iterative;
  iterative.dense_limit = 0;
  const SpectralBasis it = eigenbasis(lap, 12, iterative);
  const SpectralBasis dn = eigenbasis(lap, 12);
  for (int i = 0; i < 12; ++i) EXPECT_NEAR(it.eigenvalues[i], dn.eigenvalues[i], 1e-8 * (1 + dn.eigenvalues[i]));
  EXPECT_LE(orthonormality_error(it), 1e-6);
  // Degenerate eigenspaces may rotate; compare the spanned subspaces.
  const Eigen::MatrixXd overlap = dn.phi.transpose() * dn.mass.asDiagonal() * it.phi;
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(overlap.leftCols(9).topRows(9));
  EXPECT_NEAR(svd.singularValues().minCoeff(), 1.0, 1e-6);
}

TEST(Eigenbasis, LargeMeshUsesIterativeSolver) {
  const TriMesh m = dfr::testing::ring_sphere(60, 60);
  ASSERT_GT(m.num_vertices(), 3000);
  const Laplacian lap = cotan_laplacian(m);
  const SpectralBasis b = eigenbasis(lap, 8);
  EXPECT_LE(orthonormality_error(b), 1e-6);
  EXPECT_LE(b.eigenvalues[0], 1e-8);
  const Eigen::MatrixXd R = lap.stiffness * b.phi - b.mass.asDiagonal() * b.phi * b.eigenvalues.asDiagonal();
  for (int i = 0; i < 8; ++i)
    EXPECT_LE(R.col(i).norm(), 1e-7 * std::max(1.0, (lap.stiffness * b.phi.col(i)).norm())) << i;
}

TEST(Eigenbasis, DisconnectedComponentsGetIndicators) {
  const TriMesh a = dfr::testing::icosphere(1);
  Points v(2 * a.num_vertices(), 3);
  v.topRows(a.num_vertices()) = a.vertices();
  v.bottomRows(a.num_vertices()) = a.vertices().rowwise() + Eigen::RowVector3d(5, 0, 0);
  Faces f(2 * a.num_faces(), 3);
  f.topRows(a.num_faces()) = a.faces();
  f.bottomRows(a.num_faces()) = a.faces().array() + a.num_vertices();
  const TriMesh two(v, f, "two");
  const Laplacian lap = cotan_laplacian(two);
  ASSERT_EQ(lap.num_components, 2);
  const SpectralBasis b = eigenbasis(lap, 4);
  EXPECT_LE(b.eigenvalues[0], 1e-8);
  EXPECT_LE(b.eigenvalues[1], 1e-8);
  EXPECT_GT(b.eigenvalues[2], 1e-3);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < b.n(); ++i) {
      const bool inside = lap.component_labels[i] == c;
      if (!inside) EXPECT_EQ(b.phi(i, c), 0.0);
      else EXPECT_GT(b.phi(i, c), 0.0);
    }
  EXPECT_LE(orthonormality_error(b), 1e-6);
}

TEST(Eigenbasis, RigidInvarianceAndScaling) {
  std::mt19937_64 rng(11);
  const TriMesh m = dfr::testing::icosphere(2);
  const SpectralBasis b = eigenbasis(cotan_laplacian(m), 10);
  const Mat3 R = dfr::testing::random_rotation(rng);
  const Points moved = (m.vertices() * R.transpose()).rowwise() + Eigen::RowVector3d(1, -2, 3);
  const SpectralBasis br = eigenbasis(cotan_laplacian(m.with_vertices(moved)), 10);
  const double s = 2.5;
  const SpectralBasis bs = eigenbasis(cotan_laplacian(m.with_vertices(s * m.vertices())), 10);
  for (int i = 0; i < 10; ++i) {
    EXPECT_NEAR(br.eigenvalues[i], b.eigenvalues[i], 1e-9 * (1 + b.eigenvalues[i]));
    EXPECT_NEAR(bs.eigenvalues[i], b.eigenvalues[i] / (s * s), 1e-9 * (1 + b.eigenvalues[i]));
  }
}

TEST(Eigenbasis, ProjectionIsIdempotentAndReconstructs) {
  std::mt19937_64 rng(2);
  const SpectralBasis b = eigenbasis(cotan_laplacian(dfr::testing::icosphere(1)), 8);
  Eigen::MatrixXd coeffs = Eigen::MatrixXd::Random(8, 3);
  const Eigen::MatrixXd f = b.phi * coeffs;
  EXPECT_LE((project(b, f) - coeffs).cwiseAbs().maxCoeff(), 1e-10);
  const Eigen::MatrixXd g = Eigen::MatrixXd::Random(b.n(), 2);
  const Eigen::MatrixXd once = b.phi * project(b, g);
  EXPECT_LE((b.phi * project(b, once) - once).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((b.pseudo_inverse() * b.phi - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_THROW(project(b, Eigen::MatrixXd::Zero(3, 1)), InputError);
}

TEST(Eigenbasis, SignConventionAndBadK) {
  const Laplacian lap = cotan_laplacian(dfr::testing::icosphere(1));
  const SpectralBasis b = eigenbasis(lap, 5);
  for (int c = 0; c < 5; ++c) {
    Eigen::Index r;
    b.phi.col(c).cwiseAbs().maxCoeff(&r);
    EXPECT_GT(b.phi(r, c), 0.0);
  }
  EXPECT_THROW(eigenbasis(lap, 0), InputError);
  EXPECT_THROW(eigenbasis(lap, lap.mass.size() + 1), InputError);
}
