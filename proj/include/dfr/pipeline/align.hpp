#pragma once

// Rigid pre-alignment of input shapes. `pca` is a data-free stand-in for a learned
// orientation regressor; `rotation_file` undoes a supplied rotation R.

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

#include "dfr/common/error.hpp"
#include "dfr/geometry/area.hpp"
#include "dfr/geometry/io.hpp"
#include "dfr/geometry/mesh.hpp"

namespace dfr {

enum class AlignMode { none, rotation_file, pca };

inline const char* align_mode_name(AlignMode m) {
  switch (m) {
    case AlignMode::none: return "none";
    case AlignMode::rotation_file: return "rotation_file";
    case AlignMode::pca: return "pca";
  }
  return "none";
}

inline AlignMode parse_align_mode(const std::string& s) {
  if (s == "none") return AlignMode::none;
  if (s == "rotation_file") return AlignMode::rotation_file;
  if (s == "pca") return AlignMode::pca;
  throw InputError("unknown alignment mode '" + s + "' (expected none, rotation_file or pca)");
}

// aligned = rotation * (p - center)
struct Alignment {
  Points points;
  Mat3 rotation = Mat3::Identity();
  Vec3 center = Vec3::Zero();
  AlignMode mode = AlignMode::none;
};

inline void check_rotation(const Mat3& R, double tol = 1e-6) {
  const double orth = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = R.determinant();
  if (!(orth <= tol) || !(std::abs(det - 1.0) <= tol))
    throw InputError("rotation is not orthogonal with det +1 (max |RtR - I| = " + std::to_string(orth) +
                     ", det = " + std::to_string(det) + ")");
}

// Nine numbers, row-major, whitespace separated; '#' comments allowed.
inline Mat3 read_rotation_file(const std::string& path) {
  const std::string text = io_detail::read_file(path);
  io_detail::LineTokens lines(text, path);
  std::vector<std::string_view> tok;
  std::vector<double> vals;
  while (lines.next(tok))
    for (auto t : tok) {
      if (vals.size() == 9) throw ParseError(path, lines.where(), "more than nine rotation entries");
      vals.push_back(io_detail::parse_double(t, path, lines.line()));
    }
  if (vals.size() != 9)
    throw ParseError(path, "line " + std::to_string(lines.line()), "expected nine rotation entries");
  Mat3 R;
  for (int i = 0; i < 9; ++i) R(i / 3, i % 3) = vals[i];
  check_rotation(R);
  return R;
}

inline void write_rotation_file(const std::string& path, const Mat3& R) {
  std::string out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (c) out += ' ';
      io_detail::append_number(out, R(r, c));
    }
    out += '\n';
  }
  io_detail::write_text(path, out);
}

namespace align_detail {

// Principal axes as rows, by decreasing variance. Axes 1 and 2 get the sign that
// makes the third central moment of their coordinate non-negative; axis 3 is
// their cross product so the result stays a rotation.
inline Mat3 pca_rotation(const Points& centered) {
  const Mat3 cov = centered.transpose() * centered / static_cast<double>(centered.rows());
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  if (es.info() != Eigen::Success) throw NumericalError("PCA eigen-decomposition failed");
  Mat3 R;
  for (int a = 0; a < 2; ++a) {
    Vec3 axis = es.eigenvectors().col(2 - a);
    const Eigen::VectorXd coord = centered * axis;
    if (coord.array().cube().sum() < 0.0) axis = -axis;
    R.row(a) = axis.transpose();
  }
  R.row(2) = R.row(0).cross(R.row(1));
  return R;
}

}  // namespace align_detail

inline Alignment align_points(const Points& p, AlignMode mode, const Mat3* rotation = nullptr) {
  if (p.rows() == 0) throw InputError("cannot align an empty shape");
  Alignment a;
  a.mode = mode;
  a.center = centroid(p);
  Points centered = p.rowwise() - a.center.transpose();
  switch (mode) {
    case AlignMode::none:
      break;
    case AlignMode::rotation_file:
      if (!rotation) throw InputError("rotation_file alignment needs a rotation");
      check_rotation(*rotation);
      a.rotation = rotation->transpose();
      break;
    case AlignMode::pca:
      a.rotation = align_detail::pca_rotation(centered);
      break;
  }
  a.points = centered * a.rotation.transpose();
  return a;
}

inline TriMesh align_input(const TriMesh& m, AlignMode mode, const Mat3* rotation = nullptr,
                           Alignment* info = nullptr) {
  Alignment a = align_points(m.vertices(), mode, rotation);
  TriMesh out = m.with_vertices(a.points);
  if (info) *info = std::move(a);
  return out;
}

inline PointCloud align_input(const PointCloud& c, AlignMode mode, const Mat3* rotation = nullptr,
                              Alignment* info = nullptr) {
  Alignment a = align_points(c.points(), mode, rotation);
  PointCloud out(a.points, c.name());
  if (info) *info = std::move(a);
  return out;
}

}  // namespace dfr
