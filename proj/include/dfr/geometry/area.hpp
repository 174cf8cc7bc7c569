#pragma once

#include <cmath>
#include <variant>

#include "dfr/common/error.hpp"
#include "dfr/geometry/mesh.hpp"

namespace dfr {

struct AreaReport {
  double area = 0.0;
  bool degenerate = false;  // every face has zero area
};

inline double face_area(const TriMesh& m, Eigen::Index f) {
  const auto& v = m.vertices();
  const auto& F = m.faces();
  const Vec3 a = v.row(F(f, 0)), b = v.row(F(f, 1)), c = v.row(F(f, 2));
  return 0.5 * (b - a).cross(c - a).norm();
}

inline AreaReport surface_area_report(const TriMesh& m) {
  AreaReport r;
  for (Eigen::Index f = 0; f < m.faces().rows(); ++f) r.area += face_area(m, f);
  r.degenerate = !(r.area > 0.0);
  return r;
}

inline double surface_area(const TriMesh& m) { return surface_area_report(m).area; }

inline Vec3 centroid(const Points& p) { return p.colwise().mean().transpose(); }

// x' = scale * x + offset
struct Similarity {
  double scale = 1.0;
  Vec3 offset = Vec3::Zero();

  Points apply(const Points& p) const {
    Points out = p * scale;
    out.rowwise() += offset.transpose();
    return out;
  }
  Similarity inverse() const { return {1.0 / scale, -offset / scale}; }
};

enum class NormalizeMode { center, center_unit_area };

template <typename Shape>
struct Normalized {
  Shape shape;
  Similarity transform;
};

inline Normalized<TriMesh> normalize_shape(const TriMesh& m, NormalizeMode mode) {
  Similarity t;
  if (mode == NormalizeMode::center_unit_area) {
    const auto rep = surface_area_report(m);
    if (rep.degenerate) throw NumericalError("cannot scale mesh '" + m.name() + "' to unit area: zero area");
    t.scale = 1.0 / std::sqrt(rep.area);
  }
  t.offset = -t.scale * centroid(m.vertices());
  return {m.with_vertices(t.apply(m.vertices())), t};
}

inline Normalized<PointCloud> normalize_shape(const PointCloud& c, NormalizeMode mode) {
  if (mode == NormalizeMode::center_unit_area)
    throw InputError("center_unit_area normalization needs a mesh; '" + c.name() + "' is a point cloud");
  Similarity t;
  t.offset = -centroid(c.points());
  return {PointCloud(t.apply(c.points()), c.name()), t};
}

}  // namespace dfr
