#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dfr/common/error.hpp"
#include "dfr/common/log.hpp"

namespace dfr {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

using Edge = std::pair<int, int>;  // (smaller, larger) vertex index

namespace detail {

inline int find_root(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

}  // namespace detail

// Triangle mesh. Immutable once constructed; construction enforces face validity,
// drops unreferenced vertices and records the connected-component structure.
class TriMesh {
 public:
  TriMesh() = default;

  TriMesh(Points vertices, Faces faces, std::string name = {})
      : vertices_(std::move(vertices)), faces_(std::move(faces)), name_(std::move(name)) {
    validate_and_compact();
  }

  const Points& vertices() const { return vertices_; }
  const Faces& faces() const { return faces_; }
  const std::string& name() const { return name_; }
  int num_vertices() const { return static_cast<int>(vertices_.rows()); }
  int num_faces() const { return static_cast<int>(faces_.rows()); }

  // Number of edge-connected components.
  int num_components() const { return num_components_; }
  // Component label per vertex, labels ordered by smallest member vertex.
  const std::vector<int>& component_labels() const { return component_; }

  // If unreferenced vertices were dropped: original (file) index of each kept vertex.
  // Empty when nothing was dropped.
  const std::vector<int>& original_indices() const { return original_index_; }

  // Sorted unique undirected edges.
  const std::vector<Edge>& edges() const { return edges_; }

  // Vertex adjacency (sorted neighbor lists).
  std::vector<std::vector<int>> adjacency() const {
    std::vector<std::vector<int>> adj(num_vertices());
    for (auto [a, b] : edges_) {
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    for (auto& n : adj) std::sort(n.begin(), n.end());
    return adj;
  }

  // Same connectivity, new positions (row count must match).
  TriMesh with_vertices(Points v) const {
    if (v.rows() != vertices_.rows()) throw InputError("with_vertices: vertex count mismatch");
    TriMesh m = *this;
    m.vertices_ = std::move(v);
    return m;
  }

 private:
  void validate_and_compact() {
    const Eigen::Index n = vertices_.rows();
    if (faces_.rows() < 1) throw InputError("mesh '" + name_ + "' has no faces");
    if (!vertices_.allFinite()) throw InputError("mesh '" + name_ + "' has non-finite coordinates");
    std::vector<char> used(static_cast<std::size_t>(n), 0);
    for (Eigen::Index f = 0; f < faces_.rows(); ++f) {
      for (int c = 0; c < 3; ++c) {
        const int idx = faces_(f, c);
        if (idx < 0 || idx >= n)
          throw InputError("face " + std::to_string(f) + " index " + std::to_string(idx) +
                           " out of range (" + std::to_string(n) + " vertices)");
        used[idx] = 1;
      }
      if (faces_(f, 0) == faces_(f, 1) || faces_(f, 1) == faces_(f, 2) || faces_(f, 0) == faces_(f, 2))
        throw InputError("face " + std::to_string(f) + " repeats a vertex index");
    }

    const auto kept = std::count(used.begin(), used.end(), 1);
    if (kept != n) {
      log::warn("mesh '" + name_ + "': dropped " + std::to_string(n - kept) + " isolated vertices");
      std::vector<int> remap(static_cast<std::size_t>(n), -1);
      Points compact(kept, 3);
      original_index_.reserve(static_cast<std::size_t>(kept));
      int next = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!used[i]) continue;
        remap[i] = next;
        compact.row(next) = vertices_.row(i);
        original_index_.push_back(static_cast<int>(i));
        ++next;
      }
      for (Eigen::Index f = 0; f < faces_.rows(); ++f)
        for (int c = 0; c < 3; ++c) faces_(f, c) = remap[faces_(f, c)];
      vertices_ = std::move(compact);
    }

    edges_.reserve(static_cast<std::size_t>(faces_.rows()) * 3);
    for (Eigen::Index f = 0; f < faces_.rows(); ++f) {
      for (int c = 0; c < 3; ++c) {
        int a = faces_(f, c), b = faces_(f, (c + 1) % 3);
        if (a > b) std::swap(a, b);
        edges_.emplace_back(a, b);
      }
    }
    std::sort(edges_.begin(), edges_.end());
    edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());

    const int nv = num_vertices();
    std::vector<int> parent(nv);
    std::iota(parent.begin(), parent.end(), 0);
    for (auto [a, b] : edges_) {
      const int ra = detail::find_root(parent, a), rb = detail::find_root(parent, b);
      if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
    }
    component_.assign(nv, -1);
    std::vector<int> label_of_root(nv, -1);
    num_components_ = 0;
    for (int i = 0; i < nv; ++i) {
      const int r = detail::find_root(parent, i);
      if (label_of_root[r] < 0) label_of_root[r] = num_components_++;
      component_[i] = label_of_root[r];
    }
  }

  Points vertices_;
  Faces faces_;
  std::string name_;
  std::vector<Edge> edges_;
  std::vector<int> component_;
  std::vector<int> original_index_;
  int num_components_ = 0;
};

// Unstructured target shape.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(Points points, std::string name = {})
      : points_(std::move(points)), name_(std::move(name)) {
    if (points_.rows() < 1) throw InputError("point cloud '" + name_ + "' is empty");
    if (!points_.allFinite()) throw InputError("point cloud '" + name_ + "' has non-finite coordinates");
  }

  const Points& points() const { return points_; }
  const std::string& name() const { return name_; }
  int size() const { return static_cast<int>(points_.rows()); }

 private:
  Points points_;
  std::string name_;
};

inline PointCloud as_point_cloud(const TriMesh& m) { return PointCloud(m.vertices(), m.name()); }

}  // namespace dfr
