#pragma once

// Quadric error metric edge-collapse decimation.
//
// Each collapse merges the larger-index endpoint into the smaller one and places
// the survivor at the minimizer of the summed quadric (pseudo-inverse solve, so
// flat and straight regions get the minimizer nearest the edge midpoint). Open
// boundaries carry an extra perpendicular-plane quadric. Collapses that would
// break the link condition, pinch a boundary, or fold a face are skipped.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <queue>
#include <random>
#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "dfr/common/error.hpp"
#include "dfr/common/log.hpp"
#include "dfr/geometry/mesh.hpp"

namespace dfr {

struct DecimateOptions {
  double boundary_weight = 1000.0;
  // Collapse edges in a seeded random order instead of by cost (baseline for comparisons).
  std::optional<std::uint64_t> random_order_seed;
};

struct DecimateResult {
  TriMesh mesh;
  std::vector<int> survivors;   // per decimated vertex: original vertex index
  std::vector<int> vertex_map;  // per original vertex: decimated vertex it merged into
  int achieved = 0;
  bool stalled = false;         // target not reachable with valid collapses
  double total_error = 0.0;     // sum of quadric costs of performed collapses
};

namespace qslim_detail {

using Mat4 = Eigen::Matrix4d;
using Vec4 = Eigen::Vector4d;

class Decimator {
 public:
  Decimator(const TriMesh& mesh, const DecimateOptions& opts) : opts_(opts) {
    const int n = mesh.num_vertices();
    pos_.resize(n);
    for (int i = 0; i < n; ++i) pos_[i] = mesh.vertices().row(i).transpose();
    quadric_.assign(n, Mat4::Zero());
    alive_.assign(n, 1);
    version_.assign(n, 0);
    merged_into_.resize(n);
    for (int i = 0; i < n; ++i) merged_into_[i] = i;
    vert_faces_.resize(n);
    faces_.resize(mesh.num_faces());
    face_alive_.assign(mesh.num_faces(), 1);
    for (int f = 0; f < mesh.num_faces(); ++f) {
      faces_[f] = {mesh.faces()(f, 0), mesh.faces()(f, 1), mesh.faces()(f, 2)};
      for (int c = 0; c < 3; ++c) vert_faces_[faces_[f][c]].push_back(f);
    }
    alive_count_ = n;
    init_quadrics();
  }

  int alive_count() const { return alive_count_; }
  double total_error() const { return total_error_; }

  void run_greedy(int target) {
    using Entry = std::tuple<double, int, int, int, int>;  // cost, a, b, version a, version b
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    auto push = [&](int a, int b) {
      if (a > b) std::swap(a, b);
      heap.emplace(placement(a, b).second, a, b, version_[a], version_[b]);
    };
    // Rejected candidates are only retried when an endpoint changes, so rebuild the
    // heap from scratch while passes keep making progress.
    while (alive_count_ > target) {
      const int before = alive_count_;
      for (int a = 0; a < static_cast<int>(pos_.size()); ++a)
        if (alive_[a])
          for (int b : neighbors(a))
            if (a < b) push(a, b);
      while (alive_count_ > target && !heap.empty()) {
        auto [cost, a, b, va, vb] = heap.top();
        heap.pop();
        if (!alive_[a] || !alive_[b] || version_[a] != va || version_[b] != vb) continue;
        const auto [target_pos, c] = placement(a, b);
        if (!collapse_allowed(a, b, target_pos)) continue;
        collapse(a, b, target_pos, c);
        for (int w : neighbors(a)) push(a, w);
      }
      heap = {};
      if (alive_count_ == before) break;
    }
  }

  void run_random(int target, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    while (alive_count_ > target) {
      std::vector<std::pair<int, int>> edges;
      for (int a = 0; a < static_cast<int>(pos_.size()); ++a)
        if (alive_[a])
          for (int b : neighbors(a))
            if (a < b) edges.emplace_back(a, b);
      std::shuffle(edges.begin(), edges.end(), rng);
      bool done = false;
      for (auto [a, b] : edges) {
        const auto [p, c] = placement(a, b);
        if (!collapse_allowed(a, b, p)) continue;
        collapse(a, b, p, c);
        done = true;
        break;
      }
      if (!done) break;
    }
  }

  DecimateResult result(const std::string& name) const {
    DecimateResult r;
    const int n = static_cast<int>(pos_.size());
    std::vector<int> new_index(n, -1);
    for (int i = 0; i < n; ++i)
      if (alive_[i]) {
        new_index[i] = static_cast<int>(r.survivors.size());
        r.survivors.push_back(i);
      }
    Points V(static_cast<Eigen::Index>(r.survivors.size()), 3);
    for (std::size_t i = 0; i < r.survivors.size(); ++i) V.row(static_cast<Eigen::Index>(i)) = pos_[r.survivors[i]];
    std::vector<std::array<int, 3>> kept;
    for (std::size_t f = 0; f < faces_.size(); ++f)
      if (face_alive_[f]) kept.push_back(faces_[f]);
    Faces F(static_cast<Eigen::Index>(kept.size()), 3);
    for (std::size_t f = 0; f < kept.size(); ++f)
      for (int c = 0; c < 3; ++c) F(static_cast<Eigen::Index>(f), c) = new_index[kept[f][c]];
    r.mesh = TriMesh(std::move(V), std::move(F), name);
    r.vertex_map.resize(n);
    for (int i = 0; i < n; ++i) r.vertex_map[i] = new_index[find(i)];
    r.achieved = static_cast<int>(r.survivors.size());
    r.total_error = total_error_;
    return r;
  }

 private:
  int find(int v) const {
    while (merged_into_[v] != v) v = merged_into_[v];
    return v;
  }

  static Vec4 plane_through(const Vec3& p, const Vec3& normal) {
    Vec4 q;
    q << normal, -normal.dot(p);
    return q;
  }

  void init_quadrics() {
    std::map<std::pair<int, int>, std::vector<int>> edge_faces;
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const auto& t = faces_[f];
      const Vec3 cross = (pos_[t[1]] - pos_[t[0]]).cross(pos_[t[2]] - pos_[t[0]]);
      const double area2 = cross.norm();
      for (int c = 0; c < 3; ++c) {
        auto e = std::minmax(t[c], t[(c + 1) % 3]);
        edge_faces[{e.first, e.second}].push_back(static_cast<int>(f));
      }
      if (!(area2 > 0.0)) continue;
      const Vec4 p = plane_through(pos_[t[0]], cross / area2);
      const Mat4 K = (0.5 * area2) * p * p.transpose();
      for (int c = 0; c < 3; ++c) quadric_[t[c]] += K;
    }
    for (const auto& [e, fs] : edge_faces) {
      if (fs.size() != 1) continue;
      const auto& t = faces_[fs[0]];
      const Vec3 a = pos_[e.first], b = pos_[e.second];
      const Vec3 fn = (pos_[t[1]] - pos_[t[0]]).cross(pos_[t[2]] - pos_[t[0]]);
      Vec3 n = (b - a).cross(fn);
      if (!(n.norm() > 0.0)) continue;
      n.normalize();
      const Vec4 p = plane_through(a, n);
      const Mat4 K = (opts_.boundary_weight * (b - a).squaredNorm()) * p * p.transpose();
      quadric_[e.first] += K;
      quadric_[e.second] += K;
      boundary_vertex_.insert(e.first);
      boundary_vertex_.insert(e.second);
    }
  }

  std::pair<Vec3, double> placement(int a, int b) const {
    const Mat4 Q = quadric_[a] + quadric_[b];
    const Mat3 A = Q.topLeftCorner<3, 3>();
    const Vec3 rhs = -Q.topRightCorner<3, 1>();
    const Vec3 mid = 0.5 * (pos_[a] + pos_[b]);
    Eigen::JacobiSVD<Mat3> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 s = svd.singularValues();
    Vec3 inv = Vec3::Zero();
    for (int i = 0; i < 3; ++i)
      if (s[i] > 1e-9 * s[0] && s[0] > 0.0) inv[i] = 1.0 / s[i];
    const Vec3 v = mid + svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * (rhs - A * mid);
    Vec4 h;
    h << v, 1.0;
    return {v, std::max(0.0, h.dot(Q * h))};
  }

  std::vector<int> neighbors(int v) const {
    std::vector<int> out;
    for (int f : vert_faces_[v]) {
      if (!face_alive_[f]) continue;
      for (int c : faces_[f])
        if (c != v) out.push_back(c);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  bool is_boundary_edge(int a, int b) const {
    int shared = 0;
    for (int f : vert_faces_[a])
      if (face_alive_[f] && std::find(faces_[f].begin(), faces_[f].end(), b) != faces_[f].end()) ++shared;
    return shared == 1;
  }

  bool collapse_allowed(int a, int b, const Vec3& target) const {
    const auto na = neighbors(a), nb = neighbors(b);
    std::vector<int> common;
    std::set_intersection(na.begin(), na.end(), nb.begin(), nb.end(), std::back_inserter(common));
    std::vector<int> opposite;
    for (int f : vert_faces_[a]) {
      if (!face_alive_[f]) continue;
      const auto& t = faces_[f];
      if (std::find(t.begin(), t.end(), b) == t.end()) continue;
      for (int c : t)
        if (c != a && c != b) opposite.push_back(c);
    }
    std::sort(opposite.begin(), opposite.end());
    if (common != opposite) return false;
    const bool ab_boundary = is_boundary_edge(a, b);
    if (!ab_boundary && boundary_vertex_.count(a) && boundary_vertex_.count(b)) return false;
    if (alive_count_ <= 4) return false;

    // No surviving face may flip or collapse to zero area.
    for (int v : {a, b}) {
      for (int f : vert_faces_[v]) {
        if (!face_alive_[f]) continue;
        const auto& t = faces_[f];
        const bool has_a = std::find(t.begin(), t.end(), a) != t.end();
        const bool has_b = std::find(t.begin(), t.end(), b) != t.end();
        if (has_a && has_b) continue;
        std::array<Vec3, 3> before, after;
        for (int c = 0; c < 3; ++c) {
          before[c] = pos_[t[c]];
          after[c] = (t[c] == a || t[c] == b) ? target : pos_[t[c]];
        }
        const Vec3 n0 = (before[1] - before[0]).cross(before[2] - before[0]);
        const Vec3 n1 = (after[1] - after[0]).cross(after[2] - after[0]);
        if (n1.norm() <= 1e-12 * std::max(n0.norm(), 1e-300)) return false;
        if (n0.dot(n1) <= 0.0) return false;
      }
    }
    return true;
  }

  void collapse(int a, int b, const Vec3& target, double cost) {
    for (int f : vert_faces_[b]) {
      if (!face_alive_[f]) continue;
      auto& t = faces_[f];
      if (std::find(t.begin(), t.end(), a) != t.end()) {
        face_alive_[f] = 0;
        continue;
      }
      for (auto& c : t)
        if (c == b) c = a;
      vert_faces_[a].push_back(f);
    }
    vert_faces_[b].clear();
    auto& fa = vert_faces_[a];
    fa.erase(std::remove_if(fa.begin(), fa.end(), [&](int f) { return !face_alive_[f]; }), fa.end());
    std::sort(fa.begin(), fa.end());
    fa.erase(std::unique(fa.begin(), fa.end()), fa.end());

    quadric_[a] += quadric_[b];
    pos_[a] = target;
    if (boundary_vertex_.count(b)) boundary_vertex_.insert(a);
    alive_[b] = 0;
    merged_into_[b] = a;
    ++version_[a];
    ++version_[b];
    --alive_count_;
    total_error_ += cost;
  }

  DecimateOptions opts_;
  std::vector<Vec3> pos_;
  std::vector<Mat4> quadric_;
  std::vector<char> alive_;
  std::vector<int> version_;
  std::vector<int> merged_into_;
  std::vector<std::array<int, 3>> faces_;
  std::vector<char> face_alive_;
  std::vector<std::vector<int>> vert_faces_;
  std::set<int> boundary_vertex_;
  int alive_count_ = 0;
  double total_error_ = 0.0;
};

}  // namespace qslim_detail

inline DecimateResult qslim_decimate(const TriMesh& mesh, int target, const DecimateOptions& opts = {}) {
  if (target < 4) throw InputError("qslim_decimate: target " + std::to_string(target) + " < 4");
  if (target > mesh.num_vertices())
    throw InputError("qslim_decimate: target " + std::to_string(target) + " exceeds vertex count " +
                     std::to_string(mesh.num_vertices()));
  qslim_detail::Decimator dec(mesh, opts);
  if (opts.random_order_seed)
    dec.run_random(target, *opts.random_order_seed);
  else
    dec.run_greedy(target);
  auto r = dec.result(mesh.name() + "_decimated");
  r.stalled = r.achieved > target;
  if (r.stalled)
    log::warn("qslim_decimate: stalled at " + std::to_string(r.achieved) + " vertices (target " +
              std::to_string(target) + ")");
  return r;
}

}  // namespace dfr
