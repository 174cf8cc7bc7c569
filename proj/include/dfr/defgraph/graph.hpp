#pragma once

// Embedded deformation graph: nodes from a decimated copy of the source, node
// adjacency from the decimated mesh edges, and per-vertex skinning to the K
// nearest nodes.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dfr/common/binary_io.hpp"
#include "dfr/common/error.hpp"
#include "dfr/common/log.hpp"
#include "dfr/defgraph/qslim.hpp"
#include "dfr/defgraph/rotation.hpp"
#include "dfr/geometry/kdtree.hpp"
#include "dfr/geometry/mesh.hpp"

namespace dfr {

using SkinIndices = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct DeformGraph {
  Points nodes;                              // rest positions g, H x 3
  std::vector<std::vector<int>> neighbors;   // psi(h), sorted, symmetric
  SkinIndices skin_index;                    // N x K
  RowMatrix skin_weight;                     // N x K, rows sum to 1

  int num_nodes() const { return static_cast<int>(nodes.rows()); }
  int num_vertices() const { return static_cast<int>(skin_index.rows()); }
  int k() const { return static_cast<int>(skin_index.cols()); }

  void save(const std::string& path) const;
  static DeformGraph load(const std::string& path);
};

// X = {Theta, Delta}; flattened as [theta_0 .. theta_{H-1}, delta_0 .. delta_{H-1}].
struct GraphState {
  Points theta;  // axis-angle per node (radians)
  Points delta;  // translation per node

  static GraphState identity(int nodes) {
    return {Points::Zero(nodes, 3), Points::Zero(nodes, 3)};
  }

  int num_nodes() const { return static_cast<int>(theta.rows()); }

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd x(6 * theta.rows());
    x.head(3 * theta.rows()) = Eigen::Map<const Eigen::VectorXd>(theta.data(), theta.size());
    x.tail(3 * delta.rows()) = Eigen::Map<const Eigen::VectorXd>(delta.data(), delta.size());
    return x;
  }

  static GraphState unflatten(const Eigen::VectorXd& x) {
    const Eigen::Index h = x.size() / 6;
    GraphState s{Points(h, 3), Points(h, 3)};
    Eigen::Map<Eigen::VectorXd>(s.theta.data(), 3 * h) = x.head(3 * h);
    Eigen::Map<Eigen::VectorXd>(s.delta.data(), 3 * h) = x.tail(3 * h);
    return s;
  }

  // Keep every |theta_h| in [0, pi].
  void wrap() {
    for (Eigen::Index h = 0; h < theta.rows(); ++h) theta.row(h) = wrap_axis_angle(theta.row(h).transpose());
  }

  std::vector<Mat3> rotations() const {
    std::vector<Mat3> r(static_cast<std::size_t>(theta.rows()));
    for (Eigen::Index h = 0; h < theta.rows(); ++h) r[h] = rodrigues(theta.row(h).transpose());
    return r;
  }
};

// Skinning weights w_h ~ (1 - d_h / d_ref)^2 over the K nearest nodes, where d_ref
// is the distance to the next-nearest node.
inline void compute_skinning(const Points& vertices, const Points& nodes, int K, SkinIndices& index,
                             RowMatrix& weight) {
  const int H = static_cast<int>(nodes.rows());
  const int N = static_cast<int>(vertices.rows());
  index = SkinIndices::Zero(N, K);
  weight = RowMatrix::Zero(N, K);
  const KdTree tree(nodes);
  const int query = std::min(K + 1, H);
  const int bound = query == K + 1 ? K : H - 1;
  if (bound < K)
    log::warn("build_graph: only " + std::to_string(H) + " nodes; binding each vertex to " +
              std::to_string(bound) + " instead of " + std::to_string(K));
  for (int i = 0; i < N; ++i) {
    const Vec3 v = vertices.row(i).transpose();
    const auto nn = tree.k_nearest(v.data(), query);
    const double d_ref = std::sqrt(nn[bound].sq_distance);
    for (int s = 0; s < bound; ++s) index(i, s) = nn[s].index;
    if (!(d_ref > 0.0)) {
      weight(i, 0) = 1.0;  // coincident with its node
      continue;
    }
    double total = 0.0;
    for (int s = 0; s < bound; ++s) {
      const double t = 1.0 - std::sqrt(nn[s].sq_distance) / d_ref;
      weight(i, s) = t * t;
      total += weight(i, s);
    }
    if (total > 0.0) {
      weight.row(i).head(bound) /= total;
    } else {
      weight.row(i).head(bound).setConstant(1.0 / bound);  // all equidistant with the reference
    }
  }
}

struct GraphOptions {
  DecimateOptions decimate;
};

inline DeformGraph build_graph(const TriMesh& mesh, int H, int K = 4, const GraphOptions& opts = {}) {
  if (H < 4) throw InputError("build_graph: node count " + std::to_string(H) + " < 4");
  if (H > mesh.num_vertices())
    throw InputError("build_graph: node count " + std::to_string(H) + " exceeds vertex count " +
                     std::to_string(mesh.num_vertices()));
  if (K < 1) throw InputError("build_graph: K must be >= 1");
  DeformGraph g;
  if (H == mesh.num_vertices()) {
    g.nodes = mesh.vertices();
    g.neighbors = mesh.adjacency();
  } else {
    const auto dec = qslim_decimate(mesh, H, opts.decimate);
    g.nodes = dec.mesh.vertices();
    g.neighbors = dec.mesh.adjacency();
  }
  compute_skinning(mesh.vertices(), g.nodes, K, g.skin_index, g.skin_weight);
  return g;
}

// v'_i = sum_h w_ih [R(theta_h)(v_i - g_h) + g_h + delta_h], always from the rest pose.
// Evaluated as v_i plus the weighted displacement (weights sum to 1), which keeps
// the identity state exact.
inline Points apply_rotations(const DeformGraph& graph, const std::vector<Mat3>& R, const GraphState& state,
                              const Points& rest) {
  Points out(rest.rows(), 3);
  for (Eigen::Index i = 0; i < rest.rows(); ++i) {
    const Vec3 v = rest.row(i).transpose();
    Vec3 disp = Vec3::Zero();
    for (int s = 0; s < graph.k(); ++s) {
      const double w = graph.skin_weight(i, s);
      if (w == 0.0) continue;
      const int h = graph.skin_index(i, s);
      const Vec3 g = graph.nodes.row(h).transpose();
      disp += w * ((R[h] - Mat3::Identity()) * (v - g) + state.delta.row(h).transpose());
    }
    out.row(i) = (v + disp).transpose();
  }
  return out;
}

inline Points apply(const DeformGraph& graph, const GraphState& state, const Points& rest) {
  if (rest.rows() != graph.num_vertices() || state.num_nodes() != graph.num_nodes())
    throw InputError("apply: size mismatch between graph, state and rest vertices");
  return apply_rotations(graph, state.rotations(), state, rest);
}

// State encoding one global rigid motion x -> R x + t on every node.
inline GraphState rigid_state(const DeformGraph& graph, const Mat3& R, const Vec3& t) {
  GraphState s = GraphState::identity(graph.num_nodes());
  const Vec3 theta = rotation_log(R);
  for (int h = 0; h < graph.num_nodes(); ++h) {
    const Vec3 g = graph.nodes.row(h).transpose();
    s.theta.row(h) = theta.transpose();
    s.delta.row(h) = (R * g + t - g).transpose();
  }
  return s;
}

inline void DeformGraph::save(const std::string& path) const {
  binary::Writer w(path);
  w.magic("DFRD");
  w.put<std::uint32_t>(1);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(num_nodes()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(k()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(num_vertices()));
  w.put_array(nodes.data(), static_cast<std::size_t>(nodes.size()));
  std::uint64_t offset = 0;
  w.put<std::uint64_t>(offset);
  for (const auto& n : neighbors) {
    offset += n.size();
    w.put<std::uint64_t>(offset);
  }
  for (const auto& n : neighbors)
    for (int j : n) w.put<std::uint32_t>(static_cast<std::uint32_t>(j));
  for (Eigen::Index i = 0; i < skin_index.size(); ++i)
    w.put<std::uint32_t>(static_cast<std::uint32_t>(skin_index.data()[i]));
  w.put_array(skin_weight.data(), static_cast<std::size_t>(skin_weight.size()));
  w.finish();
}

inline DeformGraph DeformGraph::load(const std::string& path) {
  binary::Reader r(path);
  r.expect_magic("DFRD");
  const auto version = r.get<std::uint32_t>();
  if (version != 1) throw ParseError(path, "byte 4", "unsupported DFRD version " + std::to_string(version));
  const auto H = r.get<std::uint64_t>();
  const auto K = r.get<std::uint64_t>();
  const auto N = r.get<std::uint64_t>();
  DeformGraph g;
  g.nodes.resize(static_cast<Eigen::Index>(H), 3);
  r.get_array(g.nodes.data(), H * 3);
  std::vector<std::uint64_t> offsets(H + 1);
  r.get_array(offsets.data(), H + 1);
  g.neighbors.resize(H);
  for (std::uint64_t h = 0; h < H; ++h) {
    if (offsets[h + 1] < offsets[h]) throw ParseError(path, "byte " + std::to_string(r.offset()), "bad offsets");
    for (std::uint64_t e = offsets[h]; e < offsets[h + 1]; ++e) {
      const auto j = r.get<std::uint32_t>();
      if (j >= H) throw ParseError(path, "byte " + std::to_string(r.offset()), "neighbor index out of range");
      g.neighbors[h].push_back(static_cast<int>(j));
    }
  }
  g.skin_index.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(K));
  for (Eigen::Index i = 0; i < g.skin_index.size(); ++i) {
    const auto j = r.get<std::uint32_t>();
    if (j >= H) throw ParseError(path, "byte " + std::to_string(r.offset()), "skin index out of range");
    g.skin_index.data()[i] = static_cast<int>(j);
  }
  g.skin_weight.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(K));
  r.get_array(g.skin_weight.data(), N * K);
  return g;
}

}  // namespace dfr
