#pragma once

// Registration energies and their analytic gradients:
//   E_corr  mean squared distance over filtered correspondences
//   E_cd    symmetric Chamfer distance
//   E_arap  deformation-graph rigidity with smooth-rotation term
//   E_total weighted sum, gradient with respect to the graph state

#include <Eigen/Core>

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dfr/common/error.hpp"
#include "dfr/defgraph/graph.hpp"
#include "dfr/defgraph/rotation.hpp"
#include "dfr/geometry/kdtree.hpp"
#include "dfr/registration/correspondence.hpp"

namespace dfr {

struct EnergyWeights {
  double cd = 0.0;
  double corr = 0.0;
  double arap = 0.0;
  double alpha_smooth = 0.2;

  void validate() const {
    if (cd < 0.0 || corr < 0.0 || arap < 0.0 || alpha_smooth < 0.0)
      throw InputError("energy weights must be non-negative");
    if (cd == 0.0 && corr == 0.0 && arap == 0.0) throw InputError("energy weights are all zero");
  }
};

struct VertexEnergy {
  double value = 0.0;
  Points gradient;  // N x 3
};

struct StateEnergy {
  double value = 0.0;
  Eigen::VectorXd gradient;  // 6H, GraphState::flatten layout
};

inline VertexEnergy e_corr(const Points& deformed, const Points& target,
                           const std::vector<CorrespondencePair>& corr) {
  if (corr.empty()) throw InputError("e_corr: empty correspondence set");
  VertexEnergy out{0.0, Points::Zero(deformed.rows(), 3)};
  const double inv = 1.0 / static_cast<double>(corr.size());
  for (const auto& [i, j] : corr) {
    if (i < 0 || i >= deformed.rows() || j < 0 || j >= target.rows())
      throw InputError("e_corr: correspondence (" + std::to_string(i) + ", " + std::to_string(j) +
                       ") out of range");
    const Eigen::RowVector3d d = deformed.row(i) - target.row(j);
    out.value += d.squaredNorm() * inv;
    out.gradient.row(i) += 2.0 * inv * d;
  }
  return out;
}

// Chamfer distance against a fixed target; the target index is built once.
// With stride > 1 only every stride-th source vertex takes part.
class ChamferTerm {
 public:
  explicit ChamferTerm(const Points& target, int stride = 1)
      : target_(target), tree_(target), stride_(std::max(1, stride)) {}

  VertexEnergy operator()(const Points& deformed) const {
    std::vector<int> active;
    for (Eigen::Index i = 0; i < deformed.rows(); i += stride_) active.push_back(static_cast<int>(i));
    Points sub(static_cast<Eigen::Index>(active.size()), 3);
    for (std::size_t s = 0; s < active.size(); ++s) sub.row(static_cast<Eigen::Index>(s)) = deformed.row(active[s]);

    VertexEnergy out{0.0, Points::Zero(deformed.rows(), 3)};
    const double inv_n = 1.0 / static_cast<double>(active.size());
    const double inv_m = 1.0 / static_cast<double>(target_.rows());
    double forward = 0.0, backward = 0.0;
    for (std::size_t s = 0; s < active.size(); ++s) {
      const Vec3 v = sub.row(static_cast<Eigen::Index>(s)).transpose();
      const Neighbor nn = tree_.nearest(v.data());
      forward += nn.sq_distance;
      out.gradient.row(active[s]) += 2.0 * inv_n * (deformed.row(active[s]) - target_.row(nn.index));
    }
    const KdTree source_tree(sub);
    for (Eigen::Index j = 0; j < target_.rows(); ++j) {
      const Vec3 u = target_.row(j).transpose();
      const Neighbor nn = source_tree.nearest(u.data());
      backward += nn.sq_distance;
      const int i = active[static_cast<std::size_t>(nn.index)];
      out.gradient.row(i) += 2.0 * inv_m * (deformed.row(i) - target_.row(j));
    }
    out.value = forward * inv_n + backward * inv_m;
    return out;
  }

 private:
  Points target_;
  KdTree tree_;
  int stride_;
};

inline VertexEnergy e_cd(const Points& deformed, const Points& target) { return ChamferTerm(target)(deformed); }

// Per-node rotation and its derivatives, shared by E_arap and the chain rule.
struct NodeRotations {
  std::vector<Mat3> R;
  std::vector<std::array<Mat3, 3>> dR;

  explicit NodeRotations(const GraphState& s) {
    const auto H = static_cast<std::size_t>(s.num_nodes());
    R.resize(H);
    dR.resize(H);
    for (std::size_t h = 0; h < H; ++h) {
      const Vec3 t = s.theta.row(static_cast<Eigen::Index>(h)).transpose();
      R[h] = rodrigues(t);
      dR[h] = rodrigues_derivatives(t);
    }
  }
};

inline StateEnergy e_arap(const DeformGraph& graph, const GraphState& state, double alpha_smooth,
                          const NodeRotations* cached = nullptr) {
  const int H = graph.num_nodes();
  if (state.num_nodes() != H) throw InputError("e_arap: state has wrong node count");
  std::optional<NodeRotations> local;
  if (!cached) local.emplace(state);
  const NodeRotations& rot = cached ? *cached : *local;

  StateEnergy out{0.0, Eigen::VectorXd::Zero(6 * H)};
  auto g_theta = [&](int h, int a) -> double& { return out.gradient[3 * h + a]; };
  auto g_delta = [&](int h) { return out.gradient.segment<3>(3 * H + 3 * h); };

  for (int h = 0; h < H; ++h) {
    const Vec3 gh = graph.nodes.row(h).transpose();
    const Vec3 dh = state.delta.row(h).transpose();
    for (int l : graph.neighbors[h]) {
      const Vec3 gl = graph.nodes.row(l).transpose();
      const Vec3 dl = state.delta.row(l).transpose();
      const Vec3 edge = gl - gh;
      // R_h (g_l - g_h) + g_h + delta_h - (g_l + delta_l), in displacement form.
      const Vec3 d = (rot.R[h] - Mat3::Identity()) * edge + (dh - dl);
      const Mat3 diff = rot.R[h] - rot.R[l];
      out.value += d.squaredNorm() + alpha_smooth * diff.squaredNorm();

      g_delta(h) += 2.0 * d;
      g_delta(l) -= 2.0 * d;
      for (int a = 0; a < 3; ++a) {
        g_theta(h, a) += 2.0 * d.dot(rot.dR[h][a] * edge);
        g_theta(h, a) += 2.0 * alpha_smooth * (diff.array() * rot.dR[h][a].array()).sum();
        g_theta(l, a) -= 2.0 * alpha_smooth * (diff.array() * rot.dR[l][a].array()).sum();
      }
    }
  }
  return out;
}

// Pull a vertex-space gradient back to state space through apply().
inline Eigen::VectorXd chain_to_state(const DeformGraph& graph, const NodeRotations& rot, const Points& rest,
                                      const Points& vertex_gradient) {
  const int H = graph.num_nodes();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(6 * H);
  for (Eigen::Index i = 0; i < rest.rows(); ++i) {
    const Vec3 gv = vertex_gradient.row(i).transpose();
    if (gv.isZero(0.0)) continue;
    const Vec3 v = rest.row(i).transpose();
    for (int s = 0; s < graph.k(); ++s) {
      const double w = graph.skin_weight(i, s);
      if (w == 0.0) continue;
      const int h = graph.skin_index(i, s);
      const Vec3 local = v - graph.nodes.row(h).transpose();
      for (int a = 0; a < 3; ++a) g[3 * h + a] += w * gv.dot(rot.dR[h][a] * local);
      g.segment<3>(3 * H + 3 * h) += w * gv;
    }
  }
  return g;
}

struct TotalEnergy {
  double total = 0.0;
  double cd = 0.0;
  double corr = 0.0;
  double arap = 0.0;
  Eigen::VectorXd gradient;  // 6H
  Points deformed;
};

inline Points apply_with(const DeformGraph& graph, const NodeRotations& rot, const GraphState& state,
                         const Points& rest) {
  return apply_rotations(graph, rot.R, state, rest);
}

// Every term is evaluated for reporting; E_corr needs a non-empty set unless its weight is zero.
inline TotalEnergy e_total(const DeformGraph& graph, const GraphState& state, const Points& rest,
                           const Points& target, const std::vector<CorrespondencePair>& corr,
                           const EnergyWeights& w, const ChamferTerm* chamfer = nullptr) {
  const NodeRotations rot(state);
  TotalEnergy out;
  out.deformed = apply_with(graph, rot, state, rest);
  Points vgrad = Points::Zero(rest.rows(), 3);
  {
    const auto cd = chamfer ? (*chamfer)(out.deformed) : e_cd(out.deformed, target);
    out.cd = cd.value;
    if (w.cd > 0.0) vgrad += w.cd * cd.gradient;
  }
  if (!corr.empty() || w.corr > 0.0) {
    const auto c = e_corr(out.deformed, target, corr);
    out.corr = c.value;
    if (w.corr > 0.0) vgrad += w.corr * c.gradient;
  }
  out.gradient = chain_to_state(graph, rot, rest, vgrad);
  {
    const auto a = e_arap(graph, state, w.alpha_smooth, &rot);
    out.arap = a.value;
    if (w.arap > 0.0) out.gradient += w.arap * a.gradient;
  }
  out.total = w.cd * out.cd + w.corr * out.corr + w.arap * out.arap;
  return out;
}

}  // namespace dfr
