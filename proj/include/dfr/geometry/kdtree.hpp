#pragma once

// Exact nearest-neighbour search over the rows of a dense matrix (any dimension).
// Ties resolve to the smaller row index, so results equal a brute-force scan that
// keeps the first minimum.

#include <Eigen/Core>

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

namespace dfr {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Neighbor {
  int index = -1;
  double sq_distance = std::numeric_limits<double>::infinity();
};

template <typename Derived>
double squared_distance(const double* a, const Eigen::MatrixBase<Derived>& points, Eigen::Index row) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < points.cols(); ++c) {
    const double d = a[c] - points(row, c);
    s += d * d;
  }
  return s;
}

class KdTree {
 public:
  KdTree() = default;

  template <typename Derived>
  explicit KdTree(const Eigen::MatrixBase<Derived>& points) : points_(points) {
    const int n = static_cast<int>(points_.rows());
    order_.resize(static_cast<std::size_t>(n));
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(static_cast<std::size_t>(2 * n / kLeafSize + 2));
    if (n > 0) build(0, n, 0);
  }

  int size() const { return static_cast<int>(points_.rows()); }
  int dim() const { return static_cast<int>(points_.cols()); }
  const RowMatrix& points() const { return points_; }

  Neighbor nearest(const double* query) const {
    Neighbor best;
    if (!nodes_.empty()) search(0, query, best);
    return best;
  }

  Neighbor nearest(const Eigen::VectorXd& q) const { return nearest(q.data()); }

  // k nearest, sorted by (distance, index).
  std::vector<Neighbor> k_nearest(const double* query, int k) const {
    std::vector<Neighbor> heap;
    if (k <= 0 || nodes_.empty()) return heap;
    heap.reserve(static_cast<std::size_t>(k) + 1);
    search_k(0, query, k, heap);
    std::sort(heap.begin(), heap.end(), less);
    return heap;
  }

  // Nearest row for every row of `queries`.
  template <typename Derived>
  std::vector<int> nearest_rows(const Eigen::MatrixBase<Derived>& queries) const {
    std::vector<int> out(static_cast<std::size_t>(queries.rows()));
    Eigen::VectorXd q(queries.cols());
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
      q = queries.row(i).transpose();
      out[static_cast<std::size_t>(i)] = nearest(q.data()).index;
    }
    return out;
  }

 private:
  static constexpr int kLeafSize = 8;

  struct Node {
    int begin = 0, end = 0;    // range in order_
    int axis = -1;             // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
  };

  static bool less(const Neighbor& a, const Neighbor& b) {
    return a.sq_distance < b.sq_distance || (a.sq_distance == b.sq_distance && a.index < b.index);
  }

  int build(int begin, int end, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;

    // Split on the axis of largest spread.
    int axis = 0;
    double best_spread = -1.0;
    for (int c = 0; c < dim(); ++c) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (int i = begin; i < end; ++i) {
        lo = std::min(lo, points_(order_[i], c));
        hi = std::max(hi, points_(order_[i], c));
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        axis = c;
      }
    }
    if (best_spread <= 0.0) return id;  // all points coincide
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                       const double pa = points_(a, axis), pb = points_(b, axis);
                       return pa < pb || (pa == pb && a < b);
                     });
    nodes_[id].axis = axis;
    nodes_[id].split = points_(order_[mid], axis);
    const int left = build(begin, mid, depth + 1);
    const int right = build(mid, end, depth + 1);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search(int id, const double* q, Neighbor& best) const {
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int idx = order_[i];
        const Neighbor cand{idx, squared_distance(q, points_, idx)};
        if (less(cand, best)) best = cand;
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const int near = diff < 0.0 ? node.left : node.right;
    const int far = diff < 0.0 ? node.right : node.left;
    search(near, q, best);
    // Equality is not pruned: a tied point with a smaller index may lie across the plane.
    if (diff * diff <= best.sq_distance) search(far, q, best);
  }

  void search_k(int id, const double* q, int k, std::vector<Neighbor>& heap) const {
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int idx = order_[i];
        const Neighbor cand{idx, squared_distance(q, points_, idx)};
        if (static_cast<int>(heap.size()) < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end(), less);
        } else if (less(cand, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), less);
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end(), less);
        }
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const int near = diff < 0.0 ? node.left : node.right;
    const int far = diff < 0.0 ? node.right : node.left;
    search_k(near, q, k, heap);
    if (static_cast<int>(heap.size()) < k || diff * diff <= heap.front().sq_distance) search_k(far, q, k, heap);
  }

  RowMatrix points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace dfr
