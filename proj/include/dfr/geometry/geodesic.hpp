#pragma once

// Edge-graph geodesics: Dijkstra over mesh edges weighted by Euclidean length.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <thread>
#include <utility>
#include <vector>

#include "dfr/common/binary_io.hpp"
#include "dfr/geometry/mesh.hpp"

namespace dfr {

inline constexpr float kUnreachable = std::numeric_limits<float>::infinity();

// CSR edge graph with precomputed lengths.
class EdgeGraph {
 public:
  explicit EdgeGraph(const TriMesh& mesh) : n_(mesh.num_vertices()) {
    const auto adj = mesh.adjacency();
    offsets_.resize(static_cast<std::size_t>(n_) + 1, 0);
    for (int i = 0; i < n_; ++i) offsets_[i + 1] = offsets_[i] + static_cast<int>(adj[i].size());
    targets_.reserve(static_cast<std::size_t>(offsets_.back()));
    lengths_.reserve(static_cast<std::size_t>(offsets_.back()));
    const auto& v = mesh.vertices();
    for (int i = 0; i < n_; ++i)
      for (int j : adj[i]) {
        targets_.push_back(j);
        lengths_.push_back((v.row(i) - v.row(j)).norm());
      }
  }

  int size() const { return n_; }

  // Single-source distances; stops early once `stop_at` is settled (if >= 0).
  std::vector<double> dijkstra(int source, int stop_at = -1) const {
    std::vector<double> dist(static_cast<std::size_t>(n_), std::numeric_limits<double>::infinity());
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[source] = 0.0;
    heap.emplace(0.0, source);
    while (!heap.empty()) {
      auto [d, u] = heap.top();
      heap.pop();
      if (d > dist[u]) continue;
      if (u == stop_at) break;
      for (int e = offsets_[u]; e < offsets_[u + 1]; ++e) {
        const int w = targets_[e];
        const double nd = d + lengths_[e];
        if (nd < dist[w]) {
          dist[w] = nd;
          heap.emplace(nd, w);
        }
      }
    }
    return dist;
  }

 private:
  int n_;
  std::vector<int> offsets_;
  std::vector<int> targets_;
  std::vector<double> lengths_;
};

// Dense symmetric all-pairs matrix stored as f32. Entry (i, j) with i <= j is the
// distance computed from source i; the lower triangle mirrors it.
class GeodesicMatrix {
 public:
  GeodesicMatrix() = default;
  GeodesicMatrix(std::size_t n, std::vector<float> data, std::string mesh_id = {})
      : n_(n), data_(std::move(data)), mesh_id_(std::move(mesh_id)) {
    if (data_.size() != n_ * n_) throw InputError("geodesic matrix data size mismatch");
  }

  std::size_t size() const { return n_; }
  float operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
  const float* row(std::size_t i) const { return data_.data() + i * n_; }
  const std::vector<float>& data() const { return data_; }
  const std::string& mesh_id() const { return mesh_id_; }

  void save(const std::string& path) const {
    binary::Writer w(path);
    w.magic("DFRG");
    w.put<std::uint32_t>(1);
    w.put<std::uint64_t>(n_);
    w.put_array(data_.data(), data_.size());
    w.finish();
  }

  static GeodesicMatrix load(const std::string& path) {
    binary::Reader r(path);
    r.expect_magic("DFRG");
    const auto version = r.get<std::uint32_t>();
    if (version != 1) throw ParseError(path, "byte 4", "unsupported DFRG version " + std::to_string(version));
    const auto n = r.get<std::uint64_t>();
    if (r.remaining() != n * n * sizeof(float))
      throw ParseError(path, "byte 16", "payload size does not match n=" + std::to_string(n));
    std::vector<float> data(n * n);
    r.get_array(data.data(), data.size());
    return GeodesicMatrix(n, std::move(data), io_stem(path));
  }

 private:
  static std::string io_stem(const std::string& path) {
    auto slash = path.find_last_of("/\\");
    return slash == std::string::npos ? path : path.substr(slash + 1);
  }

  std::size_t n_ = 0;
  std::vector<float> data_;
  std::string mesh_id_;
};

// `threads` = 0 uses the hardware concurrency. Output does not depend on it.
inline GeodesicMatrix geodesic_matrix(const TriMesh& mesh, unsigned threads = 1) {
  const EdgeGraph graph(mesh);
  const std::size_t n = static_cast<std::size_t>(mesh.num_vertices());
  std::vector<float> data(n * n, kUnreachable);

  auto fill_rows = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < n; i += stride) {
      const auto dist = graph.dijkstra(static_cast<int>(i));
      for (std::size_t j = i; j < n; ++j) data[i * n + j] = static_cast<float>(dist[j]);
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    fill_rows(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(fill_rows, t, threads);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) data[i * n + j] = data[j * n + i];
  return GeodesicMatrix(n, std::move(data), mesh.name());
}

// Row-on-demand geodesics for meshes too large for the dense matrix. Agrees
// bit-for-bit with GeodesicMatrix (same source convention, f32 rounding).
class LazyGeodesics {
 public:
  explicit LazyGeodesics(const TriMesh& mesh) : graph_(mesh) {}

  float operator()(std::size_t i, std::size_t j) const {
    if (i == j) return 0.0f;
    const auto [s, t] = std::minmax(i, j);
    const auto dist = graph_.dijkstra(static_cast<int>(s), static_cast<int>(t));
    return static_cast<float>(dist[t]);
  }

  std::size_t size() const { return static_cast<std::size_t>(graph_.size()); }

 private:
  EdgeGraph graph_;
};

}  // namespace dfr
