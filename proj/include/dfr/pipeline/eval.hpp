#pragma once

// Map files, hub composition and the area-normalized geodesic error.

#include <cmath>
#include <string>
#include <limits>
#include <utility>
#include <vector>

#include "dfr/common/error.hpp"
#include "dfr/geometry/geodesic.hpp"
#include "dfr/geometry/io.hpp"
#include "dfr/registration/correspondence.hpp"

namespace dfr {

// Listed (source index, target index) pairs; may cover only some source indices.
using SparseMap = std::vector<std::pair<int, int>>;

// Reads "i j" lines; '#' starts a comment. Indices must be non-negative.
inline SparseMap read_map_file(const std::string& path) {
  const std::string text = io_detail::read_file(path);
  io_detail::LineTokens lines(text, path);
  std::vector<std::string_view> tok;
  SparseMap out;
  while (lines.next(tok)) {
    if (tok.size() != 2) throw ParseError(path, lines.where(), "expected two indices per line");
    const long long i = io_detail::parse_int(tok[0], path, lines.line());
    const long long j = io_detail::parse_int(tok[1], path, lines.line());
    if (i < 0 || j < 0 || i > std::numeric_limits<int>::max() || j > std::numeric_limits<int>::max())
      throw ParseError(path, lines.where(), "index out of range");
    out.emplace_back(static_cast<int>(i), static_cast<int>(j));
  }
  return out;
}

// Dense map over 0..n-1; every index must appear exactly once.
inline PointMap to_dense(const SparseMap& m, int n, const std::string& what = "map") {
  PointMap out(static_cast<std::size_t>(n), -1);
  for (const auto& [i, j] : m) {
    if (i >= n) throw InputError(what + ": source index " + std::to_string(i) + " >= " + std::to_string(n));
    if (out[i] != -1) throw InputError(what + ": source index " + std::to_string(i) + " listed twice");
    out[i] = j;
  }
  for (int i = 0; i < n; ++i)
    if (out[i] == -1) throw InputError(what + ": source index " + std::to_string(i) + " missing");
  return out;
}

inline SparseMap to_sparse(const PointMap& m) {
  SparseMap out;
  out.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out.emplace_back(static_cast<int>(i), m[i]);
  return out;
}

// T_12(i) = T_s2(T_1s(i)).
inline PointMap compose_maps(const PointMap& t1s, const PointMap& ts2) {
  PointMap out(t1s.size());
  for (std::size_t i = 0; i < t1s.size(); ++i) {
    const int s = t1s[i];
    if (s < 0 || static_cast<std::size_t>(s) >= ts2.size())
      throw InputError("compose_maps: intermediate index " + std::to_string(s) + " outside [0, " +
                       std::to_string(ts2.size()) + ")");
    out[i] = ts2[s];
  }
  return out;
}

struct GeodesicErrorReport {
  double mean = 0.0;         // over counted entries, divided by sqrt(area)
  std::size_t count = 0;     // entries that contributed
  std::size_t excluded = 0;  // entries with unreachable ground truth
};

// Mean over listed ground-truth pairs (i, g) of geo(pred[i], g) / sqrt(area).
template <typename Geo>
GeodesicErrorReport geodesic_error(const PointMap& pred, const SparseMap& gt, const Geo& geo, double area) {
  if (!(area > 0.0)) throw InputError("geodesic_error: area must be positive");
  const std::size_t n = geo.size();
  GeodesicErrorReport r;
  double sum = 0.0;
  for (const auto& [i, g] : gt) {
    if (i < 0 || static_cast<std::size_t>(i) >= pred.size())
      throw InputError("geodesic_error: ground-truth source index " + std::to_string(i) + " outside prediction");
    const int p = pred[i];
    if (p < 0 || static_cast<std::size_t>(p) >= n || g < 0 || static_cast<std::size_t>(g) >= n)
      throw InputError("geodesic_error: target index outside the geodesic matrix");
    const float d = geo(static_cast<std::size_t>(p), static_cast<std::size_t>(g));
    if (d == kUnreachable) {
      ++r.excluded;
      continue;
    }
    sum += static_cast<double>(d);
    ++r.count;
  }
  if (r.count > 0) r.mean = sum / static_cast<double>(r.count) / std::sqrt(area);
  return r;
}

template <typename Geo>
GeodesicErrorReport geodesic_error(const PointMap& pred, const PointMap& gt, const Geo& geo, double area) {
  if (pred.size() != gt.size()) throw InputError("geodesic_error: maps have different domains");
  return geodesic_error(pred, to_sparse(gt), geo, area);
}

}  // namespace dfr
