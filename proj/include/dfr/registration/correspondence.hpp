#pragma once

// Hard maps between the deforming source and the target, and the bijectivity
// filter that prunes them.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dfr/common/error.hpp"
#include "dfr/fmaps/features.hpp"
#include "dfr/geometry/kdtree.hpp"
#include "dfr/geometry/mesh.hpp"

namespace dfr {

struct CorrespondencePair {
  int source = 0;  // vertex index on the source mesh
  int target = 0;  // point index on the target cloud
  bool operator==(const CorrespondencePair&) const = default;
};

enum class Stage { one = 1, two = 2 };
enum class Provenance { feature, coordinate };

inline const char* stage_name(Stage s) { return s == Stage::one ? "I" : "II"; }

using PointMap = std::vector<int>;

struct HardMaps {
  PointMap source_to_target;  // Pi_ST
  PointMap target_to_source;  // Pi_TS
};

struct CorrespondenceSet {
  std::vector<CorrespondencePair> pairs;
  HardMaps maps;
  Provenance provenance = Provenance::coordinate;
  int iteration = 0;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }

  // All (i, Pi_ST(i)) pairs, i.e. the unfiltered set.
  static std::vector<CorrespondencePair> all_pairs(const HardMaps& m) {
    std::vector<CorrespondencePair> out;
    out.reserve(m.source_to_target.size());
    for (std::size_t i = 0; i < m.source_to_target.size(); ++i)
      out.push_back({static_cast<int>(i), m.source_to_target[i]});
    return out;
  }
};

// Hard nearest neighbour maps in coordinate space (Stage II) or feature space (Stage I).
inline HardMaps nearest_maps(const RowMatrix& source, const RowMatrix& target) {
  if (source.cols() != target.cols())
    throw InputError("nearest_maps: dimension mismatch (" + std::to_string(source.cols()) + " vs " +
                     std::to_string(target.cols()) + ")");
  HardMaps m;
  m.source_to_target = KdTree(target).nearest_rows(source);
  m.target_to_source = KdTree(source).nearest_rows(target);
  return m;
}

inline HardMaps update_correspondences(const Points& deformed, const Points& target,
                                       const FeatureMatrix* source_features, const FeatureMatrix* target_features,
                                       Stage stage) {
  if (stage == Stage::two) return nearest_maps(deformed, target);
  if (!source_features || !target_features)
    throw InputError("update_correspondences: Stage I needs source and target features");
  source_features->check_owner(static_cast<int>(deformed.rows()), "source features");
  target_features->check_owner(static_cast<int>(target.rows()), "target features");
  return nearest_maps(source_features->values(), target_features->values());
}

// Keep (i, Pi_ST(i)) iff geo(i, Pi_TS(Pi_ST(i))) <= tau_abs. `Geo` is any callable or
// matrix-like object with operator()(i, j) returning the rest-pose geodesic distance.
template <typename Geo>
std::vector<CorrespondencePair> bijectivity_filter(const HardMaps& maps, const Geo& geo, double tau_abs) {
  if (!(tau_abs > 0.0)) throw InputError("bijectivity_filter: threshold must be > 0");
  std::vector<CorrespondencePair> kept;
  const auto& st = maps.source_to_target;
  const auto& ts = maps.target_to_source;
  for (std::size_t i = 0; i < st.size(); ++i) {
    const int j = st[i];
    if (j < 0 || static_cast<std::size_t>(j) >= ts.size())
      throw InputError("bijectivity_filter: map index out of range");
    const int back = ts[static_cast<std::size_t>(j)];
    if (static_cast<double>(geo(i, static_cast<std::size_t>(back))) <= tau_abs)
      kept.push_back({static_cast<int>(i), j});
  }
  return kept;
}

}  // namespace dfr
