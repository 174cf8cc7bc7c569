#pragma once

// Per-point embeddings produced outside this library, and their file format:
//   "DFRF" | u32 version=1 | u64 n | u64 d | n*d f64 row-major (little-endian)
// An optional text sidecar "<file>.meta" pins the owning shape:
//   shape = <name>
//   points = <n>

#include <fstream>
#include <optional>
#include <string>

#include "dfr/common/binary_io.hpp"
#include "dfr/common/error.hpp"
#include "dfr/geometry/kdtree.hpp"

namespace dfr {

class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(RowMatrix values, std::string shape_id = {})
      : values_(std::move(values)), shape_id_(std::move(shape_id)) {
    if (!values_.allFinite()) throw InputError("feature matrix for '" + shape_id_ + "' has non-finite entries");
  }

  const RowMatrix& values() const { return values_; }
  int rows() const { return static_cast<int>(values_.rows()); }
  int dim() const { return static_cast<int>(values_.cols()); }
  const std::string& shape_id() const { return shape_id_; }

  void check_owner(int point_count, const std::string& what) const {
    if (rows() != point_count)
      throw InputError(what + ": feature rows (" + std::to_string(rows()) + ") != point count (" +
                       std::to_string(point_count) + ")");
  }

  void save(const std::string& path) const {
    binary::Writer w(path);
    w.magic("DFRF");
    w.put<std::uint32_t>(1);
    w.put<std::uint64_t>(static_cast<std::uint64_t>(values_.rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(values_.cols()));
    w.put_array(values_.data(), static_cast<std::size_t>(values_.size()));
    w.finish();
  }

  void save_sidecar(const std::string& feature_path) const {
    std::ofstream out(feature_path + ".meta");
    if (!out) throw InputError("cannot write sidecar for " + feature_path);
    out << "shape = " << shape_id_ << "\npoints = " << values_.rows() << "\n";
  }

  static FeatureMatrix load(const std::string& path) {
    binary::Reader r(path);
    r.expect_magic("DFRF");
    const auto version = r.get<std::uint32_t>();
    if (version != 1) throw ParseError(path, "byte 4", "unsupported DFRF version " + std::to_string(version));
    const auto n = r.get<std::uint64_t>();
    const auto d = r.get<std::uint64_t>();
    if (r.remaining() != n * d * sizeof(double))
      throw ParseError(path, "byte 24", "payload size does not match n=" + std::to_string(n) +
                                            " d=" + std::to_string(d));
    RowMatrix values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    r.get_array(values.data(), n * d);
    std::string shape;
    if (auto meta = read_sidecar(path)) {
      shape = meta->shape;
      if (meta->points >= 0 && static_cast<std::uint64_t>(meta->points) != n)
        throw InputError(path + ".meta: points = " + std::to_string(meta->points) +
                         " disagrees with feature rows " + std::to_string(n));
    }
    return FeatureMatrix(std::move(values), shape);
  }

  struct Sidecar {
    std::string shape;
    long long points = -1;
  };

  static std::optional<Sidecar> read_sidecar(const std::string& feature_path) {
    std::ifstream in(feature_path + ".meta");
    if (!in) return std::nullopt;
    Sidecar s;
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string x) {
        const auto b = x.find_first_not_of(" \t\r");
        const auto e = x.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : x.substr(b, e - b + 1);
      };
      const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      if (key == "shape") s.shape = value;
      if (key == "points") s.points = std::stoll(value);
    }
    return s;
  }

 private:
  RowMatrix values_;
  std::string shape_id_;
};

}  // namespace dfr
