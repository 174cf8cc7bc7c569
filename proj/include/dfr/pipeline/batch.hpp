#pragma once

// Template-hub batch runs: one template mesh is registered to every target, and
// target pairs are matched by composing the two maps through the template.
//
// Manifest (JSON, relative paths resolved against the manifest's directory):
//   template:  {shape, features?, rotation?}
//   targets:   [{name, shape, features?, rotation?, ground_truth?, mesh?}]
//   pairs:     [{source, target, ground_truth?}]   ground_truth: path or "identity"
//   output, config?, overrides? {key: value}, align? (none|rotation_file|pca), threads?
//
// Per-target ground truth maps template vertices to target points; pair ground
// truth maps source-target points to target-target points.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfr/common/error.hpp"
#include "dfr/common/log.hpp"
#include "dfr/energies/energies.hpp"
#include "dfr/fmaps/features.hpp"
#include "dfr/geometry/area.hpp"
#include "dfr/geometry/geodesic.hpp"
#include "dfr/geometry/io.hpp"
#include "dfr/pipeline/align.hpp"
#include "dfr/pipeline/config.hpp"
#include "dfr/pipeline/eval.hpp"
#include "dfr/registration/register.hpp"

namespace dfr {

// Worker count: `requested` (0 = hardware concurrency), capped by DFR_THREADS.
inline unsigned resolve_threads(unsigned requested) {
  unsigned n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DFR_THREADS"); env && *env) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (*end != '\0' || cap < 1) throw InputError("DFR_THREADS must be a positive integer, got '" + std::string(env) + "'");
    n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return n;
}

// Loads features for `points` shape points. A file covering the original vertex
// list of a compacted mesh is reduced to the surviving rows.
inline FeatureMatrix load_features_for(const std::string& path, int points,
                                       const std::vector<int>* original_indices = nullptr) {
  FeatureMatrix f = FeatureMatrix::load(path);
  if (f.rows() != points && original_indices && !original_indices->empty() &&
      f.rows() > *std::max_element(original_indices->begin(), original_indices->end())) {
    RowMatrix sub(points, f.dim());
    for (int i = 0; i < points; ++i) sub.row(i) = f.values().row((*original_indices)[i]);
    f = FeatureMatrix(std::move(sub), f.shape_id());
  }
  f.check_owner(points, path);
  return f;
}

struct TemplateSpec {
  std::string shape, features, rotation;
};

struct TargetSpec {
  std::string name, shape, features, rotation, ground_truth, mesh;
};

struct PairSpec {
  std::string source, target, ground_truth;
};

struct RunManifest {
  TemplateSpec templ;
  std::vector<TargetSpec> targets;
  std::vector<PairSpec> pairs;
  std::string output;
  RegistrationConfig config;
  AlignMode align = AlignMode::none;
  unsigned threads = 0;

  void validate() const;
};

namespace batch_detail {

namespace fs = std::filesystem;

inline std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty() || p == "identity") return p;
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

inline std::string get_string(const nlohmann::json& j, const char* key, const std::string& where,
                              bool required = false) {
  if (!j.contains(key)) {
    if (required) throw InputError(where + ": missing '" + key + "'");
    return {};
  }
  if (!j.at(key).is_string()) throw InputError(where + ": '" + key + "' must be a string");
  return j.at(key).get<std::string>();
}

inline void require_file(const std::string& p, const std::string& what) {
  if (!p.empty() && p != "identity" && !fs::is_regular_file(p)) throw InputError(what + ": file not found: " + p);
}

inline bool safe_name(const std::string& s) {
  if (s.empty() || s == "." || s == "..") return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

}  // namespace batch_detail

inline void RunManifest::validate() const {
  using batch_detail::require_file;
  if (templ.shape.empty()) throw InputError("manifest: template shape missing");
  require_file(templ.shape, "template shape");
  require_file(templ.features, "template features");
  require_file(templ.rotation, "template rotation");
  if (targets.empty()) throw InputError("manifest: no targets");
  if (output.empty()) throw InputError("manifest: output directory missing");
  std::vector<std::string> names;
  for (const auto& t : targets) {
    if (!batch_detail::safe_name(t.name)) throw InputError("manifest: invalid target name '" + t.name + "'");
    if (std::find(names.begin(), names.end(), t.name) != names.end())
      throw InputError("manifest: duplicate target name '" + t.name + "'");
    names.push_back(t.name);
    const std::string w = "target '" + t.name + "'";
    require_file(t.shape, w + " shape");
    require_file(t.features, w + " features");
    require_file(t.rotation, w + " rotation");
    require_file(t.ground_truth, w + " ground truth");
    require_file(t.mesh, w + " mesh");
    if (t.features.empty() != templ.features.empty())
      throw InputError("manifest: features must be given for the template and every target, or for none");
    if (align == AlignMode::rotation_file && t.rotation.empty())
      throw InputError(w + ": rotation_file alignment needs a rotation");
  }
  for (const auto& p : pairs) {
    for (const auto* n : {&p.source, &p.target})
      if (std::find(names.begin(), names.end(), *n) == names.end())
        throw InputError("manifest: pair refers to unknown target '" + *n + "'");
    require_file(p.ground_truth, "pair ground truth");
  }
  config.validate();
}

inline RunManifest parse_manifest(const std::string& text, const std::string& path) {
  namespace fs = std::filesystem;
  using batch_detail::get_string;
  using batch_detail::resolve;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path, "byte " + std::to_string(e.byte), "invalid JSON");
  }
  if (!j.is_object()) throw InputError(path + ": manifest must be a JSON object");
  static const char* const known[] = {"template", "targets", "pairs", "output", "config",
                                      "overrides", "align", "threads"};
  for (const auto& [k, v] : j.items())
    if (std::none_of(std::begin(known), std::end(known), [&](const char* s) { return k == s; }))
      throw InputError(path + ": unknown manifest key '" + k + "'");

  const fs::path base = fs::absolute(path).parent_path();
  RunManifest m;
  if (!j.contains("template") || !j["template"].is_object()) throw InputError(path + ": 'template' object missing");
  const auto& t = j["template"];
  m.templ.shape = resolve(base, get_string(t, "shape", "template", true));
  m.templ.features = resolve(base, get_string(t, "features", "template"));
  m.templ.rotation = resolve(base, get_string(t, "rotation", "template"));

  if (!j.contains("targets") || !j["targets"].is_array()) throw InputError(path + ": 'targets' array missing");
  for (const auto& e : j["targets"]) {
    if (!e.is_object()) throw InputError(path + ": each target must be an object");
    TargetSpec s;
    s.name = get_string(e, "name", "target", true);
    const std::string w = "target '" + s.name + "'";
    s.shape = resolve(base, get_string(e, "shape", w, true));
    s.features = resolve(base, get_string(e, "features", w));
    s.rotation = resolve(base, get_string(e, "rotation", w));
    s.ground_truth = resolve(base, get_string(e, "ground_truth", w));
    s.mesh = resolve(base, get_string(e, "mesh", w));
    m.targets.push_back(std::move(s));
  }
  if (j.contains("pairs")) {
    if (!j["pairs"].is_array()) throw InputError(path + ": 'pairs' must be an array");
    for (const auto& e : j["pairs"]) {
      if (!e.is_object()) throw InputError(path + ": each pair must be an object");
      m.pairs.push_back({get_string(e, "source", "pair", true), get_string(e, "target", "pair", true),
                         resolve(base, get_string(e, "ground_truth", "pair"))});
    }
  }
  m.output = resolve(base, get_string(j, "output", "manifest", true));
  if (const auto cfg = get_string(j, "config", "manifest"); !cfg.empty()) {
    batch_detail::require_file(resolve(base, cfg), "config");
    m.config = load_config(resolve(base, cfg));
  }
  if (j.contains("overrides")) {
    if (!j["overrides"].is_object()) throw InputError(path + ": 'overrides' must be an object");
    for (const auto& [k, v] : j["overrides"].items())
      set_config_value(m.config, k, v.is_string() ? v.get<std::string>() : v.dump());
  }
  if (const auto a = get_string(j, "align", "manifest"); !a.empty()) m.align = parse_align_mode(a);
  if (j.contains("threads")) {
    if (!j["threads"].is_number_unsigned()) throw InputError(path + ": 'threads' must be a non-negative integer");
    m.threads = j["threads"].get<unsigned>();
  }
  m.validate();
  return m;
}

inline RunManifest load_manifest(const std::string& path) {
  return parse_manifest(io_detail::read_file(path), path);
}

// Template shape after alignment, with everything shared by all registrations.
struct PreparedTemplate {
  TriMesh mesh;
  std::optional<FeatureMatrix> features;
  std::optional<GeodesicMatrix> geodesics;
  Alignment alignment;
};

inline PreparedTemplate prepare_template(const TemplateSpec& item, AlignMode mode, const RegistrationConfig& cfg) {
  PreparedTemplate t;
  const TriMesh raw = load_mesh(item.shape);
  std::optional<Mat3> R;
  if (!item.rotation.empty()) R = read_rotation_file(item.rotation);
  // The template defines the canonical frame: a missing rotation means identity.
  const Mat3 I = Mat3::Identity();
  t.mesh = align_input(raw, mode, mode == AlignMode::rotation_file ? (R ? &*R : &I) : nullptr, &t.alignment);
  if (!item.features.empty())
    t.features = load_features_for(item.features, t.mesh.num_vertices(), &t.mesh.original_indices());
  if (std::isfinite(cfg.tau) && t.mesh.num_vertices() <= cfg.dense_geodesic_limit)
    t.geodesics = geodesic_matrix(t.mesh);
  return t;
}

struct TargetOutcome {
  std::string name;
  bool ok = false;
  std::string error;
  int exit_code = 0;  // 2 input, 3 numerical
  RegistrationResult result;
  PointCloud cloud;
  double chamfer = 0.0;
  std::optional<GeodesicErrorReport> initial_error, final_error;  // vs per-target ground truth
  Alignment alignment;
  double seconds = 0.0;
};

namespace batch_detail {

inline TriMesh eval_mesh(const TargetSpec& item, const Alignment& al, int points) {
  TriMesh m = load_mesh(item.mesh.empty() ? item.shape : item.mesh);
  if (m.num_vertices() != points)
    throw InputError("evaluation mesh for '" + item.name + "' has " + std::to_string(m.num_vertices()) +
                     " vertices, target has " + std::to_string(points) + " points");
  // Same rigid transform as the registered cloud.
  Points v = (m.vertices().rowwise() - al.center.transpose()) * al.rotation.transpose();
  return m.with_vertices(std::move(v));
}

// "identity" stands for i -> i over `n` points.
inline SparseMap ground_truth_map(const std::string& path, std::size_t n) {
  if (path != "identity") return read_map_file(path);
  SparseMap id(n);
  for (std::size_t i = 0; i < n; ++i) id[i] = {static_cast<int>(i), static_cast<int>(i)};
  return id;
}

}  // namespace batch_detail

// Registers the template to one target and writes its artifacts under `dir` (if not empty).
inline TargetOutcome run_target(const PreparedTemplate& templ, const TargetSpec& item, AlignMode mode,
                                const RegistrationConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  const auto start = std::chrono::steady_clock::now();
  TargetOutcome out;
  out.name = item.name;
  const PointCloud raw = load_point_cloud(item.shape);
  std::optional<Mat3> R;
  if (!item.rotation.empty()) R = read_rotation_file(item.rotation);
  out.cloud = align_input(PointCloud(raw.points(), item.name), mode, R ? &*R : nullptr, &out.alignment);

  std::optional<FeaturePair> features;
  if (templ.features) features = FeaturePair{*templ.features, load_features_for(item.features, out.cloud.size())};

  out.result = register_shapes(templ.mesh, out.cloud, features ? &*features : nullptr, cfg,
                               templ.geodesics ? &*templ.geodesics : nullptr);
  out.chamfer = e_cd(out.result.deformed.vertices(), out.cloud.points()).value;

  if (!item.ground_truth.empty()) {
    const TriMesh m = batch_detail::eval_mesh(item, out.alignment, out.cloud.size());
    const GeodesicMatrix geo = geodesic_matrix(m);
    const double area = surface_area(m);
    const SparseMap gt = batch_detail::ground_truth_map(item.ground_truth, templ.mesh.num_vertices());
    out.final_error = geodesic_error(out.result.maps.source_to_target, gt, geo, area);
    if (features) {
      const PointMap initial = nearest_maps(features->source.values(), features->target.values()).source_to_target;
      out.initial_error = geodesic_error(initial, gt, geo, area);
    }
  }

  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.ok = true;
  if (dir.empty()) return out;
  fs::create_directories(dir);
  save_mesh(out.result.deformed, (fs::path(dir) / "deformed.off").string());
  const std::string src_name = templ.mesh.name();
  write_correspondences((fs::path(dir) / "map_template_to_target.txt").string(), out.result.maps.source_to_target,
                        src_name, item.name);
  write_correspondences((fs::path(dir) / "map_target_to_template.txt").string(), out.result.maps.target_to_source,
                        item.name, src_name);
  write_trace_csv((fs::path(dir) / "trace.csv").string(), out.result.trace);
  return out;
}

struct PairOutcome {
  std::string source, target;
  bool ok = false;
  std::string error;
  PointMap map;
  std::optional<GeodesicErrorReport> error_report;
};

struct BatchReport {
  std::vector<TargetOutcome> targets;
  std::vector<PairOutcome> pairs;
  nlohmann::ordered_json report;  // deterministic content only
  nlohmann::ordered_json timing;
  int failures = 0;
};

namespace batch_detail {

inline nlohmann::ordered_json error_json(const GeodesicErrorReport& r) {
  return {{"mean_x100", 100.0 * r.mean}, {"count", r.count}, {"excluded", r.excluded}};
}

inline double aggregate(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace batch_detail

// Runs every target (in a worker pool) and every pair, writing report.json and
// timing.json to the output directory. Per-item failures are recorded, not thrown.
inline BatchReport run_batch(const RunManifest& m) {
  namespace fs = std::filesystem;
  using nlohmann::ordered_json;
  m.validate();
  const auto start = std::chrono::steady_clock::now();
  fs::create_directories(m.output);
  PreparedTemplate templ = prepare_template(m.templ, m.align, m.config);

  BatchReport rep;
  rep.targets.resize(m.targets.size());
  const unsigned workers = std::min<unsigned>(resolve_threads(m.threads), static_cast<unsigned>(m.targets.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < m.targets.size(); i = next++) {
      const auto& item = m.targets[i];
      const std::string dir = (fs::path(m.output) / "targets" / item.name).string();
      try {
        rep.targets[i] = run_target(templ, item, m.align, m.config, dir);
      } catch (const NumericalError& e) {
        rep.targets[i] = TargetOutcome{};
        rep.targets[i].error = e.what();
        rep.targets[i].exit_code = 3;
      } catch (const std::exception& e) {
        rep.targets[i] = TargetOutcome{};
        rep.targets[i].error = e.what();
        rep.targets[i].exit_code = 2;
      }
      rep.targets[i].name = item.name;
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  auto find_target = [&](const std::string& name) -> const TargetOutcome& {
    for (const auto& t : rep.targets)
      if (t.name == name) return t;
    throw InputError("unknown target " + name);
  };
  const fs::path pair_dir = fs::path(m.output) / "pairs";
  for (const auto& p : m.pairs) {
    PairOutcome po;
    po.source = p.source;
    po.target = p.target;
    try {
      const auto& a = find_target(p.source);
      const auto& b = find_target(p.target);
      if (!a.ok || !b.ok) throw InputError("registration of a pair member failed");
      po.map = compose_maps(a.result.maps.target_to_source, b.result.maps.source_to_target);
      fs::create_directories(pair_dir);
      write_correspondences((pair_dir / (p.source + "__" + p.target + ".txt")).string(), po.map, p.source, p.target);
      if (!p.ground_truth.empty()) {
        const auto& bspec = *std::find_if(m.targets.begin(), m.targets.end(),
                                          [&](const TargetSpec& t) { return t.name == p.target; });
        const TriMesh mesh = batch_detail::eval_mesh(bspec, b.alignment, b.cloud.size());
        const SparseMap gt = batch_detail::ground_truth_map(p.ground_truth, po.map.size());
        po.error_report = geodesic_error(po.map, gt, geodesic_matrix(mesh), surface_area(mesh));
      }
      po.ok = true;
    } catch (const std::exception& e) {
      po.error = e.what();
    }
    rep.pairs.push_back(std::move(po));
  }

  ordered_json targets = ordered_json::array();
  ordered_json timing_targets = ordered_json::array();
  std::vector<double> target_errors, pair_errors, chamfers;
  for (const auto& t : rep.targets) {
    ordered_json j{{"name", t.name}, {"ok", t.ok}};
    ordered_json tj{{"name", t.name}, {"seconds", t.seconds}};
    if (!t.ok) {
      j["error"] = t.error;
      j["exit_code"] = t.exit_code;
      ++rep.failures;
    } else {
      const auto& r = t.result;
      j["stage1"] = {{"ran", r.stage1_ran}, {"iterations", r.stage1.iterations}, {"converged", r.stage1.converged}};
      j["stage2"] = {{"iterations", r.stage2.iterations}, {"converged", r.stage2.converged}};
      j["final_energy"] = r.trace.empty() ? 0.0 : r.trace.back().total;
      j["chamfer"] = t.chamfer;
      chamfers.push_back(t.chamfer);
      if (t.initial_error) j["initial_error"] = batch_detail::error_json(*t.initial_error);
      if (t.final_error) {
        j["geodesic_error"] = batch_detail::error_json(*t.final_error);
        target_errors.push_back(100.0 * t.final_error->mean);
      }
      tj["graph_seconds"] = r.graph_seconds;
      tj["stage1_seconds"] = r.stage1.seconds;
      tj["stage2_seconds"] = r.stage2.seconds;
    }
    targets.push_back(std::move(j));
    timing_targets.push_back(std::move(tj));
  }
  ordered_json pairs = ordered_json::array();
  for (const auto& p : rep.pairs) {
    ordered_json j{{"source", p.source}, {"target", p.target}, {"ok", p.ok}};
    if (!p.ok) {
      j["error"] = p.error;
      ++rep.failures;
    } else if (p.error_report) {
      j["geodesic_error"] = batch_detail::error_json(*p.error_report);
      pair_errors.push_back(100.0 * p.error_report->mean);
    }
    pairs.push_back(std::move(j));
  }
  rep.report = {{"template", templ.mesh.name()},
                {"align", align_mode_name(m.align)},
                {"targets", targets},
                {"pairs", pairs},
                {"aggregate",
                 {{"target_error_x100", batch_detail::aggregate(target_errors)},
                  {"pair_error_x100", batch_detail::aggregate(pair_errors)},
                  {"chamfer", batch_detail::aggregate(chamfers)}}},
                {"failures", rep.failures}};
  rep.timing = {{"workers", workers},
                {"total_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()},
                {"targets", timing_targets}};
  io_detail::write_text((fs::path(m.output) / "report.json").string(), rep.report.dump(2) + "\n");
  io_detail::write_text((fs::path(m.output) / "timing.json").string(), rep.timing.dump(2) + "\n");
  return rep;
}

}  // namespace dfr
