#pragma once

// Two-stage registration: a deformation graph is optimized against the target,
// first with feature-space correspondences (Stage I), then with coordinate-space
// correspondences (Stage II). Correspondences are refreshed every
// `update_interval` iterations and pruned by the bijectivity filter.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dfr/common/error.hpp"
#include "dfr/common/log.hpp"
#include "dfr/defgraph/graph.hpp"
#include "dfr/energies/energies.hpp"
#include "dfr/fmaps/features.hpp"
#include "dfr/geometry/area.hpp"
#include "dfr/geometry/geodesic.hpp"
#include "dfr/geometry/io.hpp"
#include "dfr/registration/correspondence.hpp"
#include "dfr/registration/optimizer.hpp"

namespace dfr {

struct StageConfig {
  bool enabled = true;
  EnergyWeights weights;
  double eps = 1e-8;
};

struct RegistrationConfig {
  StageConfig stage1{true, {0.01, 1.0, 20.0, 0.2}, 1e-8};
  StageConfig stage2{true, {1.0, 0.01, 1.0, 0.2}, 1e-7};
  int update_interval = 100;
  int patience = 15;
  int max_iterations = 5000;  // per stage
  double tau = 0.05;          // filter threshold as a fraction of sqrt(source area); inf disables
  OptimizerConfig optimizer;
  double node_ratio = 0.5;    // H = floor(N * node_ratio)
  int skin_neighbors = 4;
  int cd_stride = 1;          // Chamfer subsampling of source vertices
  // Command producing features for the deformed source: "{mesh}" and "{out}" are
  // replaced by an OFF path and the DFRF output path. Empty: reuse rest-pose features.
  std::string feature_command;
  int dense_geodesic_limit = 15000;  // above: row-on-demand geodesics

  void validate() const {
    if (update_interval < 1) throw InputError("update_interval must be >= 1");
    if (patience < 0) throw InputError("patience must be >= 0");
    if (max_iterations < 1) throw InputError("max_iterations must be >= 1");
    if (!(stage1.eps > 0.0) || !(stage2.eps > 0.0)) throw InputError("eps must be > 0");
    if (!(tau > 0.0)) throw InputError("filter tau must be > 0");
    if (!(node_ratio > 0.0) || node_ratio > 1.0) throw InputError("node_ratio must be in (0, 1]");
    if (skin_neighbors < 1) throw InputError("skin_neighbors must be >= 1");
    if (!(optimizer.learning_rate > 0.0)) throw InputError("learning_rate must be > 0");
    if (stage1.enabled) stage1.weights.validate();
    if (stage2.enabled) stage2.weights.validate();
  }
};

struct TraceRow {
  int iteration = 0;
  Stage stage = Stage::one;
  double total = 0.0, cd = 0.0, corr = 0.0, arap = 0.0;
  std::size_t correspondences = 0;
};

struct StageParams {
  Stage stage = Stage::two;
  EnergyWeights weights;
  double eps = 1e-7;
  int patience = 15;
  int update_interval = 100;
  int max_iterations = 5000;
  int iteration_offset = 0;  // global iteration number of this stage's first iteration
  OptimizerConfig optimizer;
  int cd_stride = 1;
};

struct StageResult {
  GraphState state;
  std::vector<TraceRow> trace;
  CorrespondenceSet last_correspondences;
  bool converged = false;
  int iterations = 0;
  double seconds = 0.0;
};

// Produces filtered correspondences for the current deformed vertices at a global iteration.
using CorrespondenceProvider = std::function<CorrespondenceSet(const Points& deformed, int iteration)>;

namespace reg_detail {

inline std::string dump_state(const GraphState& s) {
  std::ostringstream os;
  os.precision(17);
  os << "state (theta | delta) per node:\n";
  for (int h = 0; h < s.num_nodes(); ++h)
    os << h << ": " << s.theta.row(h) << " | " << s.delta.row(h) << '\n';
  return os.str();
}

}  // namespace reg_detail

// Runs one stage until the energy decrease stays below eps for more than
// `patience` consecutive iterations, or the iteration cap is reached.
inline StageResult optimize_stage(GraphState state, const DeformGraph& graph, const Points& rest,
                                  const Points& target, const CorrespondenceProvider& provider,
                                  const StageParams& p) {
  p.weights.validate();
  const auto start = std::chrono::steady_clock::now();
  const ChamferTerm chamfer(target, p.cd_stride);
  Adam adam(6 * graph.num_nodes(), p.optimizer);
  StageResult out;
  double previous = std::numeric_limits<double>::infinity();
  int count = 0;

  auto evaluate = [&](const GraphState& s) {
    return e_total(graph, s, rest, target, out.last_correspondences.pairs, p.weights, &chamfer);
  };

  std::optional<TotalEnergy> pending;  // energy of the accepted line-search candidate
  for (int k = 0;; ++k) {
    const int iter = p.iteration_offset + k;
    bool refreshed = false;
    if (k % p.update_interval == 0) {
      out.last_correspondences = provider(apply(graph, state, rest), iter);
      refreshed = true;
    }
    TotalEnergy E = (pending && !refreshed) ? std::move(*pending) : evaluate(state);
    pending.reset();
    if (!std::isfinite(E.total) || !E.gradient.allFinite())
      throw NumericalError("non-finite energy at iteration " + std::to_string(iter) + " (stage " +
                           stage_name(p.stage) + ")\n" + reg_detail::dump_state(state));
    out.trace.push_back({iter, p.stage, E.total, E.cd, E.corr, E.arap, out.last_correspondences.size()});
    out.iterations = k + 1;

    if (previous - E.total < p.eps) {
      if (++count > p.patience) {
        out.converged = true;
        break;
      }
    } else {
      count = 0;
    }
    if (k + 1 >= p.max_iterations) break;

    const Eigen::VectorXd x = state.flatten();
    const Eigen::VectorXd dx = adam.step(E.gradient);
    if (!p.optimizer.line_search) {
      state = GraphState::unflatten(x + dx);
      state.wrap();
    } else {
      double scale = 1.0;
      bool accepted = false;
      for (int b = 0; b <= p.optimizer.max_backtracks; ++b, scale *= 0.5) {
        GraphState candidate = GraphState::unflatten(x + scale * dx);
        candidate.wrap();
        TotalEnergy Ec = evaluate(candidate);
        if (std::isfinite(Ec.total) && Ec.total <= E.total) {
          state = std::move(candidate);
          pending = std::move(Ec);
          accepted = true;
          break;
        }
      }
      if (!accepted) pending = std::move(E);  // stay put
    }
    previous = out.trace.back().total;
  }
  out.state = std::move(state);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

struct FeaturePair {
  FeatureMatrix source;
  FeatureMatrix target;
};

struct RegistrationResult {
  GraphState state;
  DeformGraph graph;
  TriMesh deformed;
  HardMaps maps;  // final Pi_ST, Pi_TS at the converged deformation
  std::vector<TraceRow> trace;
  StageResult stage1, stage2;
  bool stage1_ran = false;
  double tau_abs = 0.0;
  double graph_seconds = 0.0;
  double geodesic_seconds = 0.0;
};

namespace reg_detail {

inline FeatureMatrix produce_features(const std::string& command, const TriMesh& deformed, int iteration) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() /
                       ("dfr_features_" + std::to_string(std::hash<std::string>{}(deformed.name())) + "_" +
                        std::to_string(iteration));
  fs::create_directories(dir);
  const std::string mesh_path = (dir / "deformed.off").string();
  const std::string out_path = (dir / "features.dfrf").string();
  save_mesh(deformed, mesh_path);
  std::string cmd = command;
  auto replace_all = [&](const std::string& key, const std::string& value) {
    for (std::size_t pos = cmd.find(key); pos != std::string::npos; pos = cmd.find(key, pos + value.size()))
      cmd.replace(pos, key.size(), value);
  };
  replace_all("{mesh}", mesh_path);
  replace_all("{out}", out_path);
  const int rc = std::system(cmd.c_str());
  if (rc != 0) throw InputError("feature command failed (exit " + std::to_string(rc) + "): " + cmd);
  auto features = FeatureMatrix::load(out_path);
  fs::remove_all(dir);
  features.check_owner(deformed.num_vertices(), "refreshed source features");
  return features;
}

}  // namespace reg_detail

// `geodesics` may be supplied to avoid recomputation; it must belong to `source`.
inline RegistrationResult register_shapes(const TriMesh& source, const PointCloud& target,
                                          const FeaturePair* features, const RegistrationConfig& cfg,
                                          const GeodesicMatrix* geodesics = nullptr) {
  cfg.validate();
  if (features) {
    features->source.check_owner(source.num_vertices(), "source features");
    features->target.check_owner(target.size(), "target features");
    if (features->source.dim() != features->target.dim())
      throw InputError("source and target feature dimensions differ");
  }
  RegistrationResult res;
  const Points& rest = source.vertices();
  const Points& tgt = target.points();

  auto t0 = std::chrono::steady_clock::now();
  const int H = std::max(4, static_cast<int>(std::floor(source.num_vertices() * cfg.node_ratio)));
  res.graph = build_graph(source, std::min(H, source.num_vertices()), cfg.skin_neighbors);
  res.graph_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  t0 = std::chrono::steady_clock::now();
  std::optional<GeodesicMatrix> own_geo;
  std::optional<LazyGeodesics> lazy_geo;
  const bool filtering = std::isfinite(cfg.tau);
  if (filtering && !geodesics) {
    if (source.num_vertices() <= cfg.dense_geodesic_limit)
      own_geo = geodesic_matrix(source);
    else
      lazy_geo.emplace(source);
  }
  const GeodesicMatrix* geo = geodesics ? geodesics : (own_geo ? &*own_geo : nullptr);
  res.geodesic_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.tau_abs = cfg.tau * std::sqrt(surface_area(source));

  auto filter = [&](const HardMaps& maps, Provenance prov, int iteration) {
    CorrespondenceSet set;
    set.maps = maps;
    set.provenance = prov;
    set.iteration = iteration;
    if (!filtering)
      set.pairs = CorrespondenceSet::all_pairs(maps);
    else if (geo)
      set.pairs = bijectivity_filter(maps, *geo, res.tau_abs);
    else
      set.pairs = bijectivity_filter(maps, *lazy_geo, res.tau_abs);
    if (set.pairs.empty()) {
      log::warn("iteration " + std::to_string(iteration) +
                ": bijectivity filter rejected every correspondence; using unfiltered pairs");
      set.pairs = CorrespondenceSet::all_pairs(maps);
    }
    return set;
  };

  const bool run_stage1 = cfg.stage1.enabled && features != nullptr;
  if (cfg.stage1.enabled && !features)
    log::warn("no features supplied: Stage I skipped, registering with coordinates only");

  auto params = [&](Stage stage, const StageConfig& sc, int offset) {
    StageParams p;
    p.stage = stage;
    p.weights = sc.weights;
    p.eps = sc.eps;
    p.patience = cfg.patience;
    p.update_interval = cfg.update_interval;
    p.max_iterations = cfg.max_iterations;
    p.iteration_offset = offset;
    p.optimizer = cfg.optimizer;
    p.cd_stride = cfg.cd_stride;
    return p;
  };

  GraphState state = GraphState::identity(res.graph.num_nodes());
  int offset = 0;
  if (run_stage1) {
    CorrespondenceProvider feature_provider = [&](const Points& deformed, int iteration) {
      HardMaps maps;
      if (!cfg.feature_command.empty() && iteration > 0) {
        const auto refreshed = reg_detail::produce_features(cfg.feature_command, source.with_vertices(deformed),
                                                            iteration);
        maps = update_correspondences(deformed, tgt, &refreshed, &features->target, Stage::one);
      } else {
        maps = update_correspondences(deformed, tgt, &features->source, &features->target, Stage::one);
      }
      return filter(maps, Provenance::feature, iteration);
    };
    res.stage1 = optimize_stage(state, res.graph, rest, tgt, feature_provider, params(Stage::one, cfg.stage1, 0));
    res.stage1_ran = true;
    state = res.stage1.state;
    offset = res.stage1.iterations;
    res.trace = res.stage1.trace;
  }
  if (cfg.stage2.enabled) {
    CorrespondenceProvider coord_provider = [&](const Points& deformed, int iteration) {
      return filter(update_correspondences(deformed, tgt, nullptr, nullptr, Stage::two), Provenance::coordinate,
                    iteration);
    };
    res.stage2 = optimize_stage(state, res.graph, rest, tgt, coord_provider, params(Stage::two, cfg.stage2, offset));
    state = res.stage2.state;
    res.trace.insert(res.trace.end(), res.stage2.trace.begin(), res.stage2.trace.end());
  }

  res.state = state;
  const Points deformed = apply(res.graph, state, rest);
  res.deformed = source.with_vertices(deformed);
  res.maps = nearest_maps(deformed, tgt);
  return res;
}

// "i j" per line, 0-based, after a header naming both shapes.
inline void write_correspondences(const std::string& path, const PointMap& map, const std::string& source_name,
                                  const std::string& target_name, const std::string& stage = "final") {
  std::ostringstream os;
  os << "# source=" << source_name << " target=" << target_name << " stage=" << stage << '\n';
  for (std::size_t i = 0; i < map.size(); ++i) os << i << ' ' << map[i] << '\n';
  io_detail::write_text(path, os.str());
}

inline void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
  std::string out = "iter,stage,E_total,E_cd,E_corr,E_arap,|C|\n";
  for (const auto& r : trace) {
    out += std::to_string(r.iteration) + "," + stage_name(r.stage) + ",";
    for (double v : {r.total, r.cd, r.corr, r.arap}) {
      io_detail::append_number(out, v);
      out += ',';
    }
    out += std::to_string(r.correspondences) + "\n";
  }
  io_detail::write_text(path, out);
}

}  // namespace dfr
