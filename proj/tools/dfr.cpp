// dfr: registration, matching, evaluation and preprocessing from the command line.
// Exit codes: 0 success, 2 input error, 3 numerical failure.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dfr/defgraph/graph.hpp"
#include "dfr/defgraph/qslim.hpp"
#include "dfr/fmaps/fmap.hpp"
#include "dfr/pipeline/batch.hpp"
#include "dfr/spectral/eigenbasis.hpp"
#include "dfr/spectral/laplacian.hpp"

namespace fs = std::filesystem;
using namespace dfr;

namespace {

constexpr int kInputError = 2;
constexpr int kNumericalError = 3;

// Registration flags mirroring every config key, applied after --config.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::pair<const ConfigKey*, std::string>> values;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
    values.reserve(config_keys().size());
    for (const auto& k : config_keys()) {
      values.emplace_back(&k, std::string());
      app->add_option("--" + k.name, values.back().second, k.help);
    }
  }

  RegistrationConfig resolve(const CLI::App* app) const {
    RegistrationConfig cfg = config_path.empty() ? RegistrationConfig{} : load_config(config_path);
    for (const auto& [key, value] : values)
      if (app->count("--" + key->name) > 0) set_config_value(cfg, key->name, value);
    cfg.validate();
    return cfg;
  }
};

void print_energy_summary(const RegistrationResult& r) {
  std::cout << "nodes=" << r.graph.num_nodes() << " stage1_iterations=" << r.stage1.iterations
            << " stage2_iterations=" << r.stage2.iterations;
  if (!r.trace.empty()) {
    const auto& last = r.trace.back();
    std::cout << " E_total=" << last.total << " E_cd=" << last.cd << " E_corr=" << last.corr
              << " E_arap=" << last.arap;
  }
  std::cout << '\n';
}

void print_error(const std::string& label, const GeodesicErrorReport& e) {
  std::cout << label << "_x100=" << 100.0 * e.mean << " count=" << e.count << " excluded=" << e.excluded << '\n';
}

// ---- register ---------------------------------------------------------------

struct RegisterArgs {
  std::string source, target, source_features, target_features, out = "dfr_out";
  std::string align = "none", target_rotation, geodesics, graph;
  ConfigFlags flags;
};

int run_register(const RegisterArgs& a, const CLI::App* app) {
  const RegistrationConfig cfg = a.flags.resolve(app);
  const AlignMode mode = parse_align_mode(a.align);
  const TriMesh source = load_mesh(a.source);
  std::optional<Mat3> R;
  if (!a.target_rotation.empty()) R = read_rotation_file(a.target_rotation);
  Alignment info;
  const PointCloud target = align_input(load_point_cloud(a.target), mode, R ? &*R : nullptr, &info);

  std::optional<FeaturePair> features;
  if (!a.source_features.empty() || !a.target_features.empty()) {
    if (a.source_features.empty() || a.target_features.empty())
      throw InputError("--source-features and --target-features must be given together");
    features = FeaturePair{load_features_for(a.source_features, source.num_vertices(), &source.original_indices()),
                           load_features_for(a.target_features, target.size())};
  }
  std::optional<GeodesicMatrix> geo;
  if (!a.geodesics.empty()) {
    geo = GeodesicMatrix::load(a.geodesics);
    if (static_cast<int>(geo->size()) != source.num_vertices())
      throw InputError("geodesic cache has " + std::to_string(geo->size()) + " rows, source has " +
                       std::to_string(source.num_vertices()) + " vertices");
  }

  const RegistrationResult r = register_shapes(source, target, features ? &*features : nullptr, cfg,
                                               geo ? &*geo : nullptr);
  fs::create_directories(a.out);
  const fs::path out(a.out);
  save_mesh(r.deformed, (out / "deformed.off").string());
  write_correspondences((out / "map_source_to_target.txt").string(), r.maps.source_to_target, source.name(),
                        target.name());
  write_correspondences((out / "map_target_to_source.txt").string(), r.maps.target_to_source, target.name(),
                        source.name());
  write_trace_csv((out / "trace.csv").string(), r.trace);
  if (!a.graph.empty()) r.graph.save(a.graph);
  std::cout << "align=" << align_mode_name(mode) << '\n';
  print_energy_summary(r);
  std::cout << "runtime graph_s=" << r.graph_seconds << " geodesic_s=" << r.geodesic_seconds
            << " stage1_s=" << r.stage1.seconds << " stage2_s=" << r.stage2.seconds << '\n';
  return 0;
}

// ---- match ------------------------------------------------------------------

struct MatchArgs {
  std::string templ, template_features, shape1, features1, rotation1, shape2, features2, rotation2;
  std::string out, align = "none", gt, eval_mesh, work_dir;
  ConfigFlags flags;
};

int run_match(const MatchArgs& a, const CLI::App* app) {
  const RegistrationConfig cfg = a.flags.resolve(app);
  const AlignMode mode = parse_align_mode(a.align);
  const bool with_features = !a.template_features.empty();
  if (with_features && (a.features1.empty() || a.features2.empty()))
    throw InputError("--template-features needs --features1 and --features2");
  const PreparedTemplate templ = prepare_template({a.templ, a.template_features, ""}, mode, cfg);
  const TargetSpec s1{"shape1", a.shape1, with_features ? a.features1 : "", a.rotation1, "", ""};
  const TargetSpec s2{"shape2", a.shape2, with_features ? a.features2 : "", a.rotation2, "", a.eval_mesh};

  auto dir = [&](const char* name) { return a.work_dir.empty() ? std::string() : (fs::path(a.work_dir) / name).string(); };
  TargetOutcome r1, r2;
  std::exception_ptr failure;
  if (resolve_threads(0) >= 2) {
    std::thread t([&] {
      try {
        r2 = run_target(templ, s2, mode, cfg, dir("shape2"));
      } catch (...) {
        failure = std::current_exception();
      }
    });
    try {
      r1 = run_target(templ, s1, mode, cfg, dir("shape1"));
    } catch (...) {
      t.join();
      throw;
    }
    t.join();
    if (failure) std::rethrow_exception(failure);
  } else {
    r1 = run_target(templ, s1, mode, cfg, dir("shape1"));
    r2 = run_target(templ, s2, mode, cfg, dir("shape2"));
  }
  const PointMap map = compose_maps(r1.result.maps.target_to_source, r2.result.maps.source_to_target);
  write_correspondences(a.out, map, fs::path(a.shape1).stem().string(), fs::path(a.shape2).stem().string());
  std::cout << "points=" << map.size() << '\n';
  if (!a.gt.empty()) {
    const TriMesh m = load_mesh(a.eval_mesh.empty() ? a.shape2 : a.eval_mesh);
    Points v = (m.vertices().rowwise() - r2.alignment.center.transpose()) * r2.alignment.rotation.transpose();
    const TriMesh aligned = m.with_vertices(std::move(v));
    print_error("geodesic_error", geodesic_error(map, read_map_file(a.gt), geodesic_matrix(aligned),
                                                 surface_area(aligned)));
  }
  return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string pred, gt, mesh, geodesics;
};

int run_eval(const EvalArgs& a) {
  const TriMesh mesh = load_mesh(a.mesh);
  const SparseMap pred_pairs = read_map_file(a.pred);
  PointMap pred;
  for (const auto& [i, j] : pred_pairs) {
    if (static_cast<std::size_t>(i) >= pred.size()) pred.resize(static_cast<std::size_t>(i) + 1, -1);
    pred[i] = j;
  }
  const SparseMap gt = read_map_file(a.gt);
  for (const auto& [i, j] : gt)
    if (static_cast<std::size_t>(i) >= pred.size() || pred[i] < 0)
      throw InputError("prediction has no entry for ground-truth index " + std::to_string(i));
  const double area = surface_area(mesh);
  GeodesicErrorReport r;
  if (!a.geodesics.empty()) {
    const GeodesicMatrix geo = GeodesicMatrix::load(a.geodesics);
    if (static_cast<int>(geo.size()) != mesh.num_vertices()) throw InputError("geodesic cache does not match mesh");
    r = geodesic_error(pred, gt, geo, area);
  } else if (mesh.num_vertices() <= 15000) {
    r = geodesic_error(pred, gt, geodesic_matrix(mesh, resolve_threads(0)), area);
  } else {
    r = geodesic_error(pred, gt, LazyGeodesics(mesh), area);
  }
  print_error("geodesic_error", r);
  return 0;
}

// ---- fmap-diagnose ----------------------------------------------------------

struct DiagnoseArgs {
  std::string shape1, shape2, g1, g2, f1, f2;
  int k = 50;
  double reg = 1e-3, alpha = 100.0, gamma = 0.07, lambda_nce = 1.0;
  DfmWeights weights;
};

// Unit global variance, the scale at which the soft-map temperature is chosen.
FeatureMatrix unit_variance(const FeatureMatrix& f) {
  const RowMatrix c = f.values().rowwise() - f.values().colwise().mean();
  const double var = c.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(1, c.size()));
  return var > 0.0 ? FeatureMatrix(f.values() / std::sqrt(var), f.shape_id()) : f;
}

int run_diagnose(const DiagnoseArgs& a) {
  const TriMesh m1 = load_mesh(a.shape1), m2 = load_mesh(a.shape2);
  const FeatureMatrix G1 = load_features_for(a.g1, m1.num_vertices(), &m1.original_indices());
  const FeatureMatrix G2 = load_features_for(a.g2, m2.num_vertices(), &m2.original_indices());
  if (G1.dim() != G2.dim()) throw InputError("feature dimensions differ");
  const int k = std::min({a.k, m1.num_vertices(), m2.num_vertices()});
  if (k != a.k) std::cerr << "[dfr] warning: basis size reduced to " << k << '\n';
  const SpectralBasis b1 = eigenbasis(cotan_laplacian(m1), k);
  const SpectralBasis b2 = eigenbasis(cotan_laplacian(m2), k);
  const Eigen::MatrixXd A1 = project(b1, G1.values()), A2 = project(b2, G2.values());
  const FunctionalMap C12 = solve_fmap(A1, A2, a.reg, b1.eigenvalues, b2.eigenvalues);
  const FunctionalMap C21 = solve_fmap(A2, A1, a.reg, b2.eigenvalues, b1.eigenvalues);
  const FeatureMatrix S1 = unit_variance(G1), S2 = unit_variance(G2);
  const SoftMap pi12 = soft_map(S1, S2, a.alpha), pi21 = soft_map(S2, S1, a.alpha);
  const FmapLosses L = fmap_losses(C12.C, C21.C, pi12, pi21, b1, b2, a.weights);
  std::cout.precision(12);
  std::cout << "k = " << k << "\nE_bij = " << L.bij << "\nE_ortho = " << L.ortho << "\nE_align = " << L.align
            << "\nE_align_squared = " << L.align_sq << "\nE_DFM = " << L.dfm << '\n';
  if (!a.f1.empty() || !a.f2.empty()) {
    if (a.f1.empty() || a.f2.empty()) throw InputError("--point-features1 and --point-features2 go together");
    const FeatureMatrix F1 = load_features_for(a.f1, m1.num_vertices(), &m1.original_indices());
    const FeatureMatrix F2 = load_features_for(a.f2, m2.num_vertices(), &m2.original_indices());
    const double nce = nce_loss(F1, G1, a.gamma) + nce_loss(F2, G2, a.gamma);
    std::cout << "E_NCE = " << nce << "\nE_combined = " << L.dfm + a.lambda_nce * nce << '\n';
  }
  return 0;
}

// ---- decimate / geodesics / align -------------------------------------------

struct DecimateArgs {
  std::string input, output, graph;
  int target = 0;
  double ratio = 0.5;
  int skin_neighbors = 4;
  long long seed = -1;
};

int run_decimate(const DecimateArgs& a, const CLI::App* app) {
  const TriMesh mesh = load_mesh(a.input);
  const int target = app->count("--target") ? a.target
                                            : std::max(4, static_cast<int>(std::floor(mesh.num_vertices() * a.ratio)));
  DecimateOptions opts;
  if (a.seed >= 0) opts.random_order_seed = static_cast<std::uint64_t>(a.seed);
  const DecimateResult r = qslim_decimate(mesh, target, opts);
  save_mesh(r.mesh, a.output);
  std::cout << "vertices=" << r.mesh.num_vertices() << " faces=" << r.mesh.num_faces() << " requested=" << target
            << " stalled=" << (r.stalled ? 1 : 0) << " quadric_error=" << r.total_error << '\n';
  if (!a.graph.empty()) {
    if (a.seed >= 0) throw InputError("--graph uses greedy decimation; drop --random-seed");
    build_graph(mesh, r.mesh.num_vertices(), a.skin_neighbors).save(a.graph);
  }
  return 0;
}

struct GeodesicArgs {
  std::string mesh, output;
  unsigned threads = 0;
};

int run_geodesics(const GeodesicArgs& a) {
  const TriMesh mesh = load_mesh(a.mesh);
  const unsigned threads = resolve_threads(a.threads);
  geodesic_matrix(mesh, threads).save(a.output);
  std::cout << "vertices=" << mesh.num_vertices() << " threads=" << threads << '\n';
  return 0;
}

struct AlignArgs {
  std::string input, output, mode = "pca", rotation, applied;
};

int run_align(const AlignArgs& a) {
  const AlignMode mode = parse_align_mode(a.mode);
  std::optional<Mat3> R;
  if (!a.rotation.empty()) R = read_rotation_file(a.rotation);
  Alignment info;
  const auto shape = load_shape(a.input, ShapeKind::mesh);
  if (const auto* m = std::get_if<TriMesh>(&shape))
    save_mesh(align_input(*m, mode, R ? &*R : nullptr, &info), a.output);
  else
    save_point_cloud(align_input(std::get<PointCloud>(shape), mode, R ? &*R : nullptr, &info), a.output);
  if (!a.applied.empty()) write_rotation_file(a.applied, info.rotation);
  std::cout << "mode=" << align_mode_name(mode) << " center=" << info.center.transpose() << '\n';
  return 0;
}

// ---- batch ------------------------------------------------------------------

int run_batch_command(const std::string& manifest_path, unsigned threads, const CLI::App* sub) {
  RunManifest m = load_manifest(manifest_path);
  if (sub->count("--threads")) m.threads = threads;
  const BatchReport rep = run_batch(m);
  int code = 0;
  for (const auto& t : rep.targets) {
    std::cout << t.name << ": " << (t.ok ? "ok" : "FAILED " + t.error) << '\n';
    if (!t.ok) code = std::max(code, t.exit_code);
  }
  for (const auto& p : rep.pairs) {
    std::cout << p.source << " -> " << p.target << ": " << (p.ok ? "ok" : "FAILED " + p.error) << '\n';
    if (!p.ok) code = std::max(code, kInputError);
  }
  std::cout << "report=" << (fs::path(m.output) / "report.json").string() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature-guided non-rigid registration toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dfr 1.0");

  RegisterArgs reg;
  auto* c_reg = app.add_subcommand("register", "deform a source mesh onto a target shape");
  c_reg->add_option("--source", reg.source, "source mesh (OFF/OBJ/PLY)")->required()->check(CLI::ExistingFile);
  c_reg->add_option("--target", reg.target, "target shape; faces are ignored")->required()->check(CLI::ExistingFile);
  c_reg->add_option("--source-features", reg.source_features, "DFRF features of the source")->check(CLI::ExistingFile);
  c_reg->add_option("--target-features", reg.target_features, "DFRF features of the target")->check(CLI::ExistingFile);
  c_reg->add_option("--out", reg.out, "output directory")->capture_default_str();
  c_reg->add_option("--align", reg.align, "target alignment: none, rotation_file or pca")->capture_default_str();
  c_reg->add_option("--target-rotation", reg.target_rotation, "rotation file for rotation_file alignment")
      ->check(CLI::ExistingFile);
  c_reg->add_option("--geodesics", reg.geodesics, "DFRG cache of the source")->check(CLI::ExistingFile);
  c_reg->add_option("--save-graph", reg.graph, "write the deformation graph (DFRD)");
  reg.flags.attach(c_reg);

  MatchArgs mat;
  auto* c_mat = app.add_subcommand("match", "match two targets through a template mesh");
  c_mat->add_option("--template", mat.templ, "template mesh")->required()->check(CLI::ExistingFile);
  c_mat->add_option("--template-features", mat.template_features)->check(CLI::ExistingFile);
  c_mat->add_option("--shape1", mat.shape1)->required()->check(CLI::ExistingFile);
  c_mat->add_option("--features1", mat.features1)->check(CLI::ExistingFile);
  c_mat->add_option("--rotation1", mat.rotation1)->check(CLI::ExistingFile);
  c_mat->add_option("--shape2", mat.shape2)->required()->check(CLI::ExistingFile);
  c_mat->add_option("--features2", mat.features2)->check(CLI::ExistingFile);
  c_mat->add_option("--rotation2", mat.rotation2)->check(CLI::ExistingFile);
  c_mat->add_option("--out", mat.out, "map file from shape1 points to shape2 points")->required();
  c_mat->add_option("--align", mat.align)->capture_default_str();
  c_mat->add_option("--gt", mat.gt, "ground-truth shape1 -> shape2 map")->check(CLI::ExistingFile);
  c_mat->add_option("--eval-mesh", mat.eval_mesh, "mesh of shape2 for evaluation")->check(CLI::ExistingFile);
  c_mat->add_option("--work-dir", mat.work_dir, "also write per-shape registration artifacts here");
  mat.flags.attach(c_mat);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "area-normalized geodesic error of a map");
  c_eval->add_option("--pred", ev.pred, "predicted map")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--gt", ev.gt, "ground-truth map (may be sparse)")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--mesh", ev.mesh, "target mesh")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--geodesics", ev.geodesics, "DFRG cache of the target mesh")->check(CLI::ExistingFile);

  DiagnoseArgs dg;
  auto* c_dg = app.add_subcommand("fmap-diagnose", "functional-map losses for a shape pair and its features");
  c_dg->add_option("--shape1", dg.shape1)->required()->check(CLI::ExistingFile);
  c_dg->add_option("--shape2", dg.shape2)->required()->check(CLI::ExistingFile);
  c_dg->add_option("--features1", dg.g1, "mesh features of shape1")->required()->check(CLI::ExistingFile);
  c_dg->add_option("--features2", dg.g2, "mesh features of shape2")->required()->check(CLI::ExistingFile);
  c_dg->add_option("--point-features1", dg.f1, "point features of shape1 for the contrastive term")
      ->check(CLI::ExistingFile);
  c_dg->add_option("--point-features2", dg.f2)->check(CLI::ExistingFile);
  c_dg->add_option("--k", dg.k, "basis size")->capture_default_str()->check(CLI::PositiveNumber);
  c_dg->add_option("--reg", dg.reg, "commutativity regularization")->capture_default_str()->check(CLI::NonNegativeNumber);
  c_dg->add_option("--alpha", dg.alpha, "soft-map temperature")->capture_default_str()->check(CLI::PositiveNumber);
  c_dg->add_option("--gamma", dg.gamma, "contrastive temperature")->capture_default_str()->check(CLI::PositiveNumber);
  c_dg->add_option("--lambda-nce", dg.lambda_nce)->capture_default_str()->check(CLI::NonNegativeNumber);
  c_dg->add_option("--lambda-bij", dg.weights.bij)->capture_default_str();
  c_dg->add_option("--lambda-orth", dg.weights.orth)->capture_default_str();
  c_dg->add_option("--lambda-align", dg.weights.align)->capture_default_str();

  DecimateArgs dec;
  auto* c_dec = app.add_subcommand("decimate", "quadric-error edge-collapse decimation");
  c_dec->add_option("--input", dec.input)->required()->check(CLI::ExistingFile);
  c_dec->add_option("--output", dec.output)->required();
  c_dec->add_option("--target", dec.target, "vertex count to reach");
  c_dec->add_option("--ratio", dec.ratio, "target as a fraction of the input")->capture_default_str();
  c_dec->add_option("--graph", dec.graph, "also write a deformation graph (DFRD)");
  c_dec->add_option("--skin-neighbors", dec.skin_neighbors)->capture_default_str();
  c_dec->add_option("--random-seed", dec.seed, "collapse in random order (baseline)");

  GeodesicArgs geo;
  auto* c_geo = app.add_subcommand("geodesics", "all-pairs edge-graph geodesics (DFRG)");
  c_geo->add_option("--mesh", geo.mesh)->required()->check(CLI::ExistingFile);
  c_geo->add_option("--output", geo.output)->required();
  c_geo->add_option("--threads", geo.threads, "0 = all cores; capped by DFR_THREADS")->capture_default_str();

  AlignArgs al;
  auto* c_al = app.add_subcommand("align", "center and rotate a shape");
  c_al->add_option("--input", al.input)->required()->check(CLI::ExistingFile);
  c_al->add_option("--output", al.output)->required();
  c_al->add_option("--mode", al.mode, "none, rotation_file or pca")->capture_default_str();
  c_al->add_option("--rotation", al.rotation, "rotation file R; its transpose is applied")->check(CLI::ExistingFile);
  c_al->add_option("--applied", al.applied, "write the applied rotation");

  std::string manifest;
  unsigned batch_threads = 0;
  auto* c_batch = app.add_subcommand("batch", "register a template to many targets from a JSON manifest");
  c_batch->add_option("manifest", manifest)->required()->check(CLI::ExistingFile);
  c_batch->add_option("--threads", batch_threads, "worker count; 0 = all cores; capped by DFR_THREADS");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kInputError;
  }

  try {
    if (*c_reg) return run_register(reg, c_reg);
    if (*c_mat) return run_match(mat, c_mat);
    if (*c_eval) return run_eval(ev);
    if (*c_dg) return run_diagnose(dg);
    if (*c_dec) return run_decimate(dec, c_dec);
    if (*c_geo) return run_geodesics(geo);
    if (*c_al) return run_align(al);
    if (*c_batch) return run_batch_command(manifest, batch_threads, c_batch);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  }
  return kInputError;
}
