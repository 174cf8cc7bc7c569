#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "dfr/common/log.hpp"
#include "dfr/geometry/geodesic.hpp"
#include "dfr/registration/register.hpp"
#include "support/shapes.hpp"

using namespace dfr;
using dfr::testing::TempDir;

namespace {

int brute_nearest(const RowMatrix& set, const Eigen::RowVectorXd& q) {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < set.rows(); ++j) {
    const double d = (set.row(j) - q).squaredNorm();
    if (d < bd) {
      bd = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

std::vector<CorrespondencePair> brute_filter(const HardMaps& m, const GeodesicMatrix& geo, double tau) {
  std::vector<CorrespondencePair> out;
  for (std::size_t i = 0; i < m.source_to_target.size(); ++i) {
    const int j = m.source_to_target[i];
    if (geo(i, static_cast<std::size_t>(m.target_to_source[j])) <= tau) out.push_back({static_cast<int>(i), j});
  }
  return out;
}

// Scaled stage weights used for the synthetic bend: the correspondence and Chamfer
// terms are means over points while the ARAP term sums over graph edges.
RegistrationConfig bend_config() {
  RegistrationConfig cfg;
  cfg.stage1.weights.arap *= 1e-4;
  cfg.stage2.weights.arap *= 1e-4;
  return cfg;
}

FeaturePair oracle_features(const TriMesh& source) {
  return {FeatureMatrix(source.vertices(), "source"), FeatureMatrix(source.vertices(), "target")};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST(NearestMaps, IdentityAndPermutation) {
  std::mt19937_64 rng(1);
  const Points p = dfr::testing::random_points(rng, 25);
  const HardMaps id = nearest_maps(p, p);
  for (int i = 0; i < 25; ++i) {
    EXPECT_EQ(id.source_to_target[i], i);
    EXPECT_EQ(id.target_to_source[i], i);
  }
  std::vector<int> perm(25);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Points q(25, 3);
  for (int i = 0; i < 25; ++i) q.row(perm[i]) = p.row(i);
  const HardMaps pm = nearest_maps(p, q);
  for (int i = 0; i < 25; ++i) {
    EXPECT_EQ(pm.source_to_target[i], perm[i]);
    EXPECT_EQ(pm.target_to_source[perm[i]], i);
  }
}

TEST(NearestMaps, MatchesBruteForce) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> size(1, 30), dim(1, 8);
  for (int t = 0; t < 100; ++t) {
    const int n = size(rng), m = size(rng), d = dim(rng);
    RowMatrix a(n, d), b(m, d);
    std::normal_distribution<double> g;
    for (auto& x : a.reshaped()) x = g(rng);
    for (auto& x : b.reshaped()) x = g(rng);
    const HardMaps maps = nearest_maps(a, b);
    for (int i = 0; i < n; ++i) EXPECT_EQ(maps.source_to_target[i], brute_nearest(b, a.row(i)));
    for (int j = 0; j < m; ++j) EXPECT_EQ(maps.target_to_source[j], brute_nearest(a, b.row(j)));
  }
  EXPECT_THROW(nearest_maps(RowMatrix::Zero(2, 3), RowMatrix::Zero(2, 4)), InputError);
}

TEST(UpdateCorrespondences, StageChoosesSpace) {
  std::mt19937_64 rng(3);
  const Points x = dfr::testing::random_points(rng, 10), y = dfr::testing::random_points(rng, 12);
  // Features that make the feature-space map a fixed pattern unrelated to coordinates.
  RowMatrix fs(10, 1), ft(12, 1);
  for (int i = 0; i < 10; ++i) fs(i, 0) = 10.0 * ((i * 7) % 10);
  for (int j = 0; j < 12; ++j) ft(j, 0) = 10.0 * j;
  const FeatureMatrix Fs(fs), Ft(ft);
  const HardMaps one = update_correspondences(x, y, &Fs, &Ft, Stage::one);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(one.source_to_target[i], (i * 7) % 10);
  const HardMaps two = update_correspondences(x, y, &Fs, &Ft, Stage::two);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(two.source_to_target[i], brute_nearest(y, x.row(i)));
  EXPECT_THROW(update_correspondences(x, y, nullptr, &Ft, Stage::one), InputError);
  EXPECT_THROW(update_correspondences(x, y, &Ft, &Ft, Stage::one), InputError);
}

TEST(BijectivityFilter, RejectsRoundTripTwoEdgesAway) {
  // Path of five unit edges; vertex 1 maps to a target whose back-map lands on vertex 3.
  std::vector<float> d(36);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) d[i * 6 + j] = static_cast<float>(std::abs(i - j));
  const GeodesicMatrix geo(6, d, "path");
  HardMaps m;
  m.source_to_target = {0, 1, 2, 3, 4, 5};
  m.target_to_source = {0, 3, 2, 3, 4, 4};
  const auto kept = bijectivity_filter(m, geo, 1.0);
  std::vector<int> ids;
  for (auto p : kept) ids.push_back(p.source);
  EXPECT_EQ(ids, (std::vector<int>{0, 2, 3, 4, 5}));
  EXPECT_EQ(bijectivity_filter(m, geo, 2.0).size(), 6u);
  EXPECT_THROW(bijectivity_filter(m, geo, 0.0), InputError);
}

TEST(BijectivityFilter, MatchesOracleOnGridAndIsMonotone) {
  std::mt19937_64 rng(4);
  const TriMesh grid = dfr::testing::grid(5, 1.0);
  const GeodesicMatrix geo = geodesic_matrix(grid);
  std::uniform_int_distribution<int> m_size(1, 30);
  for (int t = 0; t < 100; ++t) {
    const int m = m_size(rng);
    HardMaps maps{dfr::testing::random_map(rng, 25, m), dfr::testing::random_map(rng, m, 25)};
    std::vector<CorrespondencePair> previous;
    for (double tau : {0.5, 1.0, 1.5, 2.5, 4.0, 10.0}) {
      const auto kept = bijectivity_filter(maps, geo, tau);
      EXPECT_EQ(kept, brute_filter(maps, geo, tau));
      for (const auto& p : previous) EXPECT_NE(std::find(kept.begin(), kept.end(), p), kept.end());
      previous = kept;
    }
    const auto all = bijectivity_filter(maps, geo, std::numeric_limits<double>::infinity());
    EXPECT_EQ(all, CorrespondenceSet::all_pairs(maps));
  }
}

TEST(BijectivityFilter, LazyGeodesicsAgree) {
  std::mt19937_64 rng(5);
  const TriMesh m = dfr::testing::icosphere(1);
  const GeodesicMatrix dense = geodesic_matrix(m);
  const LazyGeodesics lazy(m);
  for (int t = 0; t < 20; ++t) {
    HardMaps maps{dfr::testing::random_map(rng, m.num_vertices(), 20), dfr::testing::random_map(rng, 20, m.num_vertices())};
    EXPECT_EQ(bijectivity_filter(maps, dense, 0.7), bijectivity_filter(maps, lazy, 0.7));
  }
}

TEST(OptimizeStage, RestTargetStaysAtZero) {
  const TriMesh m = dfr::testing::grid(5, 0.25);
  const DeformGraph g = build_graph(m, 12);
  StageParams p;
  p.weights = {1.0, 0.01, 1.0, 0.2};
  CorrespondenceProvider provider = [&](const Points& deformed, int iteration) {
    CorrespondenceSet s;
    s.maps = nearest_maps(deformed, m.vertices());
    s.pairs = CorrespondenceSet::all_pairs(s.maps);
    s.iteration = iteration;
    return s;
  };
  const StageResult r = optimize_stage(GraphState::identity(12), g, m.vertices(), m.vertices(), provider, p);
  EXPECT_TRUE(r.converged);
  // The first step always counts as a decrease, then patience + 1 flat steps follow.
  EXPECT_EQ(r.iterations, p.patience + 2);
  for (const auto& row : r.trace) EXPECT_LE(row.total, 1e-10);
  EXPECT_LE(r.state.theta.norm(), 1e-6);
  EXPECT_LE(r.state.delta.norm(), 1e-6);
}

TEST(OptimizeStage, LineSearchIsMonotoneBetweenRefreshes) {
  const auto bend = dfr::testing::grid_bend();
  StageParams p;
  p.weights = {1.0, 0.01, 1e-4, 0.2};
  p.optimizer.line_search = true;
  p.optimizer.learning_rate = 1e-2;
  p.update_interval = 50;
  p.max_iterations = 300;
  CorrespondenceProvider provider = [&](const Points& deformed, int iteration) {
    CorrespondenceSet s;
    s.maps = nearest_maps(deformed, bend.target);
    s.pairs = CorrespondenceSet::all_pairs(s.maps);
    s.iteration = iteration;
    return s;
  };
  const StageResult r =
      optimize_stage(GraphState::identity(bend.graph.num_nodes()), bend.graph, bend.source.vertices(), bend.target,
                     provider, p);
  ASSERT_GT(r.trace.size(), 2u);
  for (std::size_t k = 1; k < r.trace.size(); ++k) {
    if (static_cast<int>(k) % p.update_interval == 0) continue;
    EXPECT_LE(r.trace[k].total, r.trace[k - 1].total) << k;
  }
  EXPECT_LT(r.trace.back().total, r.trace.front().total);
}

TEST(OptimizeStage, StopsAtIterationCap) {
  const auto bend = dfr::testing::grid_bend();
  StageParams p;
  p.weights = {1.0, 0.0, 1e-4, 0.2};
  p.max_iterations = 7;
  CorrespondenceProvider provider = [&](const Points&, int) { return CorrespondenceSet{}; };
  const StageResult r =
      optimize_stage(GraphState::identity(bend.graph.num_nodes()), bend.graph, bend.source.vertices(), bend.target,
                     provider, p);
  EXPECT_EQ(r.iterations, 7);
  EXPECT_FALSE(r.converged);
}

TEST(Registration, SyntheticBendRecoveredAndStageOneHelps) {
  const auto bend = dfr::testing::grid_bend();
  const PointCloud target(bend.target, "bent");
  const FeaturePair features = oracle_features(bend.source);
  const RegistrationConfig cfg = bend_config();

  const auto both = register_shapes(bend.source, target, &features, cfg);
  RegistrationConfig only2 = cfg;
  only2.stage1.enabled = false;
  const auto second = register_shapes(bend.source, target, &features, only2);

  const double e_both = dfr::testing::mean_vertex_error(both.deformed.vertices(), bend.target) / bend.diagonal;
  const double e_second = dfr::testing::mean_vertex_error(second.deformed.vertices(), bend.target) / bend.diagonal;
  EXPECT_TRUE(both.stage1_ran);
  EXPECT_FALSE(second.stage1_ran);
  EXPECT_LE(e_both, 0.01);
  EXPECT_LT(e_both, e_second);
  EXPECT_TRUE(both.stage2.converged);
}

TEST(Registration, RigidRotationGivesIdentityMap) {
  const TriMesh source = dfr::testing::icosphere(2);
  const Mat3 R = Eigen::AngleAxisd(std::numbers::pi / 6, Vec3::UnitZ()).toRotationMatrix();
  const PointCloud target(source.vertices() * R.transpose(), "rot");
  const FeaturePair features = oracle_features(source);
  const auto r = register_shapes(source, target, &features, bend_config());
  int correct = 0;
  for (int i = 0; i < source.num_vertices(); ++i) correct += r.maps.source_to_target[i] == i;
  EXPECT_GE(correct, static_cast<int>(std::ceil(0.99 * source.num_vertices())));
}

TEST(Registration, IdenticalTargetIsFixedPoint) {
  const TriMesh source = dfr::testing::grid(6, 0.2);
  const FeaturePair features = oracle_features(source);
  const auto r = register_shapes(source, PointCloud(source.vertices(), "same"), &features, RegistrationConfig{});
  for (int i = 0; i < source.num_vertices(); ++i) {
    EXPECT_EQ(r.maps.source_to_target[i], i);
    EXPECT_EQ(r.maps.target_to_source[i], i);
  }
  EXPECT_LE((r.deformed.vertices() - source.vertices()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Registration, TraceHasOneStageSwitchAndContiguousIterations) {
  const auto bend = dfr::testing::grid_bend();
  const FeaturePair features = oracle_features(bend.source);
  const auto r = register_shapes(bend.source, PointCloud(bend.target, "t"), &features, bend_config());
  ASSERT_FALSE(r.trace.empty());
  int switches = 0;
  for (std::size_t k = 0; k < r.trace.size(); ++k) {
    EXPECT_EQ(r.trace[k].iteration, static_cast<int>(k));
    if (k > 0 && r.trace[k].stage != r.trace[k - 1].stage) {
      ++switches;
      EXPECT_EQ(r.trace[k - 1].stage, Stage::one);
      EXPECT_EQ(r.trace[k].stage, Stage::two);
    }
  }
  EXPECT_EQ(switches, 1);
  EXPECT_EQ(r.trace.front().stage, Stage::one);
  EXPECT_EQ(static_cast<int>(r.trace.size()), r.stage1.iterations + r.stage2.iterations);
}

TEST(Registration, Deterministic) {
  const auto bend = dfr::testing::grid_bend();
  const FeaturePair features = oracle_features(bend.source);
  const PointCloud target(bend.target, "t");
  const auto a = register_shapes(bend.source, target, &features, bend_config());
  const auto b = register_shapes(bend.source, target, &features, bend_config());
  EXPECT_TRUE(a.deformed.vertices() == b.deformed.vertices());
  EXPECT_EQ(a.maps.source_to_target, b.maps.source_to_target);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k) EXPECT_EQ(a.trace[k].total, b.trace[k].total);
}

TEST(Registration, MissingFeaturesSkipStageOneWithWarning) {
  const auto bend = dfr::testing::grid_bend();
  RegistrationConfig cfg = bend_config();
  cfg.max_iterations = 50;
  log::ScopedCapture capture;
  const auto r = register_shapes(bend.source, PointCloud(bend.target, "t"), nullptr, cfg);
  EXPECT_FALSE(r.stage1_ran);
  EXPECT_TRUE(capture.contains("Stage I skipped"));
  for (const auto& row : r.trace) EXPECT_EQ(row.stage, Stage::two);
}

TEST(Registration, InputValidation) {
  const TriMesh s = dfr::testing::icosphere(1);
  const PointCloud t(s.vertices(), "t");
  const FeaturePair wrong_rows{FeatureMatrix(RowMatrix::Zero(3, 2)), FeatureMatrix(RowMatrix::Zero(s.num_vertices(), 2))};
  EXPECT_THROW(register_shapes(s, t, &wrong_rows, RegistrationConfig{}), InputError);
  const FeaturePair wrong_dim{FeatureMatrix(RowMatrix::Zero(s.num_vertices(), 2)),
                              FeatureMatrix(RowMatrix::Zero(s.num_vertices(), 3))};
  EXPECT_THROW(register_shapes(s, t, &wrong_dim, RegistrationConfig{}), InputError);
  RegistrationConfig bad;
  bad.patience = -1;
  EXPECT_THROW(register_shapes(s, t, nullptr, bad), InputError);
  RegistrationConfig zero;
  zero.stage2.weights = {0, 0, 0, 0.2};
  EXPECT_THROW(register_shapes(s, t, nullptr, zero), InputError);
}

TEST(OutputFiles, CorrespondenceFileFormat) {
  TempDir dir;
  const auto path = dir.file("map.txt");
  write_correspondences(path, {2, 0, 1}, "src", "tgt");
  EXPECT_EQ(slurp(path), "# source=src target=tgt stage=final\n0 2\n1 0\n2 1\n");
}

TEST(OutputFiles, TraceCsvFormat) {
  TempDir dir;
  const auto path = dir.file("trace.csv");
  std::vector<TraceRow> rows{{0, Stage::one, 1.5, 0.25, 1.0, 0.125, 10}, {1, Stage::two, 0.1, 0.1, 0.0, 1e-20, 7}};
  write_trace_csv(path, rows);
  std::istringstream in(slurp(path));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "iter,stage,E_total,E_cd,E_corr,E_arap,|C|");
  std::getline(in, line);
  EXPECT_EQ(line, "0,I,1.5,0.25,1,0.125,10");
  std::getline(in, line);
  EXPECT_EQ(line, "1,II,0.1,0.1,0,1e-20,7");
  EXPECT_FALSE(std::getline(in, line));
}
