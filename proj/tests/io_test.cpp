#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <random>
#include <string>

#include "dfr/defgraph/graph.hpp"
#include "dfr/fmaps/features.hpp"
#include "dfr/geometry/io.hpp"
#include "dfr/spectral/eigenbasis.hpp"
#include "support/shapes.hpp"

using namespace dfr;
using dfr::testing::TempDir;

namespace {

void write(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

template <typename F>
ParseError expect_parse_error(F&& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e;
  }
  ADD_FAILURE() << "expected ParseError";
  return ParseError("", "", "");
}

void expect_same(const TriMesh& a, const TriMesh& b) {
  ASSERT_EQ(a.num_vertices(), b.num_vertices());
  ASSERT_EQ(a.num_faces(), b.num_faces());
  EXPECT_EQ(0, std::memcmp(a.vertices().data(), b.vertices().data(), sizeof(double) * a.vertices().size()));
  EXPECT_TRUE(a.faces() == b.faces());
}

// Coordinates that need all 17 significant digits to round-trip.
TriMesh awkward_mesh() {
  std::mt19937_64 rng(7);
  TriMesh base = dfr::testing::icosphere(1);
  Points p = base.vertices() + 1e-3 * dfr::testing::random_points(rng, base.num_vertices());
  p(0, 0) = 1.0 / 3.0;
  p(1, 1) = -2.5e-300;
  return TriMesh(p, base.faces(), "awkward");
}

}  // namespace

TEST(OffFormat, MinimalTriangle) {
  TempDir dir;
  const auto path = dir.file("tri.off");
  write(path, "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
  const TriMesh m = load_mesh(path);
  EXPECT_EQ(m.num_vertices(), 3);
  EXPECT_EQ(m.num_faces(), 1);
  EXPECT_EQ(m.vertices()(1, 0), 1.0);
  EXPECT_EQ(m.faces()(0, 2), 2);
  EXPECT_EQ(m.name(), "tri");
}

TEST(OffFormat, CommentsAndBlankLines) {
  TempDir dir;
  const auto path = dir.file("c.off");
  write(path, "# header comment\nOFF\n\n3 1 0  # counts\n0 0 0\n1 0 0\n\n0 1 0\n3 0 1 2\n");
  EXPECT_EQ(load_mesh(path).num_faces(), 1);
}

TEST(OffFormat, MissingVertexRecordNamesLine) {
  TempDir dir;
  const auto path = dir.file("short.off");
  write(path, "OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n");
  const ParseError e = expect_parse_error([&] { load_mesh(path); });
  EXPECT_EQ(e.path(), path);
  EXPECT_EQ(e.location(), "line 6");
  EXPECT_NE(std::string(e.what()).find("vertex record 3 of 4"), std::string::npos) << e.what();
}

TEST(OffFormat, NonTriangleAndOutOfRangeFacesAreDistinct) {
  TempDir dir;
  const auto quad = dir.file("quad.off");
  write(quad, "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n");
  const ParseError a = expect_parse_error([&] { load_mesh(quad); });
  EXPECT_EQ(a.location(), "line 7");
  EXPECT_NE(std::string(a.what()).find("non-triangle"), std::string::npos) << a.what();

  const auto range = dir.file("range.off");
  write(range, "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 3\n");
  const ParseError b = expect_parse_error([&] { load_mesh(range); });
  EXPECT_EQ(b.location(), "line 6");
  EXPECT_NE(std::string(b.what()).find("out of range"), std::string::npos) << b.what();
  EXPECT_STRNE(a.what(), b.what());
}

TEST(OffFormat, BadNumberAndMagic) {
  TempDir dir;
  const auto bad = dir.file("bad.off");
  write(bad, "OFF\n3 1 0\n0 0 0\n1 zero 0\n0 1 0\n3 0 1 2\n");
  EXPECT_EQ(expect_parse_error([&] { load_mesh(bad); }).location(), "line 4");
  const auto nomagic = dir.file("nomagic.off");
  write(nomagic, "COFF\n3 1 0\n");
  expect_parse_error([&] { load_mesh(nomagic); });
}

TEST(ObjFormat, MatchesOffBitForBit) {
  TempDir dir;
  const TriMesh m = awkward_mesh();
  save_mesh(m, dir.file("m.off"));
  save_mesh(m, dir.file("m.obj"));
  const TriMesh off = load_mesh(dir.file("m.off"));
  const TriMesh obj = load_mesh(dir.file("m.obj"));
  expect_same(off, obj);
  expect_same(off, m);
}

TEST(ObjFormat, SlashesNegativeIndicesAndIgnoredRecords) {
  TempDir dir;
  const auto path = dir.file("n.obj");
  write(path,
        "mtllib x.mtl\no thing\nv 0 0 0\nv 1 0 0\nvn 0 0 1\nvt 0 0\nv 0 1 0\n"
        "usemtl m\ns off\nf 1/1/1 2//1 -1\n");
  const TriMesh m = load_mesh(path);
  ASSERT_EQ(m.num_faces(), 1);
  EXPECT_EQ(m.faces()(0, 0), 0);
  EXPECT_EQ(m.faces()(0, 1), 1);
  EXPECT_EQ(m.faces()(0, 2), 2);
}

TEST(ObjFormat, QuadAndOutOfRangeErrors) {
  TempDir dir;
  const auto quad = dir.file("q.obj");
  write(quad, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
  const ParseError a = expect_parse_error([&] { load_mesh(quad); });
  EXPECT_EQ(a.location(), "line 5");
  const auto range = dir.file("r.obj");
  write(range, "v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1 2 9\n");
  const ParseError b = expect_parse_error([&] { load_mesh(range); });
  EXPECT_EQ(b.location(), "line 4");
  EXPECT_NE(std::string(b.what()).find("out of range"), std::string::npos);
}

TEST(PlyFormat, AsciiWithMixedTypes) {
  TempDir dir;
  const auto path = dir.file("a.ply");
  write(path,
        "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 3\nproperty float x\nproperty float y\n"
        "property float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\n"
        "end_header\n0 0 0 255\n1 0 0 0\n0 1 0 9\n3 0 1 2\n");
  const TriMesh m = load_mesh(path);
  EXPECT_EQ(m.num_vertices(), 3);
  EXPECT_EQ(m.num_faces(), 1);
  EXPECT_EQ(m.vertices()(2, 1), 1.0);
}

TEST(PlyFormat, AsciiErrorsUseFileLineNumbers) {
  TempDir dir;
  const auto path = dir.file("e.ply");
  write(path,
        "ply\nformat ascii 1.0\nelement vertex 3\nproperty double x\nproperty double y\nproperty double z\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n4 0 1 2 2\n");
  const ParseError e = expect_parse_error([&] { load_mesh(path); });
  EXPECT_EQ(e.location(), "line 13");
}

TEST(PlyFormat, BinaryRoundTripAndTruncationOffset) {
  TempDir dir;
  const TriMesh m = awkward_mesh();
  const auto path = dir.file("b.ply");
  save_mesh(m, path, PlyEncoding::binary_little_endian);
  expect_same(load_mesh(path), m);

  std::string bytes = slurp(path);
  const std::size_t header = bytes.find("end_header\n") + std::strlen("end_header\n");
  const std::size_t cut = header + static_cast<std::size_t>(m.num_vertices()) * 24 + 5;
  bytes.resize(cut);
  const auto trunc = dir.file("t.ply");
  write(trunc, bytes);
  const ParseError e = expect_parse_error([&] { load_mesh(trunc); });
  EXPECT_EQ(e.location().rfind("byte ", 0), 0u) << e.location();
  const std::size_t offset = std::stoul(e.location().substr(5));
  EXPECT_GE(offset, header);
  EXPECT_LE(offset, cut);
}

TEST(PlyFormat, RejectsBigEndian) {
  TempDir dir;
  const auto path = dir.file("be.ply");
  write(path, "ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nproperty float y\n"
              "property float z\nend_header\n");
  expect_parse_error([&] { load_mesh(path); });
}

TEST(ShapeIo, SaveLoadIsIdempotentForEveryFormat) {
  TempDir dir;
  const TriMesh m = awkward_mesh();
  struct Case {
    const char* name;
    PlyEncoding enc;
  };
  for (const Case c : {Case{"x.off", PlyEncoding::ascii}, Case{"x.obj", PlyEncoding::ascii},
                       Case{"x.ply", PlyEncoding::ascii}, Case{"y.ply", PlyEncoding::binary_little_endian}}) {
    SCOPED_TRACE(c.name);
    const auto p1 = dir.file(std::string("1") + c.name);
    const auto p2 = dir.file(std::string("2") + c.name);
    save_mesh(m, p1, c.enc);
    const TriMesh once = load_mesh(p1);
    save_mesh(once, p2, c.enc);
    expect_same(load_mesh(p2), once);
    EXPECT_EQ(slurp(p1), slurp(p2));
  }
}

TEST(ShapeIo, PointCloudsIgnoreFaces) {
  TempDir dir;
  const auto path = dir.file("pc.off");
  write(path, "OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n5 5 5\n4 0 1 2 3\n");
  const PointCloud c = load_point_cloud(path);
  EXPECT_EQ(c.size(), 4);
  EXPECT_THROW(load_mesh(path), ParseError);

  std::mt19937_64 rng(3);
  const PointCloud cloud(dfr::testing::random_points(rng, 20), "cloud");
  for (const char* name : {"c.off", "c.obj", "c.ply"}) {
    save_point_cloud(cloud, dir.file(name));
    const PointCloud back = load_point_cloud(dir.file(name));
    EXPECT_TRUE(back.points() == cloud.points()) << name;
  }
}

TEST(ShapeIo, MeshWithoutFacesAndUnknownExtension) {
  TempDir dir;
  const auto path = dir.file("v.obj");
  write(path, "v 0 0 0\nv 1 0 0\n");
  EXPECT_THROW(load_mesh(path), ParseError);
  EXPECT_THROW(load_mesh(dir.file("shape.stl")), InputError);
  EXPECT_THROW(load_mesh(dir.file("missing.off")), InputError);
}

TEST(FeatureFile, RoundTripAndLayout) {
  TempDir dir;
  RowMatrix values(3, 2);
  values << 1, 2, 3, 4, 5, 6.5;
  const FeatureMatrix f(values, "shape_a");
  const auto path = dir.file("a.dfrf");
  f.save(path);
  const std::string bytes = slurp(path);
  ASSERT_EQ(bytes.size(), 4u + 4u + 8u + 8u + 6u * 8u);
  EXPECT_EQ(bytes.substr(0, 4), "DFRF");
  std::uint32_t version;
  std::uint64_t n, d;
  double last;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&n, bytes.data() + 8, 8);
  std::memcpy(&d, bytes.data() + 16, 8);
  std::memcpy(&last, bytes.data() + 24 + 5 * 8, 8);
  EXPECT_EQ(version, 1u);
  EXPECT_EQ(n, 3u);
  EXPECT_EQ(d, 2u);
  EXPECT_EQ(last, 6.5);

  const FeatureMatrix back = FeatureMatrix::load(path);
  EXPECT_TRUE(back.values() == values);
  EXPECT_EQ(back.shape_id(), "");
}

TEST(FeatureFile, SidecarPinsOwner) {
  TempDir dir;
  RowMatrix values = RowMatrix::Ones(4, 3);
  const FeatureMatrix f(values, "owner");
  const auto path = dir.file("o.dfrf");
  f.save(path);
  f.save_sidecar(path);
  const FeatureMatrix back = FeatureMatrix::load(path);
  EXPECT_EQ(back.shape_id(), "owner");
  EXPECT_NO_THROW(back.check_owner(4, "test"));
  EXPECT_THROW(back.check_owner(5, "test"), InputError);

  write(path + ".meta", "shape = owner\npoints = 7\n");
  EXPECT_THROW(FeatureMatrix::load(path), InputError);
}

TEST(FeatureFile, CorruptFilesFail) {
  TempDir dir;
  const auto path = dir.file("x.dfrf");
  FeatureMatrix(RowMatrix::Zero(2, 2)).save(path);
  std::string bytes = slurp(path);
  write(dir.file("short.dfrf"), bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(FeatureMatrix::load(dir.file("short.dfrf")), ParseError);
  bytes[0] = 'X';
  write(dir.file("magic.dfrf"), bytes);
  const ParseError e = expect_parse_error([&] { FeatureMatrix::load(dir.file("magic.dfrf")); });
  EXPECT_EQ(e.location(), "byte 0");
  RowMatrix bad(1, 1);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(FeatureMatrix(bad, "nan"), InputError);
}

TEST(BasisFile, RoundTripAndLayout) {
  TempDir dir;
  SpectralBasis b;
  b.phi.resize(3, 2);
  b.phi << 1, 2, 3, 4, 5, 6;
  b.eigenvalues = Eigen::Vector2d(0.0, 0.25);
  b.mass = Eigen::Vector3d(0.1, 0.2, 0.3);
  const auto path = dir.file("b.dfrb");
  b.save(path);
  const std::string bytes = slurp(path);
  ASSERT_EQ(bytes.size(), 24u + (2u + 3u + 6u) * 8u);
  EXPECT_EQ(bytes.substr(0, 4), "DFRB");
  double phi01;
  std::memcpy(&phi01, bytes.data() + 24 + 5 * 8 + 8, 8);
  EXPECT_EQ(phi01, 2.0);  // row-major
  const SpectralBasis back = SpectralBasis::load(path);
  EXPECT_TRUE(back.phi == b.phi);
  EXPECT_TRUE(back.eigenvalues == b.eigenvalues);
  EXPECT_TRUE(back.mass == b.mass);
  write(dir.file("cut.dfrb"), bytes.substr(0, 40));
  EXPECT_THROW(SpectralBasis::load(dir.file("cut.dfrb")), ParseError);
}

TEST(GraphFile, RoundTripAndLayout) {
  TempDir dir;
  const TriMesh cube = dfr::testing::unit_cube();
  const DeformGraph g = build_graph(cube, 5, 4);
  const auto path = dir.file("g.dfrd");
  g.save(path);
  const std::string bytes = slurp(path);
  std::size_t edges = 0;
  for (const auto& n : g.neighbors) edges += n.size();
  const std::size_t H = 5, K = 4, N = 8;
  EXPECT_EQ(bytes.size(), 4 + 4 + 24 + H * 24 + (H + 1) * 8 + edges * 4 + N * K * 4 + N * K * 8);
  EXPECT_EQ(bytes.substr(0, 4), "DFRD");
  const DeformGraph back = DeformGraph::load(path);
  EXPECT_TRUE(back.nodes == g.nodes);
  EXPECT_EQ(back.neighbors, g.neighbors);
  EXPECT_TRUE(back.skin_index == g.skin_index);
  EXPECT_TRUE(back.skin_weight == g.skin_weight);

  std::string corrupt = bytes;
  const std::size_t first_neighbor = 32 + H * 24 + (H + 1) * 8;
  const std::uint32_t big = 99;
  std::memcpy(corrupt.data() + first_neighbor, &big, 4);
  write(dir.file("bad.dfrd"), corrupt);
  EXPECT_THROW(DeformGraph::load(dir.file("bad.dfrd")), ParseError);
}
