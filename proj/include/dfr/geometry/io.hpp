#pragma once

// OFF / OBJ / PLY readers and writers. Vertex order is preserved exactly as in
// the file; correspondence files refer to these indices.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dfr/common/error.hpp"
#include "dfr/geometry/mesh.hpp"

namespace dfr {

enum class ShapeKind { mesh, pointcloud };
enum class ShapeFormat { off, obj, ply };
enum class PlyEncoding { ascii, binary_little_endian };

namespace io_detail {

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline ShapeFormat format_from_path(const std::string& path) {
  const auto dot = path.find_last_of('.');
  const std::string ext = dot == std::string::npos ? "" : lower(path.substr(dot + 1));
  if (ext == "off") return ShapeFormat::off;
  if (ext == "obj") return ShapeFormat::obj;
  if (ext == "ply") return ShapeFormat::ply;
  throw InputError("unsupported shape extension: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct RawShape {
  std::vector<double> coords;  // 3 per vertex
  std::vector<std::array<int, 3>> faces;
};

inline double parse_double(std::string_view tok, const std::string& path, std::size_t line) {
  double v = 0.0;
  const char* first = tok.data();
  if (!tok.empty() && tok.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(path, "line " + std::to_string(line), "invalid number '" + std::string(tok) + "'");
  return v;
}

inline long long parse_int(std::string_view tok, const std::string& path, std::size_t line) {
  long long v = 0;
  const char* first = tok.data();
  if (!tok.empty() && tok.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(path, "line " + std::to_string(line), "invalid integer '" + std::string(tok) + "'");
  return v;
}

// Line-oriented tokenizer that skips blank lines and '#' comments.
class LineTokens {
 public:
  LineTokens(std::string_view text, std::string path) : text_(text), path_(std::move(path)) {}

  // Next non-empty line's tokens; false at end of input.
  bool next(std::vector<std::string_view>& tokens) {
    while (pos_ < text_.size()) {
      std::size_t end = text_.find('\n', pos_);
      if (end == std::string_view::npos) end = text_.size();
      std::string_view line = text_.substr(pos_, end - pos_);
      pos_ = end + 1;
      ++line_;
      if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      tokens.clear();
      std::size_t i = 0;
      while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) tokens.push_back(line.substr(i, j - i));
        i = j;
      }
      if (!tokens.empty()) return true;
    }
    return false;
  }

  std::size_t line() const { return line_; }
  std::string where() const { return "line " + std::to_string(line_); }
  const std::string& path() const { return path_; }
  std::size_t byte_offset() const { return pos_ > text_.size() ? text_.size() : pos_; }

 private:
  std::string_view text_;
  std::string path_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
};

inline void check_face_index(long long idx, std::size_t nverts, const std::string& path,
                             const std::string& where) {
  if (idx < 0 || static_cast<std::size_t>(idx) >= nverts)
    throw ParseError(path, where,
                     "face index " + std::to_string(idx) + " out of range (" + std::to_string(nverts) +
                         " vertices)");
}

inline RawShape parse_off(std::string_view text, const std::string& path, ShapeKind kind) {
  LineTokens lines(text, path);
  std::vector<std::string_view> tok;
  if (!lines.next(tok)) throw ParseError(path, "line 1", "empty file");
  std::size_t first = 0;
  if (tok[0] == "OFF") {
    first = 1;
  } else if (tok[0].size() > 3 && tok[0].substr(0, 3) == "OFF") {
    throw ParseError(path, lines.where(), "unsupported OFF variant '" + std::string(tok[0]) + "'");
  } else {
    throw ParseError(path, lines.where(), "missing OFF header");
  }
  if (tok.size() == first) {
    if (!lines.next(tok)) throw ParseError(path, lines.where(), "missing OFF counts");
    first = 0;
  }
  if (tok.size() < first + 2) throw ParseError(path, lines.where(), "malformed OFF counts line");
  const long long nv = parse_int(tok[first], path, lines.line());
  const long long nf = parse_int(tok[first + 1], path, lines.line());
  if (nv < 0 || nf < 0) throw ParseError(path, lines.where(), "negative element count");

  RawShape raw;
  raw.coords.reserve(static_cast<std::size_t>(nv) * 3);
  for (long long i = 0; i < nv; ++i) {
    if (!lines.next(tok))
      throw ParseError(path, "line " + std::to_string(lines.line() + 1),
                       "missing vertex record " + std::to_string(i) + " of " + std::to_string(nv));
    if (tok.size() < 3)
      throw ParseError(path, lines.where(), "vertex record needs 3 coordinates");
    for (int c = 0; c < 3; ++c) raw.coords.push_back(parse_double(tok[c], path, lines.line()));
  }
  for (long long f = 0; f < nf; ++f) {
    if (!lines.next(tok))
      throw ParseError(path, "line " + std::to_string(lines.line() + 1),
                       "missing face record " + std::to_string(f) + " of " + std::to_string(nf));
    const long long count = parse_int(tok[0], path, lines.line());
    if (count < 1 || tok.size() < static_cast<std::size_t>(count) + 1)
      throw ParseError(path, lines.where(), "malformed face record");
    if (kind == ShapeKind::pointcloud) continue;
    if (count != 3)
      throw ParseError(path, lines.where(), "non-triangle face with " + std::to_string(count) + " vertices");
    std::array<int, 3> face{};
    for (int c = 0; c < 3; ++c) {
      const long long idx = parse_int(tok[1 + c], path, lines.line());
      check_face_index(idx, static_cast<std::size_t>(nv), path, lines.where());
      face[c] = static_cast<int>(idx);
    }
    raw.faces.push_back(face);
  }
  return raw;
}

inline RawShape parse_obj(std::string_view text, const std::string& path, ShapeKind kind) {
  LineTokens lines(text, path);
  std::vector<std::string_view> tok;
  RawShape raw;
  struct PendingFace {
    std::vector<long long> idx;
    std::size_t line;
  };
  std::vector<PendingFace> pending;
  while (lines.next(tok)) {
    if (tok[0] == "v") {
      if (tok.size() < 4) throw ParseError(path, lines.where(), "vertex record needs 3 coordinates");
      for (int c = 1; c <= 3; ++c) raw.coords.push_back(parse_double(tok[c], path, lines.line()));
    } else if (tok[0] == "f") {
      if (kind == ShapeKind::pointcloud) continue;
      if (tok.size() != 4)
        throw ParseError(path, lines.where(),
                         "non-triangle face with " + std::to_string(tok.size() - 1) + " vertices");
      PendingFace face{{}, lines.line()};
      const long long nv_so_far = static_cast<long long>(raw.coords.size() / 3);
      for (int c = 1; c <= 3; ++c) {
        const auto slash = tok[c].find('/');
        long long idx = parse_int(tok[c].substr(0, slash), path, lines.line());
        // OBJ is 1-based; negative indices are relative to the vertices seen so far.
        idx = idx < 0 ? nv_so_far + idx : idx - 1;
        face.idx.push_back(idx);
      }
      pending.push_back(std::move(face));
    }
    // vt, vn, g, o, s, usemtl, mtllib: ignored.
  }
  const std::size_t nv = raw.coords.size() / 3;
  for (const auto& f : pending) {
    std::array<int, 3> face{};
    for (int c = 0; c < 3; ++c) {
      check_face_index(f.idx[c], nv, path, "line " + std::to_string(f.line));
      face[c] = static_cast<int>(f.idx[c]);
    }
    raw.faces.push_back(face);
  }
  return raw;
}

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

inline PlyType ply_type(std::string_view name, const std::string& path, std::size_t line) {
  if (name == "char" || name == "int8") return PlyType::i8;
  if (name == "uchar" || name == "uint8") return PlyType::u8;
  if (name == "short" || name == "int16") return PlyType::i16;
  if (name == "ushort" || name == "uint16") return PlyType::u16;
  if (name == "int" || name == "int32") return PlyType::i32;
  if (name == "uint" || name == "uint32") return PlyType::u32;
  if (name == "float" || name == "float32") return PlyType::f32;
  if (name == "double" || name == "float64") return PlyType::f64;
  throw ParseError(path, "line " + std::to_string(line), "unknown PLY type '" + std::string(name) + "'");
}

inline std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::i8:
    case PlyType::u8: return 1;
    case PlyType::i16:
    case PlyType::u16: return 2;
    case PlyType::i32:
    case PlyType::u32:
    case PlyType::f32: return 4;
    case PlyType::f64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  bool is_list = false;
  PlyType count_type = PlyType::u8;
  PlyType type = PlyType::f32;
};

struct PlyElement {
  std::string name;
  long long count = 0;
  std::vector<PlyProperty> props;
};

// Reads typed scalars from the binary body with byte-offset diagnostics.
class PlyBinaryCursor {
 public:
  PlyBinaryCursor(std::string_view body, std::size_t base, const std::string& path)
      : body_(body), base_(base), path_(path) {}

  double read(PlyType t) {
    const std::size_t n = ply_size(t);
    if (pos_ + n > body_.size())
      throw ParseError(path_, "byte " + std::to_string(base_ + pos_), "unexpected end of binary PLY data");
    const char* p = body_.data() + pos_;
    pos_ += n;
    switch (t) {
      case PlyType::i8: return static_cast<double>(load<std::int8_t>(p));
      case PlyType::u8: return static_cast<double>(load<std::uint8_t>(p));
      case PlyType::i16: return static_cast<double>(load<std::int16_t>(p));
      case PlyType::u16: return static_cast<double>(load<std::uint16_t>(p));
      case PlyType::i32: return static_cast<double>(load<std::int32_t>(p));
      case PlyType::u32: return static_cast<double>(load<std::uint32_t>(p));
      case PlyType::f32: return static_cast<double>(load<float>(p));
      case PlyType::f64: return load<double>(p);
    }
    return 0.0;
  }

  std::string where() const { return "byte " + std::to_string(base_ + pos_); }

 private:
  template <typename T>
  static T load(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
  }

  std::string_view body_;
  std::size_t base_;
  std::size_t pos_ = 0;
  const std::string& path_;
};

inline RawShape parse_ply(std::string_view text, const std::string& path, ShapeKind kind) {
  // Header is ASCII and terminated by "end_header\n".
  if (text.substr(0, 3) != "ply") throw ParseError(path, "line 1", "missing PLY magic");
  const std::string_view end_marker = "end_header";
  const auto end_pos = text.find(end_marker);
  if (end_pos == std::string_view::npos) throw ParseError(path, "line 1", "unterminated PLY header");
  std::size_t body_start = text.find('\n', end_pos);
  body_start = body_start == std::string_view::npos ? text.size() : body_start + 1;

  LineTokens header(text.substr(0, end_pos), path);
  std::vector<std::string_view> tok;
  std::vector<PlyElement> elements;
  std::string format;
  header.next(tok);  // "ply"
  while (header.next(tok)) {
    if (tok[0] == "format") {
      if (tok.size() < 2) throw ParseError(path, header.where(), "malformed format line");
      format = std::string(tok[1]);
    } else if (tok[0] == "comment" || tok[0] == "obj_info") {
      continue;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw ParseError(path, header.where(), "malformed element line");
      elements.push_back({std::string(tok[1]), parse_int(tok[2], path, header.line()), {}});
    } else if (tok[0] == "property") {
      if (elements.empty()) throw ParseError(path, header.where(), "property before element");
      PlyProperty p;
      if (tok.size() == 5 && tok[1] == "list") {
        p.is_list = true;
        p.count_type = ply_type(tok[2], path, header.line());
        p.type = ply_type(tok[3], path, header.line());
        p.name = std::string(tok[4]);
      } else if (tok.size() == 3) {
        p.type = ply_type(tok[1], path, header.line());
        p.name = std::string(tok[2]);
      } else {
        throw ParseError(path, header.where(), "malformed property line");
      }
      elements.back().props.push_back(std::move(p));
    } else {
      throw ParseError(path, header.where(), "unexpected header keyword '" + std::string(tok[0]) + "'");
    }
  }
  if (format != "ascii" && format != "binary_little_endian")
    throw ParseError(path, "line 2", "unsupported PLY format '" + format + "'");

  RawShape raw;
  long long nverts = 0;
  for (const auto& e : elements)
    if (e.name == "vertex") nverts = e.count;

  const bool ascii = format == "ascii";
  LineTokens lines(text.substr(body_start), path);
  PlyBinaryCursor cursor(text.substr(body_start), body_start, path);
  // Line numbers for ASCII bodies continue after the header.
  const std::size_t header_lines =
      static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(body_start), '\n'));

  for (const auto& e : elements) {
    int xi = -1, yi = -1, zi = -1, fi = -1;
    for (int p = 0; p < static_cast<int>(e.props.size()); ++p) {
      const auto& name = e.props[p].name;
      if (name == "x") xi = p;
      if (name == "y") yi = p;
      if (name == "z") zi = p;
      if (e.props[p].is_list && (name == "vertex_indices" || name == "vertex_index")) fi = p;
    }
    if (e.name == "vertex" && (xi < 0 || yi < 0 || zi < 0))
      throw ParseError(path, "header", "vertex element lacks x/y/z");
    for (long long r = 0; r < e.count; ++r) {
      std::vector<double> scalars(e.props.size(), 0.0);
      std::vector<long long> list;
      std::string where;
      if (ascii) {
        if (!lines.next(tok))
          throw ParseError(path, "line " + std::to_string(header_lines + lines.line() + 1),
                           "missing " + e.name + " record " + std::to_string(r) + " of " +
                               std::to_string(e.count));
        where = "line " + std::to_string(header_lines + lines.line());
        std::size_t t = 0;
        for (std::size_t p = 0; p < e.props.size(); ++p) {
          if (t >= tok.size()) throw ParseError(path, where, "truncated " + e.name + " record");
          if (e.props[p].is_list) {
            const long long cnt = parse_int(tok[t++], path, header_lines + lines.line());
            if (cnt < 0 || t + static_cast<std::size_t>(cnt) > tok.size())
              throw ParseError(path, where, "truncated list property");
            for (long long c = 0; c < cnt; ++c) {
              const long long v = parse_int(tok[t++], path, header_lines + lines.line());
              if (static_cast<int>(p) == fi) list.push_back(v);
            }
          } else {
            scalars[p] = parse_double(tok[t++], path, header_lines + lines.line());
          }
        }
      } else {
        where = cursor.where();
        for (std::size_t p = 0; p < e.props.size(); ++p) {
          if (e.props[p].is_list) {
            const double cnt = cursor.read(e.props[p].count_type);
            if (cnt < 0) throw ParseError(path, where, "negative list count");
            for (long long c = 0; c < static_cast<long long>(cnt); ++c) {
              const double v = cursor.read(e.props[p].type);
              if (static_cast<int>(p) == fi) list.push_back(static_cast<long long>(v));
            }
          } else {
            scalars[p] = cursor.read(e.props[p].type);
          }
        }
      }
      if (e.name == "vertex") {
        raw.coords.push_back(scalars[xi]);
        raw.coords.push_back(scalars[yi]);
        raw.coords.push_back(scalars[zi]);
      } else if (e.name == "face" && fi >= 0 && kind == ShapeKind::mesh) {
        if (list.size() != 3)
          throw ParseError(path, where, "non-triangle face with " + std::to_string(list.size()) + " vertices");
        std::array<int, 3> face{};
        for (int c = 0; c < 3; ++c) {
          check_face_index(list[c], static_cast<std::size_t>(nverts), path, where);
          face[c] = static_cast<int>(list[c]);
        }
        raw.faces.push_back(face);
      }
    }
  }
  return raw;
}

inline RawShape parse_any(const std::string& path, ShapeKind kind) {
  const std::string text = read_file(path);
  switch (format_from_path(path)) {
    case ShapeFormat::off: return parse_off(text, path, kind);
    case ShapeFormat::obj: return parse_obj(text, path, kind);
    case ShapeFormat::ply: return parse_ply(text, path, kind);
  }
  throw InputError("unreachable");
}

inline std::string stem(const std::string& path) {
  auto slash = path.find_last_of("/\\");
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  auto dot = base.find_last_of('.');
  return dot == std::string::npos ? base : base.substr(0, dot);
}

inline Points to_points(const std::vector<double>& coords) {
  Points p(static_cast<Eigen::Index>(coords.size() / 3), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = coords[static_cast<std::size_t>(i) * 3 + c];
  return p;
}

// Shortest decimal representation that round-trips exactly.
inline void append_number(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open for writing: " + path);
  out << text;
  if (!out) throw InputError("write failed: " + path);
}

inline void write_shape(const std::string& path, const Points& v, const Faces* faces, PlyEncoding enc) {
  const Eigen::Index nf = faces ? faces->rows() : 0;
  std::string out;
  out.reserve(static_cast<std::size_t>(v.rows() * 64 + nf * 24));
  auto vertex_line = [&](const char* prefix, Eigen::Index i) {
    out += prefix;
    for (int c = 0; c < 3; ++c) {
      if (c) out += ' ';
      append_number(out, v(i, c));
    }
    out += '\n';
  };
  switch (format_from_path(path)) {
    case ShapeFormat::off:
      out += "OFF\n" + std::to_string(v.rows()) + " " + std::to_string(nf) + " 0\n";
      for (Eigen::Index i = 0; i < v.rows(); ++i) vertex_line("", i);
      for (Eigen::Index f = 0; f < nf; ++f)
        out += "3 " + std::to_string((*faces)(f, 0)) + " " + std::to_string((*faces)(f, 1)) + " " +
               std::to_string((*faces)(f, 2)) + "\n";
      break;
    case ShapeFormat::obj:
      for (Eigen::Index i = 0; i < v.rows(); ++i) vertex_line("v ", i);
      for (Eigen::Index f = 0; f < nf; ++f)
        out += "f " + std::to_string((*faces)(f, 0) + 1) + " " + std::to_string((*faces)(f, 1) + 1) + " " +
               std::to_string((*faces)(f, 2) + 1) + "\n";
      break;
    case ShapeFormat::ply: {
      out += "ply\nformat ";
      out += enc == PlyEncoding::ascii ? "ascii" : "binary_little_endian";
      out += " 1.0\nelement vertex " + std::to_string(v.rows()) +
             "\nproperty double x\nproperty double y\nproperty double z\n";
      if (nf > 0) out += "element face " + std::to_string(nf) + "\nproperty list uchar int vertex_indices\n";
      out += "end_header\n";
      if (enc == PlyEncoding::ascii) {
        for (Eigen::Index i = 0; i < v.rows(); ++i) vertex_line("", i);
        for (Eigen::Index f = 0; f < nf; ++f)
          out += "3 " + std::to_string((*faces)(f, 0)) + " " + std::to_string((*faces)(f, 1)) + " " +
                 std::to_string((*faces)(f, 2)) + "\n";
      } else {
        for (Eigen::Index i = 0; i < v.rows(); ++i)
          for (int c = 0; c < 3; ++c) {
            const double x = v(i, c);
            out.append(reinterpret_cast<const char*>(&x), sizeof(double));
          }
        for (Eigen::Index f = 0; f < nf; ++f) {
          out += static_cast<char>(3);
          for (int c = 0; c < 3; ++c) {
            const std::int32_t idx = (*faces)(f, c);
            out.append(reinterpret_cast<const char*>(&idx), sizeof(idx));
          }
        }
      }
      break;
    }
  }
  write_text(path, out);
}

}  // namespace io_detail

inline TriMesh load_mesh(const std::string& path) {
  auto raw = io_detail::parse_any(path, ShapeKind::mesh);
  Faces faces(static_cast<Eigen::Index>(raw.faces.size()), 3);
  for (std::size_t f = 0; f < raw.faces.size(); ++f)
    for (int c = 0; c < 3; ++c) faces(static_cast<Eigen::Index>(f), c) = raw.faces[f][c];
  if (raw.faces.empty()) throw ParseError(path, "end", "mesh has no faces");
  try {
    return TriMesh(io_detail::to_points(raw.coords), std::move(faces), io_detail::stem(path));
  } catch (const ParseError&) {
    throw;
  } catch (const InputError& e) {
    throw ParseError(path, "faces", e.what());
  }
}

inline PointCloud load_point_cloud(const std::string& path) {
  auto raw = io_detail::parse_any(path, ShapeKind::pointcloud);
  if (raw.coords.empty()) throw ParseError(path, "end", "no vertices");
  return PointCloud(io_detail::to_points(raw.coords), io_detail::stem(path));
}

inline std::variant<TriMesh, PointCloud> load_shape(const std::string& path, ShapeKind kind) {
  if (kind == ShapeKind::mesh) return load_mesh(path);
  return load_point_cloud(path);
}

inline void save_mesh(const TriMesh& mesh, const std::string& path,
                      PlyEncoding enc = PlyEncoding::ascii) {
  io_detail::write_shape(path, mesh.vertices(), &mesh.faces(), enc);
}

inline void save_point_cloud(const PointCloud& cloud, const std::string& path,
                             PlyEncoding enc = PlyEncoding::ascii) {
  io_detail::write_shape(path, cloud.points(), nullptr, enc);
}

}  // namespace dfr
