// SPDX-License-Identifier: Apache-2.0
#include "log3d/mesh_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <string>

#include "log3d/binary_io.hpp"

namespace log3d {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw MeshError("OBJ line " + std::to_string(line) + ": " + what);
}

double parse_real(std::string_view tok, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v))
    fail(line, "bad coordinate '" + std::string(tok) + "'");
  return v;
}

// Resolves `i`, `i/t`, `i//n`, `i/t/n` and negative (relative) references.
std::uint32_t parse_index(std::string_view tok, std::size_t vertex_count, std::size_t line) {
  tok = tok.substr(0, tok.find('/'));
  long long idx = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), idx);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || idx == 0)
    fail(line, "bad face index '" + std::string(tok) + "'");
  const long long resolved = idx > 0 ? idx - 1 : static_cast<long long>(vertex_count) + idx;
  if (resolved < 0 || resolved >= static_cast<long long>(vertex_count))
    fail(line, "face index " + std::to_string(idx) + " out of range (" +
                   std::to_string(vertex_count) + " vertices)");
  return static_cast<std::uint32_t>(resolved);
}

bool zero_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return (b - a).cross(c - a).squaredNorm() == 0.0;
}

}  // namespace

void TriangleMesh::validate() const {
  for (const auto& v : vertices)
    if (!v.allFinite()) throw MeshError("non-finite vertex position");
  for (const auto& t : triangles) {
    for (auto i : t)
      if (i >= vertices.size()) throw MeshError("triangle index out of range");
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
      throw MeshError("triangle repeats a vertex index");
  }
}

std::size_t TriangleMesh::degenerate_count() const {
  std::size_t n = 0;
  for (const auto& t : triangles)
    if (zero_area(vertices[t[0]], vertices[t[1]], vertices[t[2]])) ++n;
  return n;
}

LoadedMesh parse_obj(std::string_view text) {
  LoadedMesh out;
  auto& mesh = out.mesh;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;

    auto line = trim(raw);
    if (const auto hash = line.find('#'); hash != std::string_view::npos)
      line = trim(line.substr(0, hash));
    if (line.empty()) continue;

    const auto tok = split_ws(line);
    const auto& key = tok[0];
    if (key == "v") {
      if (tok.size() != 4 && tok.size() != 5) fail(line_no, "vertex needs 3 coordinates");
      mesh.vertices.emplace_back(parse_real(tok[1], line_no), parse_real(tok[2], line_no),
                                 parse_real(tok[3], line_no));
    } else if (key == "f") {
      if (tok.size() < 4) fail(line_no, "face needs at least 3 indices");
      std::vector<std::uint32_t> poly;
      for (std::size_t i = 1; i < tok.size(); ++i)
        poly.push_back(parse_index(tok[i], mesh.vertices.size(), line_no));
      for (std::size_t i = 1; i + 1 < poly.size(); ++i) {
        const std::array<std::uint32_t, 3> t{poly[0], poly[i], poly[i + 1]};
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
          fail(line_no, "face repeats a vertex index");
        mesh.triangles.push_back(t);
      }
    } else if (key == "vn" || key == "vt" || key == "vp" || key == "o" || key == "g" ||
               key == "s" || key == "usemtl" || key == "mtllib") {
      continue;
    } else {
      fail(line_no, "unsupported record '" + std::string(key) + "'");
    }
  }
  out.degenerate_triangles = mesh.degenerate_count();
  return out;
}

LoadedMesh load_mesh(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw MeshError(e.what());
  }
  return parse_obj(text);
}

std::string format_obj(const TriangleMesh& mesh) {
  if (mesh.vertices.empty()) throw MeshError("cannot save a mesh without vertices");
  mesh.validate();
  std::string out;
  out.reserve(mesh.vertices.size() * 48 + mesh.triangles.size() * 24);
  char buf[128];
  for (const auto& v : mesh.vertices) {
    const int n = std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
    out.append(buf, static_cast<std::size_t>(n));
  }
  for (const auto& t : mesh.triangles) {
    const int n = std::snprintf(buf, sizeof(buf), "f %u %u %u\n", t[0] + 1, t[1] + 1, t[2] + 1);
    out.append(buf, static_cast<std::size_t>(n));
  }
  return out;
}

void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path) {
  const std::string text = format_obj(mesh);
  try {
    write_file(path, text);
  } catch (const IoError& e) {
    throw MeshError(e.what());
  }
}

NormalizedMesh normalize_to_unit_cube(const TriangleMesh& mesh) {
  if (mesh.vertices.empty() || mesh.triangles.empty()) throw MeshError("cannot normalize an empty mesh");
  Vec3 lo = mesh.vertices.front(), hi = lo;
  for (const auto& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const double extent = (hi - lo).maxCoeff();
  if (!(extent > 0.0)) throw MeshError("mesh bounding box has zero extent");

  UnitCubeTransform t;
  t.scale = kUnitCubeExtent / extent;
  t.offset = Vec3::Constant(0.5 / t.scale) - 0.5 * (lo + hi);
  return {apply_transform(mesh, t), t};
}

TriangleMesh apply_transform(const TriangleMesh& mesh, const UnitCubeTransform& t) {
  TriangleMesh out = mesh;
  for (auto& v : out.vertices) v = t.apply(v);
  return out;
}

TriangleMesh invert_transform(const TriangleMesh& mesh, const UnitCubeTransform& t) {
  TriangleMesh out = mesh;
  for (auto& v : out.vertices) v = t.invert(v);
  return out;
}

}  // namespace log3d
