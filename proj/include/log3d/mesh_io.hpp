// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace log3d {

using Vec3 = Eigen::Vector3d;

class MeshError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Indexed triangle soup.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  bool empty() const { return triangles.empty(); }
  /// Throws MeshError when an index is out of range, a triangle repeats a
  /// vertex index, or a position is not finite.
  void validate() const;
  /// Number of triangles with zero area (collinear or coincident corners).
  std::size_t degenerate_count() const;
};

struct LoadedMesh {
  TriangleMesh mesh;
  std::size_t degenerate_triangles = 0;
};

/// Reads the OBJ subset: `v`, `f` (fan-triangulated), `#` comments.
/// Attribute records (vn, vt, o, g, s, usemtl, mtllib) are skipped.
LoadedMesh load_mesh(const std::filesystem::path& path);
LoadedMesh parse_obj(std::string_view text);

/// Writes `v` lines with 9 significant digits followed by 1-based `f` lines.
void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path);
std::string format_obj(const TriangleMesh& mesh);

/// Similarity transform into the unit cube: normalized = (original + offset) * scale.
struct UnitCubeTransform {
  double scale = 1.0;
  Vec3 offset = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return (p + offset) * scale; }
  Vec3 invert(const Vec3& p) const { return p / scale - offset; }
};

inline constexpr double kUnitCubeExtent = 0.96;

struct NormalizedMesh {
  TriangleMesh mesh;
  UnitCubeTransform transform;
};

/// Maps the longest bounding-box side to kUnitCubeExtent, centered at 0.5.
NormalizedMesh normalize_to_unit_cube(const TriangleMesh& mesh);
TriangleMesh apply_transform(const TriangleMesh& mesh, const UnitCubeTransform& t);
TriangleMesh invert_transform(const TriangleMesh& mesh, const UnitCubeTransform& t);

}  // namespace log3d
