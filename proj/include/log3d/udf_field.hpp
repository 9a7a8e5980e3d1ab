// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

#include "log3d/mesh_io.hpp"

namespace log3d {

class VolumeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Euclidean distance from p to the closed triangle abc. Degenerate
/// (collinear or coincident) triangles reduce to segment/point distance.
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void grow(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void grow(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
  bool contains(const Aabb& b) const {
    return (lo.array() <= b.lo.array()).all() && (hi.array() >= b.hi.array()).all();
  }
  double squared_distance(const Vec3& p) const {
    const Vec3 d = (lo - p).cwiseMax(p - hi).cwiseMax(0.0);
    return d.squaredNorm();
  }
};

/// Median-split bounding-volume hierarchy over the triangles of a mesh.
/// Immutable after construction; queries are safe from any thread.
class TriangleBvh {
 public:
  struct Node {
    Aabb box;
    std::uint32_t left = 0;   // child index for interior nodes
    std::uint32_t right = 0;
    std::uint32_t first = 0;  // range into triangle_order() for leaves
    std::uint32_t count = 0;  // 0 for interior nodes
    bool is_leaf() const { return count > 0; }
  };

  struct Hit {
    double distance = std::numeric_limits<double>::infinity();
    std::uint32_t triangle = std::numeric_limits<std::uint32_t>::max();
  };

  explicit TriangleBvh(TriangleMesh mesh, std::uint32_t leaf_size = 4);

  /// Closest triangle; ties resolve to the lowest triangle index.
  Hit nearest(const Vec3& p) const;
  /// As nearest(), but subtrees farther than `radius` are pruned. The result
  /// is exact whenever the true distance is below `radius`.
  Hit nearest_within(const Vec3& p, double radius) const;

  const TriangleMesh& mesh() const { return mesh_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<std::uint32_t>& triangle_order() const { return order_; }
  std::uint32_t leaf_size() const { return leaf_size_; }

 private:
  std::uint32_t build(std::uint32_t first, std::uint32_t count, std::vector<Vec3>& centroids);
  Aabb triangle_box(std::uint32_t t) const;

  TriangleMesh mesh_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> order_;
  std::uint32_t leaf_size_;
};

TriangleBvh build_bvh(const TriangleMesh& mesh);
double query_udf(const TriangleBvh& bvh, const Vec3& p);
/// Brute-force minimum over all triangles in ascending index order.
double brute_force_udf(const TriangleMesh& mesh, const Vec3& p);

using VoxelCoord = std::array<std::uint32_t, 3>;

/// Affine map between normalized band values and distances.
struct UdfNormalization {
  double norm_min = 0.0;
  double norm_max = 1.0;

  /// The fixed [0, 5/N] mapping used throughout the codec.
  static UdfNormalization for_resolution(std::uint32_t n) { return {0.0, 5.0 / n}; }
  double denormalize(double v) const { return norm_min + v * (norm_max - norm_min); }
  double normalize(double u) const { return (u - norm_min) / (norm_max - norm_min); }
};

/// Near-surface band of a UDF sampled at voxel centers of an N^3 grid.
/// Values are normalized with the fixed map [0, 5/N] -> [0, 1].
class SparseUdfVolume {
 public:
  struct Entry {
    VoxelCoord coord;
    double value;  // normalized
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  SparseUdfVolume() = default;
  /// `entries` must be sorted by coordinate and unique.
  SparseUdfVolume(std::uint32_t resolution, std::vector<Entry> entries);

  std::uint32_t resolution() const { return n_; }
  double tau() const { return 4.0 / n_; }
  double clip() const { return 5.0 / n_; }
  double norm_min() const { return 0.0; }
  double norm_max() const { return clip(); }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::optional<double> find(const VoxelCoord& c) const;

  UdfNormalization normalization() const { return UdfNormalization::for_resolution(n_); }
  double denormalize(double v) const { return normalization().denormalize(v); }
  double normalize(double u) const { return normalization().normalize(u); }

  friend bool operator==(const SparseUdfVolume&, const SparseUdfVolume&) = default;

 private:
  std::uint32_t n_ = 0;
  std::vector<Entry> entries_;
};

inline Vec3 voxel_center(const VoxelCoord& c, std::uint32_t n) {
  return {(c[0] + 0.5) / n, (c[1] + 0.5) / n, (c[2] + 0.5) / n};
}

bool valid_resolution(std::uint32_t n);

/// Stores exactly the voxels with u(center) < 4/N. Candidates come from
/// per-triangle box dilation and are confirmed by an exact BVH query.
SparseUdfVolume voxelize_sparse(const TriangleMesh& mesh, std::uint32_t n);

double denormalize(double v, const SparseUdfVolume& vol);

/// Largest float not above v. Band values are narrowed this way everywhere so
/// a stored value never rounds up past the band limit.
float narrow_value(double v);

void write_udfv(const SparseUdfVolume& vol, const std::filesystem::path& path);
std::string encode_udfv(const SparseUdfVolume& vol);
SparseUdfVolume read_udfv(const std::filesystem::path& path);
SparseUdfVolume decode_udfv(std::string data);

}  // namespace log3d
