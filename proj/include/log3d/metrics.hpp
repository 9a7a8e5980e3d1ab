// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "log3d/mesh_io.hpp"

namespace log3d {

/// Points drawn from a mesh surface; `triangle[i]` is the source face of point i.
struct PointSample {
  std::vector<Vec3> points;
  std::vector<std::uint32_t> triangle;
  std::size_t size() const { return points.size(); }
};

/// Area-weighted sampling with uniform barycentric draws; deterministic per seed.
PointSample sample_points(const TriangleMesh& mesh, std::size_t k, std::uint64_t seed);

/// Exact nearest-neighbor index over a fixed point set (k-d tree).
class PointIndex {
 public:
  explicit PointIndex(std::vector<Vec3> points);
  /// Squared distance to the nearest stored point. Equal to the brute-force
  /// minimum of (p - q).squaredNorm() bit for bit.
  double nearest_squared(const Vec3& p) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::uint32_t point;
    std::int32_t left = -1, right = -1;
    std::uint8_t axis = 0;
  };
  std::int32_t build(std::uint32_t* begin, std::uint32_t* end, int depth);
  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
};

/// Nearest-neighbor distance from each point of `from` to the set `to`.
std::vector<double> nearest_distances(const std::vector<Vec3>& from, const PointIndex& to);

/// 0.5 * (mean_a min_b |a-b| + mean_b min_a |a-b|), unsquared distances.
double chamfer(const PointSample& a, const PointSample& b);
/// F-score in [0,100]; a point matches when its nearest neighbor is closer than t.
double fscore(const PointSample& a, const PointSample& b, double t);

struct EvalReport {
  double cd = 0.0;
  double f1_001 = 0.0;  // threshold 0.001
  double f1_01 = 0.0;   // threshold 0.01
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::string to_json() const;
};

/// Samples both meshes with the same K and seed and reports CD and F-scores.
EvalReport evaluate(const TriangleMesh& a, const TriangleMesh& b, std::size_t k, std::uint64_t seed);

}  // namespace log3d
