// SPDX-License-Identifier: Apache-2.0
#include "log3d/marching_cubes.hpp"

#include <unordered_map>

#include "mc_tables.hpp"

namespace log3d {
namespace {

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {3, 2}, {0, 3}, {4, 5}, {5, 6},
                              {7, 6}, {4, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

// Each edge is listed from its lower to its upper lattice corner so that a
// vertex computed from two neighboring cells is bit-identical.
constexpr int edge_axis(int e) {
  for (int a = 0; a < 3; ++a)
    if (kCorner[kEdge[e][0]][a] != kCorner[kEdge[e][1]][a]) return a;
  return -1;
}

}  // namespace

void IsoConfig::validate() const {
  if (n == 0) throw std::invalid_argument("iso config needs a resolution");
  if (!(theta > 0.0 && theta < 4.0 / n))
    throw std::invalid_argument("iso value must lie inside the band (0, 4/N)");
}

IsoSurface marching_cubes(const DenseBandField& field, const UdfNormalization& norm, const IsoConfig& cfg) {
  cfg.validate();
  if (cfg.n != field.resolution()) throw std::invalid_argument("iso config resolution does not match field");
  const std::uint32_t n = field.resolution();
  const double theta = cfg.theta;
  const std::uint64_t nn = n;

  IsoSurface out;
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;

  field.for_each([&](const VoxelCoord& c, float, std::uint16_t) {
    if (c[0] + 1 >= n || c[1] + 1 >= n || c[2] + 1 >= n) return;
    double u[8];
    for (int k = 0; k < 8; ++k) {
      const auto v = field.value(c[0] + kCorner[k][0], c[1] + kCorner[k][1], c[2] + kCorner[k][2]);
      if (!v) return;
      u[k] = norm.denormalize(*v);
      if (u[k] == theta) u[k] = theta + 1e-12;
    }
    ++out.cells_visited;
    int cube = 0;
    for (int k = 0; k < 8; ++k)
      if (u[k] < theta) cube |= 1 << k;
    const auto& row = detail::kMcTriangles[cube];
    if (row[0] < 0) return;

    std::uint32_t vid[12];
    bool have[12] = {};
    auto vertex_on = [&](int e) {
      if (have[e]) return vid[e];
      const int a = kEdge[e][0], b = kEdge[e][1];
      const VoxelCoord lo{c[0] + kCorner[a][0], c[1] + kCorner[a][1], c[2] + kCorner[a][2]};
      const std::uint64_t key = ((lo[0] * nn + lo[1]) * nn + lo[2]) * 3 + static_cast<std::uint64_t>(edge_axis(e));
      auto [it, inserted] = edge_vertex.try_emplace(key, static_cast<std::uint32_t>(out.mesh.vertices.size()));
      if (inserted) {
        const double t = (theta - u[a]) / (u[b] - u[a]);
        Vec3 p = voxel_center(lo, n);
        p[edge_axis(e)] += t / n;
        out.mesh.vertices.push_back(p);
      }
      have[e] = true;
      return vid[e] = it->second;
    };
    for (int t = 0; t < 16 && row[t] >= 0; t += 3)
      out.mesh.triangles.push_back({vertex_on(row[t]), vertex_on(row[t + 1]), vertex_on(row[t + 2])});
  });
  return out;
}

}  // namespace log3d
