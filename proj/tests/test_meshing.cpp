// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <map>
#include <set>

#include "fixtures.hpp"
#include "log3d/marching_cubes.hpp"
#include "log3d/reconstruct.hpp"

using namespace log3d;

namespace {

/// 2x2x2 voxel cube at the grid corner of a 16^3 grid, normalized value 0.5 except
/// the listed overrides.
SparseUdfVolume cube_volume(std::vector<std::pair<VoxelCoord, double>> overrides) {
  std::vector<SparseUdfVolume::Entry> entries;
  for (std::uint32_t i = 0; i < 2; ++i)
    for (std::uint32_t j = 0; j < 2; ++j)
      for (std::uint32_t k = 0; k < 2; ++k) {
        double v = 0.5;
        for (const auto& [c, value] : overrides)
          if (c == VoxelCoord{i, j, k}) v = value;
        entries.push_back({{i, j, k}, v});
      }
  return SparseUdfVolume(16, std::move(entries));
}

IsoSurface extract(const SparseUdfVolume& vol, std::uint32_t s, double theta) {
  const auto field = reassemble(partition(vol, s, 0));
  return marching_cubes(field, vol.normalization(), IsoConfig{vol.resolution(), theta});
}

std::vector<double> radii(const TriangleMesh& m, const Vec3& c) {
  std::vector<double> r;
  for (const auto& v : m.vertices) r.push_back((v - c).norm());
  return r;
}

}  // namespace

TEST(MarchingCubes, AllOutsideEmitsNothing) {
  const auto surf = extract(cube_volume({}), 2, 1.0 / 16);
  EXPECT_GT(surf.cells_visited, 0u);
  EXPECT_TRUE(surf.empty());
}

TEST(MarchingCubes, SingleInsideCornerEmitsOneTriangle) {
  const auto surf = extract(cube_volume({{{0, 0, 0}, 0.125}}), 2, 1.0 / 16);
  ASSERT_EQ(surf.mesh.triangles.size(), 1u);
  ASSERT_EQ(surf.mesh.vertices.size(), 3u);
  const double u0 = 0.125 * 5 / 16, u1 = 0.5 * 5 / 16, theta = 1.0 / 16;
  const double t = (theta - u0) / (u1 - u0);
  const Vec3 base = voxel_center({0, 0, 0}, 16);
  std::set<int> axes;
  for (const auto& v : surf.mesh.vertices) {
    const Vec3 d = (v - base) * 16;
    int axis = -1;
    for (int a = 0; a < 3; ++a)
      if (std::abs(d[a]) > 1e-12) axis = a;
    ASSERT_GE(axis, 0);
    EXPECT_NEAR(d[axis], t, 1e-12);
    EXPECT_NEAR(d.norm(), t, 1e-12);
    axes.insert(axis);
  }
  EXPECT_EQ(axes.size(), 3u);
}

TEST(MarchingCubes, ValidatesIsoValue) {
  const auto field = reassemble(partition(cube_volume({}), 2, 0));
  const auto norm = UdfNormalization::for_resolution(16);
  EXPECT_THROW(marching_cubes(field, norm, IsoConfig{16, 0.0}), std::invalid_argument);
  EXPECT_THROW(marching_cubes(field, norm, IsoConfig{16, 4.0 / 16}), std::invalid_argument);
  EXPECT_THROW(marching_cubes(field, norm, IsoConfig{32, 1.0 / 32}), std::invalid_argument);
}

TEST(MarchingCubes, AnalyticSphereDoubleShell) {
  const std::uint32_t n = 64;
  const Vec3 c(0.5, 0.5, 0.5);
  const auto surf = extract(fx::analytic_sphere_volume(n, 0.5, c), 8, 1.0 / n);
  ASSERT_FALSE(surf.empty());
  surf.mesh.validate();
  std::size_t inner = 0, outer = 0;
  for (double r : radii(surf.mesh, c)) {
    EXPECT_LT(std::abs(r - 0.5), 2.0 / n);
    EXPECT_LT(std::abs(std::abs(r - 0.5) - 1.0 / n), 1.0 / n);
    (r < 0.5 ? inner : outer)++;
  }
  EXPECT_GT(inner, 0u);
  EXPECT_GT(outer, 0u);
}

TEST(MarchingCubes, SharedEdgesGiveUniqueVertices) {
  const auto surf = extract(fx::analytic_sphere_volume(32, 0.3, Vec3(0.5, 0.5, 0.5)), 4, 1.0 / 32);
  std::set<std::array<double, 3>> pos;
  for (const auto& v : surf.mesh.vertices) pos.insert({v[0], v[1], v[2]});
  EXPECT_EQ(pos.size(), surf.mesh.vertices.size());
  // Away from the grid boundary both shells are closed: every edge has two faces.
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> edges;
  for (const auto& t : surf.mesh.triangles)
    for (int e = 0; e < 3; ++e) {
      auto a = t[e], b = t[(e + 1) % 3];
      edges[{std::min(a, b), std::max(a, b)}]++;
    }
  for (const auto& [edge, count] : edges) EXPECT_EQ(count, 2);
}

TEST(MarchingCubes, LargerIsoValueGivesContainingShells) {
  const std::uint32_t n = 64;
  const Vec3 c(0.5, 0.5, 0.5);
  const auto vol = fx::analytic_sphere_volume(n, 0.35, c);
  auto shell_means = [&](double theta) {
    double in = 0, out = 0;
    int ni = 0, no = 0;
    for (double r : radii(extract(vol, 8, theta).mesh, c)) {
      if (r < 0.35) in += r, ++ni;
      else out += r, ++no;
    }
    return std::pair{in / ni, out / no};
  };
  const auto [in1, out1] = shell_means(1.0 / n);
  const auto [in2, out2] = shell_means(2.0 / n);
  EXPECT_LT(in2, in1);
  EXPECT_GT(out2, out1);
  EXPECT_NEAR(out2 - in2, 4.0 / n, 0.5 / n);
}

TEST(Reconstruct, RandomModelCompletesAndIsRepeatable) {
  const auto params = LogVaeParams<float>::initialize(VaeArchitecture{}, 5);
  ReconstructConfig cfg;
  cfg.n = 32;
  cfg.s = 4;
  cfg.deterministic = true;
  const auto mesh = fx::icosphere(2, 0.5);
  const auto a = reconstruct(mesh, params, cfg);
  const auto b = reconstruct(mesh, params, cfg);
  EXPECT_GT(a.band_voxels, 0u);
  EXPECT_GT(a.blocks, 0u);
  EXPECT_EQ(format_obj(a.mesh), format_obj(b.mesh));
  cfg.deterministic = false;
  cfg.seed = 3;
  EXPECT_NO_THROW(reconstruct(mesh, params, cfg));
}

TEST(Reconstruct, ConfigValidation) {
  ReconstructConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.s = 4;  // D = 16 does not match the model
  const auto params = LogVaeParams<float>::initialize(VaeArchitecture{}, 5);
  EXPECT_THROW(reconstruct(fx::icosphere(1, 0.5), params, cfg), std::invalid_argument);
  cfg.s = 8;
  cfg.theta = 4.0 / 64;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.theta = 0.0;
  cfg.n = 48;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}
