// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

#include "log3d/mesh_io.hpp"
#include "log3d/ublock.hpp"
#include "log3d/udf_field.hpp"

namespace log3d {

/// Iso level in distance units; must sit inside the band (0, 4/N).
struct IsoConfig {
  std::uint32_t n = 0;
  double theta = 0.0;

  static IsoConfig for_resolution(std::uint32_t n) { return {n, 1.0 / n}; }
  void validate() const;
};

struct IsoSurface {
  TriangleMesh mesh;  // vertices in normalized [0,1]^3 coordinates
  std::size_t cells_visited = 0;
  bool empty() const { return mesh.triangles.empty(); }
};

/// Marching cubes over cells whose eight corners are all present in the
/// field. Corners are voxel centers; a corner is inside when its distance is
/// below theta (a corner exactly at theta counts as outside). Vertices on a
/// shared lattice edge are emitted once.
IsoSurface marching_cubes(const DenseBandField& field, const UdfNormalization& norm, const IsoConfig& cfg);

}  // namespace log3d
