// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "log3d/log_vae.hpp"
#include "log3d/mesh_io.hpp"

namespace log3d {

struct ReconstructConfig {
  std::uint32_t n = 64;
  std::uint32_t s = 8;
  std::uint32_t alpha = 2;
  double theta = 0.0;  // iso value in normalized-space distance units; 0 means 1/N
  std::uint64_t seed = 0;
  bool deterministic = false;  // decode the posterior mean instead of a sample

  void validate() const;
};

struct ReconstructResult {
  TriangleMesh mesh;  // input coordinates
  std::size_t band_voxels = 0;
  std::size_t blocks = 0;
  bool empty() const { return mesh.triangles.empty(); }
};

/// Mesh -> UDF band -> blocks -> latents -> blocks -> field -> surface, with
/// the output mapped back through the input normalization.
ReconstructResult reconstruct(const TriangleMesh& mesh_in, const LogVaeParams<float>& params,
                              const ReconstructConfig& cfg);

}  // namespace log3d
