// SPDX-License-Identifier: Apache-2.0
#include "log3d/reconstruct.hpp"

#include <stdexcept>

#include "log3d/marching_cubes.hpp"
#include "log3d/udf_field.hpp"

namespace log3d {

void ReconstructConfig::validate() const {
  if (!valid_resolution(n)) throw std::invalid_argument("N must be a power of two in [16, 2048]");
  if (s == 0 || n % s != 0) throw std::invalid_argument("s must divide N");
  IsoConfig{n, theta > 0.0 ? theta : 1.0 / n}.validate();
}

ReconstructResult reconstruct(const TriangleMesh& mesh_in, const LogVaeParams<float>& params,
                              const ReconstructConfig& cfg) {
  cfg.validate();
  const auto& arch = params.architecture();
  if (cfg.n / cfg.s != arch.block_core || cfg.alpha != arch.alpha)
    throw std::invalid_argument("N/s and alpha must match the model (D=" + std::to_string(arch.block_core) +
                                ", alpha=" + std::to_string(arch.alpha) + ")");
  const NormalizedMesh normalized = normalize_to_unit_cube(mesh_in);
  const SparseUdfVolume vol = voxelize_sparse(normalized.mesh, cfg.n);
  const UBlockSet blocks = partition(vol, cfg.s, cfg.alpha);

  ReconstructResult out;
  out.band_voxels = vol.size();
  out.blocks = blocks.blocks.size();
  if (blocks.blocks.empty()) return out;

  const auto latents = encode<float>(blocks, params, cfg.seed);
  const UBlockSet decoded = decode<float>(latents, params, cfg.deterministic);
  const DenseBandField field = reassemble(decoded);
  const IsoConfig iso{cfg.n, cfg.theta > 0.0 ? cfg.theta : 1.0 / cfg.n};
  const IsoSurface surface = marching_cubes(field, vol.normalization(), iso);
  out.mesh = invert_transform(surface.mesh, normalized.transform);
  return out;
}

}  // namespace log3d
