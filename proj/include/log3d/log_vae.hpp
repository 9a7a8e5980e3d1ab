// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "log3d/ops.hpp"
#include "log3d/tensor.hpp"
#include "log3d/ublock.hpp"

namespace log3d {

/// Architecture table of the block VAE. Every parameter shape is a function
/// of these fields only, never of the volume resolution.
struct VaeArchitecture {
  std::uint32_t block_core = 8;  // D
  std::uint32_t alpha = 2;       // padding per side
  std::uint32_t d_model = 96;
  std::uint32_t latent_channels = 16;
  std::uint32_t conv1_channels = 16;
  std::uint32_t conv2_channels = 32;
  std::uint32_t layers = 2;  // transformer layers in encoder and in decoder
  std::uint32_t window = 4;  // attention window, in block coordinates
  std::uint32_t mlp_ratio = 2;

  std::uint32_t side() const { return block_core + 2 * alpha; }
  /// Spatial side after the two pooling stages; the last encoder conv uses it as kernel.
  std::uint32_t token_side() const { return side() / 4; }
  void validate() const;
  std::string to_json() const;
  static VaeArchitecture from_json(const std::string& text);
  friend bool operator==(const VaeArchitecture&, const VaeArchitecture&) = default;
};

/// Sinusoidal encoding of a block coordinate: per axis, d_model/6 (sin, cos)
/// pairs at frequencies 10000^(-f / (d_model/6)).
std::vector<double> positional_encoding(const BlockCoord& p, std::uint32_t d_model);

/// Token groups for windowed attention. Tokens sharing floor((p + shift)/w)
/// per axis form one group, shift = w/2 when `shifted`. Groups are ordered by
/// window cell; members ascend.
std::vector<std::vector<std::uint32_t>> window_groups(const std::vector<BlockCoord>& coords, std::uint32_t w,
                                                      bool shifted);

/// Named, ordered parameter set of the VAE.
template <typename T>
class LogVaeParams {
 public:
  LogVaeParams() = default;
  /// Seeded random initialization.
  static LogVaeParams initialize(const VaeArchitecture& arch, std::uint64_t seed);
  /// All tensors zero (gains included).
  static LogVaeParams zeros(const VaeArchitecture& arch);

  const VaeArchitecture& architecture() const { return arch_; }
  const std::vector<std::pair<std::string, ad::Tensor<T>>>& tensors() const { return tensors_; }
  std::vector<std::pair<std::string, ad::Tensor<T>>>& tensors() { return tensors_; }
  const ad::Tensor<T>& get(const std::string& name) const;
  ad::Tensor<T>& get(const std::string& name);
  std::size_t parameter_count() const;
  void zero_grad();

  /// Converts every tensor to another scalar type (fresh leaves).
  template <typename U>
  LogVaeParams<U> cast() const;

  /// Architecture-derived list of (name, shape) in registration order.
  static std::vector<std::pair<std::string, ad::Shape>> layout(const VaeArchitecture& arch);

 private:
  template <typename>
  friend class LogVaeParams;
  VaeArchitecture arch_;
  std::vector<std::pair<std::string, ad::Tensor<T>>> tensors_;
};

/// One latent token per active block, in canonical (sorted) block order.
template <typename T>
struct SparseLatentSet {
  std::uint32_t n = 0, s = 0, d = 0, alpha = 0;  // partition the latents came from
  std::vector<BlockCoord> coords;
  ad::Tensor<T> mu;      // [L, latent]
  ad::Tensor<T> logvar;  // [L, latent]
  ad::Tensor<T> sample;  // [L, latent]
  std::vector<T> eps;    // standard-normal draws behind `sample`
  std::size_t size() const { return coords.size(); }
};

/// Standard-normal draws from a seeded generator.
template <typename T>
std::vector<T> standard_normal(std::size_t count, std::uint64_t seed);

template <typename T>
ad::Tensor<T> reparameterize(const ad::Tensor<T>& mu, const ad::Tensor<T>& logvar, std::uint64_t seed);

/// Block values as a [L,1,S,S,S] tensor (blocks taken in the given order).
template <typename T>
ad::Tensor<T> blocks_tensor(const UBlockSet& set);

/// Encoder on an already-canonical block tensor; returns (mu, logvar).
template <typename T>
std::pair<ad::Tensor<T>, ad::Tensor<T>> encode_tensors(const ad::Tensor<T>& blocks, const std::vector<BlockCoord>& coords,
                                                       const LogVaeParams<T>& params);

/// Decoder from latent tokens to a [L,1,S,S,S] block tensor.
template <typename T>
ad::Tensor<T> decode_tensors(const ad::Tensor<T>& latents, const std::vector<BlockCoord>& coords,
                             const LogVaeParams<T>& params);

/// Sorts blocks into canonical order and encodes them; the sample uses
/// noise from `seed`.
template <typename T>
SparseLatentSet<T> encode(const UBlockSet& blocks, const LogVaeParams<T>& params, std::uint64_t seed);

/// Decodes `latents.sample`, or `latents.mu` when `use_mean`.
template <typename T>
UBlockSet decode(const SparseLatentSet<T>& latents, const LogVaeParams<T>& params, bool use_mean = false);

/// Sorted copy of a block set.
UBlockSet canonical_order(const UBlockSet& blocks);

/// Scalar Huber reconstruction loss over all voxels of all blocks.
double huber_udf_loss(const UBlockSet& pred, const UBlockSet& target, double delta);
/// Scalar KL term, mean over all entries.
double kl_loss(std::span<const double> mu, std::span<const double> logvar);

struct LossTerms {
  double total = 0.0, udf = 0.0, kl = 0.0;
};

/// Graph of the training objective for one block set: huber + lambda * KL.
template <typename T>
struct VaeObjective {
  ad::Tensor<T> total, udf, kl, recon, mu, logvar;
  LossTerms terms() const;
};

/// huber_mean(pred, target, delta) + lambda * kl_mean(mu, logvar).
template <typename T>
ad::Tensor<T> total_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& target, const ad::Tensor<T>& mu,
                         const ad::Tensor<T>& logvar, T lambda, T delta);

/// Full forward pass for one block set in canonical order.
template <typename T>
VaeObjective<T> build_objective(const UBlockSet& canonical_blocks, const LogVaeParams<T>& params,
                                std::uint64_t noise_seed, T lambda, T delta);

}  // namespace log3d
