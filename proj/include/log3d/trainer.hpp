// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "log3d/checkpoint.hpp"
#include "log3d/log_vae.hpp"
#include "log3d/ublock.hpp"

namespace log3d {

/// Non-finite loss or gradient; the message names the first offending tensor.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamWHyper {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;
};

/// One decoupled-weight-decay Adam update of a single tensor. `step` counts
/// from 1; `grad_scale` multiplies the gradient first (used for clipping).
template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t step,
                  const AdamWHyper& hyper, T grad_scale = T(1));

struct TrainConfig {
  AdamWHyper adam;
  double lambda = 1e-6;
  double delta = 0.1;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables
  std::uint64_t steps = 0;
  std::uint64_t seed = 0;
  std::uint32_t n = 64, s = 8, alpha = 2;
  std::uint64_t checkpoint_every = 0;  // 0: only at the end
  std::filesystem::path checkpoint_path;
  std::filesystem::path log_path;     // loss CSV, optional
  std::filesystem::path resume_path;  // checkpoint with optimizer state, optional
  std::vector<std::filesystem::path> corpus;
  VaeArchitecture arch;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
};

/// Noise seed of a given step; resuming at that step redraws the same noise.
std::uint64_t step_noise_seed(std::uint64_t seed, std::uint64_t step);

/// Loads a corpus entry as canonical blocks. OBJ meshes are normalized,
/// voxelized and partitioned; UDFV volumes are partitioned; UBLK files are
/// used as stored.
UBlockSet load_training_shape(const std::filesystem::path& path, const TrainConfig& cfg);

struct StepResult {
  LossTerms loss;
  double grad_norm = 0.0;  // before clipping
};

/// Forward, backward, clipping and one AdamW update. `blocks` must be in
/// canonical order. Throws TrainingError before touching the parameters when
/// the loss or a gradient is not finite.
StepResult train_step(LogVaeParams<float>& params, const UBlockSet& blocks, AdamState& opt, const TrainConfig& cfg,
                      std::uint64_t noise_seed);

struct TrainResult {
  LogVaeParams<float> params;
  AdamState optimizer;
  std::vector<LossTerms> history;  // steps run by this call
};

using StepCallback = std::function<void(std::uint64_t step, const StepResult&)>;

/// Full loop. Step t (1-based) trains on corpus[(t-1) mod size] with noise
/// step_noise_seed(seed, t). Writes the CSV log and checkpoints as configured.
TrainResult train(const TrainConfig& cfg, const StepCallback& on_step = {});

}  // namespace log3d
