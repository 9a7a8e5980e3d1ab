// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>

#include "log3d/metrics.hpp"
#include "log3d/reconstruct.hpp"
#include "log3d/trainer.hpp"

namespace log3d {

/// Bad flags or settings; the CLI maps it to exit code 1.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitPipeline = 2;

struct VoxelizeOptions {
  std::filesystem::path input, output;
  std::uint32_t n = 64;
};
struct VoxelizeSummary {
  std::size_t band_voxels = 0;
  double occupancy = 0.0;  // band_voxels / N^3
};
VoxelizeSummary cmd_voxelize(const VoxelizeOptions& opt);

struct PartitionOptions {
  std::filesystem::path input, output;  // UDFV in, UBLK out
  std::uint32_t s = 8;
  std::uint32_t alpha = 2;
};
std::size_t cmd_partition(const PartitionOptions& opt);

struct ReassembleOptions {
  std::filesystem::path input, output;  // UBLK in, UDFV out
};
std::size_t cmd_reassemble(const ReassembleOptions& opt);

TrainResult cmd_train(const TrainConfig& cfg, std::ostream& progress);

struct ReconstructOptions {
  std::filesystem::path input, model, output;
  ReconstructConfig config;
};
ReconstructResult cmd_reconstruct(const ReconstructOptions& opt);

struct EvalOptions {
  std::filesystem::path input, reference, output;  // output JSON is optional
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
};
EvalReport cmd_eval(const EvalOptions& opt);

/// Entry point of the `log3d` executable. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace log3d
