// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "log3d/log_vae.hpp"

namespace log3d {

/// AdamW moments, one buffer per parameter tensor in registration order.
struct AdamState {
  std::uint64_t step = 0;  // completed optimizer steps
  std::vector<std::vector<float>> m, v;

  static AdamState zeros_like(const LogVaeParams<float>& params);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct Checkpoint {
  LogVaeParams<float> params;
  std::optional<AdamState> optimizer;
};

/// "LOGV" | version | arch JSON (u32 length + bytes) | u32 tensor count |
/// per tensor: u32 name length, name, u32 rank, u64 dims, f32 data |
/// optional "OPTS" | u64 step | per tensor: f32 m, f32 v.
std::string encode_checkpoint(const LogVaeParams<float>& params, const AdamState* optimizer = nullptr);
void write_checkpoint(const std::filesystem::path& path, const LogVaeParams<float>& params,
                      const AdamState* optimizer = nullptr);

/// Throws IoError on malformed data, or when `expected` is given and differs
/// from the stored architecture table.
Checkpoint decode_checkpoint(std::string data, const VaeArchitecture* expected = nullptr);
Checkpoint read_checkpoint(const std::filesystem::path& path, const VaeArchitecture* expected = nullptr);

}  // namespace log3d
