// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "log3d/udf_field.hpp"

namespace log3d {

class BlockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using BlockCoord = std::array<std::uint32_t, 3>;

/// Normalized image of the 5/N clip value; fills pad voxels outside the band.
inline constexpr float kDefaultFill = 1.0f;

/// One padded subvolume: (D + 2*alpha)^3 values, z fastest.
struct UBlock {
  BlockCoord coord{};
  std::vector<float> values;
  friend bool operator==(const UBlock&, const UBlock&) = default;
};

struct UBlockSet {
  std::uint32_t n = 0;      // volume resolution
  std::uint32_t s = 0;      // blocks per axis
  std::uint32_t d = 0;      // core side, n / s
  std::uint32_t alpha = 0;  // padding per side
  std::vector<UBlock> blocks;

  std::uint32_t side() const { return d + 2 * alpha; }
  std::size_t block_volume() const { return std::size_t{side()} * side() * side(); }
  /// Throws BlockError when the partition parameters or blocks are inconsistent.
  void validate() const;
  friend bool operator==(const UBlockSet&, const UBlockSet&) = default;
};

/// Active blocks are those whose unpadded core holds a band voxel. Each block
/// samples the global range [D*p - alpha, D*(p+1) + alpha) per axis; voxels
/// outside the band or the grid read kDefaultFill.
UBlockSet partition(const SparseUdfVolume& vol, std::uint32_t s, std::uint32_t alpha);

/// Reassembled band: per covered block core, the mean of all block
/// contributions that reached each voxel (count 0 means untouched).
class DenseBandField {
 public:
  DenseBandField() = default;
  DenseBandField(std::uint32_t n, std::uint32_t d);

  std::uint32_t resolution() const { return n_; }
  std::uint32_t core_side() const { return d_; }

  std::optional<float> value(std::int64_t i, std::int64_t j, std::int64_t k) const;
  std::uint32_t count(std::int64_t i, std::int64_t j, std::int64_t k) const;
  std::size_t touched_voxels() const;

  /// Covered cores in lexicographic order.
  const std::vector<BlockCoord>& cores() const { return cores_; }
  std::span<const float> core_values(std::size_t c) const;
  std::span<const std::uint16_t> core_counts(std::size_t c) const;

  /// Visits every touched voxel in lexicographic (i, j, k) order.
  template <typename Fn>
  void for_each(Fn&& fn) const;

 private:
  friend DenseBandField reassemble(const UBlockSet& blocks);
  std::int64_t slot(std::int64_t i, std::int64_t j, std::int64_t k) const;

  std::uint32_t n_ = 0;
  std::uint32_t d_ = 0;
  std::uint32_t s_ = 0;
  std::vector<BlockCoord> cores_;
  std::vector<std::int32_t> core_index_;  // s^3 table, -1 when uncovered
  std::vector<float> values_;
  std::vector<std::uint16_t> counts_;
};

/// Scatters every block (values clamped to [0,1]) to its global range,
/// dropping out-of-grid voxels, and averages overlapping contributions.
/// Accumulation runs in double precision in lexicographic block order.
DenseBandField reassemble(const UBlockSet& blocks);

/// Band entries of a reassembled field: voxels whose value lies strictly
/// below the band limit tau, in normalized units 0.8.
SparseUdfVolume band_from_field(const DenseBandField& field);

struct RoundtripReport {
  DenseBandField field;
  /// Stored voxels whose reassembled value differs from the input block value.
  std::vector<VoxelCoord> mismatches;
};

/// partition followed by reassemble with no model in between.
RoundtripReport roundtrip_identity(const SparseUdfVolume& vol, std::uint32_t s, std::uint32_t alpha);

void write_ublk(const UBlockSet& set, const std::filesystem::path& path);
std::string encode_ublk(const UBlockSet& set);
UBlockSet read_ublk(const std::filesystem::path& path);
UBlockSet decode_ublk(std::string data);

template <typename Fn>
void DenseBandField::for_each(Fn&& fn) const {
  // Rows of the global grid are visited in order by walking covered cores
  // slab by slab.
  const std::uint32_t d = d_;
  for (std::uint32_t i = 0; i < n_; ++i) {
    const std::uint32_t bi = i / d;
    for (std::uint32_t j = 0; j < n_; ++j) {
      const std::uint32_t bj = j / d;
      for (std::uint32_t bk = 0; bk < s_; ++bk) {
        const std::int32_t c = core_index_[(std::size_t{bi} * s_ + bj) * s_ + bk];
        if (c < 0) continue;
        const std::size_t base = static_cast<std::size_t>(c) * d * d * d +
                                 (std::size_t{i - bi * d} * d + (j - bj * d)) * d;
        for (std::uint32_t kk = 0; kk < d; ++kk)
          if (counts_[base + kk] > 0)
            fn(VoxelCoord{i, j, bk * d + kk}, values_[base + kk], counts_[base + kk]);
      }
    }
  }
}

}  // namespace log3d
