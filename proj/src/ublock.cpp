// SPDX-License-Identifier: Apache-2.0
#include "log3d/ublock.hpp"

#include <algorithm>
#include <numeric>

#include "log3d/binary_io.hpp"
#include "log3d/parallel.hpp"

namespace log3d {
namespace {

constexpr std::uint32_t kUblkVersion = 1;
constexpr float kBandLimit = 0.8f;  // tau / clip = (4/N) / (5/N)

void check_partition_params(std::uint32_t n, std::uint32_t s, std::uint32_t alpha) {
  if (s == 0 || n % s != 0)
    throw BlockError("partition factor s=" + std::to_string(s) + " does not divide N=" + std::to_string(n));
  if (n / s + 2 * alpha < 1) throw BlockError("padded block side must be at least 1");
}

std::size_t block_table_index(const BlockCoord& p, std::uint32_t s) {
  return (std::size_t{p[0]} * s + p[1]) * s + p[2];
}

}  // namespace

void UBlockSet::validate() const {
  check_partition_params(n, s, alpha);
  if (d * s != n) throw BlockError("block side D must equal N/s");
  if (blocks.size() > std::size_t{s} * s * s) throw BlockError("more blocks than grid cells");
  for (const auto& b : blocks) {
    if (b.coord[0] >= s || b.coord[1] >= s || b.coord[2] >= s)
      throw BlockError("block coordinate outside the partition grid");
    if (b.values.size() != block_volume()) throw BlockError("block tensor has the wrong size");
  }
}

UBlockSet partition(const SparseUdfVolume& vol, std::uint32_t s, std::uint32_t alpha) {
  const std::uint32_t n = vol.resolution();
  check_partition_params(n, s, alpha);
  UBlockSet out;
  out.n = n;
  out.s = s;
  out.d = n / s;
  out.alpha = alpha;
  const std::uint32_t d = out.d;

  std::vector<BlockCoord> active;
  active.reserve(vol.size() / 8 + 1);
  for (const auto& e : vol.entries()) active.push_back({e.coord[0] / d, e.coord[1] / d, e.coord[2] / d});
  std::sort(active.begin(), active.end());
  active.erase(std::unique(active.begin(), active.end()), active.end());

  const std::uint32_t side = out.side();
  out.blocks.resize(active.size());
  parallel_for_chunks(active.size(), 4, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) {
      UBlock& block = out.blocks[b];
      block.coord = active[b];
      block.values.assign(std::size_t{side} * side * side, kDefaultFill);
      std::array<std::int64_t, 3> origin{};
      for (int a = 0; a < 3; ++a) origin[a] = std::int64_t{block.coord[a]} * d - alpha;
      for (std::uint32_t x = 0; x < side; ++x) {
        const std::int64_t gi = origin[0] + x;
        if (gi < 0 || gi >= n) continue;
        for (std::uint32_t y = 0; y < side; ++y) {
          const std::int64_t gj = origin[1] + y;
          if (gj < 0 || gj >= n) continue;
          // Entries are sorted, so a row of z-values is one contiguous run.
          const VoxelCoord row_lo{static_cast<std::uint32_t>(gi), static_cast<std::uint32_t>(gj),
                                  static_cast<std::uint32_t>(std::max<std::int64_t>(origin[2], 0))};
          const auto& entries = vol.entries();
          auto it = std::lower_bound(entries.begin(), entries.end(), row_lo,
                                     [](const auto& e, const VoxelCoord& k) { return e.coord < k; });
          for (; it != entries.end() && it->coord[0] == row_lo[0] && it->coord[1] == row_lo[1]; ++it) {
            const std::int64_t z = std::int64_t{it->coord[2]} - origin[2];
            if (z >= side) break;
            block.values[(std::size_t{x} * side + y) * side + static_cast<std::size_t>(z)] =
                narrow_value(it->value);
          }
        }
      }
    }
  });
  return out;
}

DenseBandField::DenseBandField(std::uint32_t n, std::uint32_t d) : n_(n), d_(d), s_(n / d) {
  core_index_.assign(std::size_t{s_} * s_ * s_, -1);
}

std::int64_t DenseBandField::slot(std::int64_t i, std::int64_t j, std::int64_t k) const {
  if (i < 0 || j < 0 || k < 0 || i >= n_ || j >= n_ || k >= n_) return -1;
  const BlockCoord q{static_cast<std::uint32_t>(i / d_), static_cast<std::uint32_t>(j / d_),
                     static_cast<std::uint32_t>(k / d_)};
  const std::int32_t c = core_index_[block_table_index(q, s_)];
  if (c < 0) return -1;
  const std::int64_t d = d_;
  return std::int64_t{c} * d * d * d + ((i - q[0] * d) * d + (j - q[1] * d)) * d + (k - q[2] * d);
}

std::optional<float> DenseBandField::value(std::int64_t i, std::int64_t j, std::int64_t k) const {
  const auto s = slot(i, j, k);
  if (s < 0 || counts_[static_cast<std::size_t>(s)] == 0) return std::nullopt;
  return values_[static_cast<std::size_t>(s)];
}

std::uint32_t DenseBandField::count(std::int64_t i, std::int64_t j, std::int64_t k) const {
  const auto s = slot(i, j, k);
  return s < 0 ? 0u : counts_[static_cast<std::size_t>(s)];
}

std::size_t DenseBandField::touched_voxels() const {
  return static_cast<std::size_t>(std::count_if(counts_.begin(), counts_.end(), [](auto c) { return c > 0; }));
}

std::span<const float> DenseBandField::core_values(std::size_t c) const {
  const std::size_t v = std::size_t{d_} * d_ * d_;
  return {values_.data() + c * v, v};
}

std::span<const std::uint16_t> DenseBandField::core_counts(std::size_t c) const {
  const std::size_t v = std::size_t{d_} * d_ * d_;
  return {counts_.data() + c * v, v};
}

DenseBandField reassemble(const UBlockSet& set) {
  set.validate();
  const std::uint32_t s = set.s, d = set.d, alpha = set.alpha, side = set.side();
  DenseBandField field(set.n, d);

  std::vector<std::int32_t> block_at(std::size_t{s} * s * s, -1);
  for (std::size_t b = 0; b < set.blocks.size(); ++b) {
    auto& slot = block_at[block_table_index(set.blocks[b].coord, s)];
    if (slot >= 0) throw BlockError("duplicate block coordinate");
    slot = static_cast<std::int32_t>(b);
  }

  // Pads reach at most `reach` neighboring cores per axis.
  const std::int64_t reach = (alpha + d - 1) / d;
  std::vector<BlockCoord> cores;
  for (const auto& b : set.blocks)
    for (std::int64_t dx = -reach; dx <= reach; ++dx)
      for (std::int64_t dy = -reach; dy <= reach; ++dy)
        for (std::int64_t dz = -reach; dz <= reach; ++dz) {
          const std::int64_t q[3] = {b.coord[0] + dx, b.coord[1] + dy, b.coord[2] + dz};
          if (q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= s || q[1] >= s || q[2] >= s) continue;
          cores.push_back({static_cast<std::uint32_t>(q[0]), static_cast<std::uint32_t>(q[1]),
                           static_cast<std::uint32_t>(q[2])});
        }
  std::sort(cores.begin(), cores.end());
  cores.erase(std::unique(cores.begin(), cores.end()), cores.end());
  for (std::size_t c = 0; c < cores.size(); ++c)
    field.core_index_[block_table_index(cores[c], s)] = static_cast<std::int32_t>(c);

  const std::size_t core_volume = std::size_t{d} * d * d;
  field.values_.assign(cores.size() * core_volume, 0.0f);
  field.counts_.assign(cores.size() * core_volume, 0);

  parallel_for_chunks(cores.size(), 4, [&](std::size_t begin, std::size_t end) {
    std::vector<double> sum(core_volume);
    std::vector<std::uint16_t> count(core_volume);
    for (std::size_t c = begin; c < end; ++c) {
      const BlockCoord q = cores[c];
      std::fill(sum.begin(), sum.end(), 0.0);
      std::fill(count.begin(), count.end(), 0);
      // Neighbors in lexicographic order fix the summation order.
      for (std::int64_t dx = -reach; dx <= reach; ++dx)
        for (std::int64_t dy = -reach; dy <= reach; ++dy)
          for (std::int64_t dz = -reach; dz <= reach; ++dz) {
            const std::int64_t p[3] = {q[0] + dx, q[1] + dy, q[2] + dz};
            if (p[0] < 0 || p[1] < 0 || p[2] < 0 || p[0] >= s || p[1] >= s || p[2] >= s) continue;
            const std::int32_t b = block_at[(std::size_t(p[0]) * s + std::size_t(p[1])) * s + std::size_t(p[2])];
            if (b < 0) continue;
            const auto& values = set.blocks[static_cast<std::size_t>(b)].values;
            // Local coordinate inside block p of core voxel 0 of q.
            std::int64_t off[3];
            for (int a = 0; a < 3; ++a) off[a] = (std::int64_t{q[a]} - p[a]) * d + alpha;
            for (std::uint32_t x = 0; x < d; ++x) {
              const std::int64_t lx = off[0] + x;
              if (lx < 0 || lx >= side) continue;
              for (std::uint32_t y = 0; y < d; ++y) {
                const std::int64_t ly = off[1] + y;
                if (ly < 0 || ly >= side) continue;
                for (std::uint32_t z = 0; z < d; ++z) {
                  const std::int64_t lz = off[2] + z;
                  if (lz < 0 || lz >= side) continue;
                  const float v = values[static_cast<std::size_t>((lx * side + ly) * side + lz)];
                  const std::size_t o = (std::size_t{x} * d + y) * d + z;
                  sum[o] += static_cast<double>(std::clamp(v, 0.0f, 1.0f));
                  ++count[o];
                }
              }
            }
          }
      float* out_v = field.values_.data() + c * core_volume;
      std::uint16_t* out_c = field.counts_.data() + c * core_volume;
      for (std::size_t o = 0; o < core_volume; ++o) {
        out_c[o] = count[o];
        out_v[o] = count[o] ? static_cast<float>(sum[o] / count[o]) : 0.0f;
      }
    }
  });
  field.cores_ = std::move(cores);
  return field;
}

SparseUdfVolume band_from_field(const DenseBandField& field) {
  std::vector<SparseUdfVolume::Entry> entries;
  field.for_each([&](const VoxelCoord& c, float v, std::uint16_t) {
    if (v < kBandLimit) entries.push_back({c, static_cast<double>(v)});
  });
  return SparseUdfVolume(field.resolution(), std::move(entries));
}

RoundtripReport roundtrip_identity(const SparseUdfVolume& vol, std::uint32_t s, std::uint32_t alpha) {
  RoundtripReport report;
  report.field = reassemble(partition(vol, s, alpha));
  for (const auto& e : vol.entries()) {
    const auto got = report.field.value(e.coord[0], e.coord[1], e.coord[2]);
    if (!got || *got != narrow_value(e.value)) report.mismatches.push_back(e.coord);
  }
  return report;
}

std::string encode_ublk(const UBlockSet& set) {
  set.validate();
  BinaryWriter w;
  w.magic("UBLK");
  w.u32(kUblkVersion);
  w.u32(set.n);
  w.u32(set.s);
  w.u32(set.alpha);
  w.u32(static_cast<std::uint32_t>(set.blocks.size()));
  for (const auto& b : set.blocks) {
    for (auto c : b.coord) w.u32(c);
    for (float v : b.values) w.f32(v);
  }
  return w.buffer();
}

void write_ublk(const UBlockSet& set, const std::filesystem::path& path) { write_file(path, encode_ublk(set)); }

UBlockSet decode_ublk(std::string data) {
  BinaryReader r(std::move(data));
  r.expect_magic("UBLK");
  if (const auto v = r.u32(); v != kUblkVersion) throw IoError("unsupported UBLK version " + std::to_string(v));
  UBlockSet set;
  set.n = r.u32();
  set.s = r.u32();
  set.alpha = r.u32();
  if (!valid_resolution(set.n) || set.s == 0 || set.n % set.s != 0 || set.alpha > set.n)
    throw IoError("UBLK header has invalid partition parameters");
  set.d = set.n / set.s;
  const std::uint32_t count = r.u32();
  const std::size_t volume = set.block_volume();
  if (count > r.remaining() / (12 + 4 * volume)) throw IoError("UBLK block count exceeds file size");
  set.blocks.resize(count);
  for (auto& b : set.blocks) {
    b.coord = {r.u32(), r.u32(), r.u32()};
    b.values.resize(volume);
    for (auto& v : b.values) v = r.f32();
  }
  if (!r.at_end()) throw IoError("trailing bytes after UBLK blocks");
  try {
    set.validate();
  } catch (const BlockError& e) {
    throw IoError(std::string("invalid UBLK contents: ") + e.what());
  }
  return set;
}

UBlockSet read_ublk(const std::filesystem::path& path) { return decode_ublk(read_file(path)); }

}  // namespace log3d
