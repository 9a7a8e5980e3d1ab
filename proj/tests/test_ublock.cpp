// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <map>
#include <set>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "log3d/binary_io.hpp"
#include "log3d/parallel.hpp"
#include "log3d/ublock.hpp"

using namespace log3d;

namespace {

SparseUdfVolume torus_volume(std::uint32_t n) {
  return voxelize_sparse(normalize_to_unit_cube(fx::torus(0.4, 0.12, 24, 12)).mesh, n);
}

}  // namespace

TEST(Partition, ActiveBlocksAndPadValues) {
  const auto vol = torus_volume(32);
  const auto set = partition(vol, 4, 2);
  EXPECT_EQ(set.d, 8u);
  EXPECT_EQ(set.side(), 12u);
  std::set<BlockCoord> expected;
  for (const auto& e : vol.entries()) expected.insert({e.coord[0] / 8, e.coord[1] / 8, e.coord[2] / 8});
  std::set<BlockCoord> got;
  for (const auto& b : set.blocks) got.insert(b.coord);
  EXPECT_EQ(got, expected);
  for (const auto& b : set.blocks)
    for (std::int64_t x = 0; x < 12; ++x)
      for (std::int64_t y = 0; y < 12; ++y)
        for (std::int64_t z = 0; z < 12; ++z) {
          const std::int64_t g[3] = {std::int64_t{b.coord[0]} * 8 - 2 + x, std::int64_t{b.coord[1]} * 8 - 2 + y,
                                     std::int64_t{b.coord[2]} * 8 - 2 + z};
          float want = kDefaultFill;
          if (g[0] >= 0 && g[1] >= 0 && g[2] >= 0 && g[0] < 32 && g[1] < 32 && g[2] < 32) {
            const auto v = vol.find({static_cast<std::uint32_t>(g[0]), static_cast<std::uint32_t>(g[1]),
                                     static_cast<std::uint32_t>(g[2])});
            if (v) want = narrow_value(*v);
          }
          ASSERT_EQ(b.values[(x * 12 + y) * 12 + z], want);
        }
}

TEST(Partition, RejectsBadFactor) {
  const auto vol = torus_volume(32);
  EXPECT_THROW(partition(vol, 3, 2), BlockError);
  EXPECT_THROW(partition(vol, 0, 2), BlockError);
}

TEST(Reassemble, AlphaZeroIsIdentityOnBand) {
  const auto vol = torus_volume(64);
  for (std::uint32_t s : {1u, 4u, 8u}) {
    const auto report = roundtrip_identity(vol, s, 0);
    EXPECT_TRUE(report.mismatches.empty());
    const auto band = band_from_field(report.field);
    ASSERT_EQ(band.size(), vol.size());
    for (std::size_t i = 0; i < vol.size(); ++i) {
      ASSERT_EQ(band.entries()[i].coord, vol.entries()[i].coord);
      ASSERT_EQ(band.entries()[i].value, static_cast<double>(narrow_value(vol.entries()[i].value)));
    }
  }
}

TEST(Reassemble, MatchesScatterAddOracle) {
  const auto vol = torus_volume(64);
  const auto set = partition(vol, 8, 2);
  const auto field = reassemble(set);
  const auto oracle = fx::scatter_oracle(set);
  EXPECT_EQ(field.touched_voxels(), oracle.size());
  for (const auto& [c, acc] : oracle) {
    const auto v = field.value(c[0], c[1], c[2]);
    ASSERT_TRUE(v.has_value());
    ASSERT_EQ(*v, static_cast<float>(acc.first / acc.second));
    ASSERT_EQ(field.count(c[0], c[1], c[2]), static_cast<std::uint32_t>(acc.second));
  }
  // Stored voxels come back unchanged: every overlapping copy holds the same value.
  for (const auto& e : vol.entries()) ASSERT_EQ(*field.value(e.coord[0], e.coord[1], e.coord[2]), narrow_value(e.value));
}

TEST(Reassemble, ClampsContributions) {
  UBlockSet set;
  set.n = 16;
  set.s = 2;
  set.d = 8;
  set.alpha = 1;
  UBlock a{{0, 0, 0}, std::vector<float>(1000, -0.5f)};
  UBlock b{{1, 0, 0}, std::vector<float>(1000, 3.0f)};
  set.blocks = {b, a};
  const auto field = reassemble(set);
  EXPECT_EQ(*field.value(0, 0, 0), 0.0f);
  EXPECT_EQ(*field.value(15, 0, 0), 1.0f);
  // Voxel 8 is covered by both blocks: core of b, pad of a.
  EXPECT_EQ(*field.value(8, 0, 0), 0.5f);
  EXPECT_EQ(field.count(8, 0, 0), 2u);
  EXPECT_TRUE(band_from_field(field).size() > 0);
}

TEST(Reassemble, BandThresholdIsStrict) {
  UBlockSet set;
  set.n = 16;
  set.s = 2;
  set.d = 8;
  set.alpha = 0;
  UBlock a{{0, 0, 0}, std::vector<float>(512, 1.0f)};
  a.values[0] = 0.8f;
  a.values[1] = std::nextafter(0.8f, 0.0f);
  set.blocks = {a};
  const auto band = band_from_field(reassemble(set));
  ASSERT_EQ(band.size(), 1u);
  EXPECT_EQ(band.entries()[0].coord, (VoxelCoord{0, 0, 1}));
}

TEST(Reassemble, ThreadCountDoesNotChangeResult) {
  const auto vol = torus_volume(64);
  set_thread_count(1);
  const auto one = encode_udfv(band_from_field(reassemble(partition(vol, 8, 2))));
  set_thread_count(3);
  const auto three = encode_udfv(band_from_field(reassemble(partition(vol, 8, 2))));
  set_thread_count(0);
  EXPECT_EQ(one, three);
}

TEST(Ublk, RoundTripAndValidation) {
  const auto set = partition(torus_volume(32), 4, 2);
  const std::string bytes = encode_ublk(set);
  EXPECT_EQ(bytes.substr(0, 4), "UBLK");
  EXPECT_EQ(decode_ublk(bytes), set);
  EXPECT_EQ(encode_ublk(decode_ublk(bytes)), bytes);
  EXPECT_THROW(decode_ublk(bytes.substr(0, bytes.size() - 1)), IoError);
  const auto dir = fx::scratch_dir("ublk");
  write_ublk(set, dir / "a.ublk");
  EXPECT_EQ(read_ublk(dir / "a.ublk"), set);
}
