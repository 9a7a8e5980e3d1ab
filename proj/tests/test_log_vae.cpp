// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "log3d/checkpoint.hpp"
#include "log3d/log_vae.hpp"
#include "vae_helpers.hpp"

using namespace log3d;

TEST(Architecture, JsonRoundTripAndValidation) {
  VaeArchitecture a;
  EXPECT_EQ(a.side(), 12u);
  EXPECT_EQ(a.token_side(), 3u);
  EXPECT_EQ(VaeArchitecture::from_json(a.to_json()), a);
  VaeArchitecture bad = a;
  bad.d_model = 100;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = a;
  bad.alpha = 1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Params, LayoutIsUniqueAndCountMatches) {
  const VaeArchitecture a;
  const auto layout = LogVaeParams<float>::layout(a);
  std::set<std::string> names;
  std::size_t total = 0;
  for (const auto& [name, shape] : layout) {
    EXPECT_TRUE(names.insert(name).second) << name;
    total += ad::numel(shape);
  }
  const auto p = LogVaeParams<float>::initialize(a, 1);
  EXPECT_EQ(p.parameter_count(), total);
  EXPECT_EQ(p.tensors().size(), layout.size());
  EXPECT_THROW(p.get("no.such"), std::out_of_range);
}

TEST(Params, SeededInitIsReproducible) {
  const auto a = LogVaeParams<float>::initialize(VaeArchitecture{}, 5);
  const auto b = LogVaeParams<float>::initialize(VaeArchitecture{}, 5);
  const auto c = LogVaeParams<float>::initialize(VaeArchitecture{}, 6);
  EXPECT_EQ(encode_checkpoint(a), encode_checkpoint(b));
  EXPECT_NE(encode_checkpoint(a), encode_checkpoint(c));
}

TEST(PositionalEncoding, SinCosPairsPerAxis) {
  const auto pe = positional_encoding({0, 1, 2}, 96);
  ASSERT_EQ(pe.size(), 96u);
  for (int f = 0; f < 16; ++f) {
    const double w = std::pow(10000.0, -f / 16.0);
    EXPECT_EQ(pe[2 * f], 0.0);
    EXPECT_EQ(pe[2 * f + 1], 1.0);
    EXPECT_DOUBLE_EQ(pe[32 + 2 * f], std::sin(w));
    EXPECT_DOUBLE_EQ(pe[64 + 2 * f + 1], std::cos(2 * w));
  }
  EXPECT_THROW(positional_encoding({0, 0, 0}, 10), std::invalid_argument);
}

TEST(WindowGroups, PartitionTokensAndShift) {
  std::vector<BlockCoord> coords;
  for (std::uint32_t i = 0; i < 8; ++i)
    for (std::uint32_t j = 0; j < 3; ++j) coords.push_back({i, j, 1});
  for (bool shifted : {false, true}) {
    const auto groups = window_groups(coords, 4, shifted);
    std::vector<int> seen(coords.size(), 0);
    for (const auto& g : groups) {
      EXPECT_TRUE(std::is_sorted(g.begin(), g.end()));
      for (auto idx : g) ++seen[idx];
      const std::uint32_t shift = shifted ? 2 : 0;
      for (auto idx : g) EXPECT_EQ((coords[idx][0] + shift) / 4, (coords[g[0]][0] + shift) / 4);
    }
    for (int s : seen) EXPECT_EQ(s, 1);
  }
  EXPECT_EQ(window_groups(coords, 4, false).size(), 2u);
  EXPECT_EQ(window_groups(coords, 4, true).size(), 6u);
}

TEST(Vae, ResolutionIndependentParameters) {
  const auto params = LogVaeParams<float>::initialize(VaeArchitecture{}, 3);
  const auto b32 = fx::sphere_blocks(32);
  const auto b64 = fx::sphere_blocks(64);
  EXPECT_LT(b32.blocks.size(), b64.blocks.size());
  const auto l32 = encode<float>(b32, params, 1);
  const auto l64 = encode<float>(b64, params, 1);
  EXPECT_EQ(l32.mu.dim(0), b32.blocks.size());
  EXPECT_EQ(l64.mu.dim(0), b64.blocks.size());
  EXPECT_EQ(l32.mu.dim(1), 16u);
}

TEST(Vae, DecodeKeepsCanonicalCoordinates) {
  const auto params = LogVaeParams<float>::initialize(VaeArchitecture{}, 4);
  auto blocks = fx::sphere_blocks(32);
  std::reverse(blocks.blocks.begin(), blocks.blocks.end());
  const auto latents = encode<float>(blocks, params, 9);
  const auto decoded = decode<float>(latents, params);
  ASSERT_EQ(decoded.blocks.size(), blocks.blocks.size());
  const auto canon = canonical_order(blocks);
  for (std::size_t i = 0; i < canon.blocks.size(); ++i) {
    EXPECT_EQ(decoded.blocks[i].coord, canon.blocks[i].coord);
    EXPECT_EQ(decoded.blocks[i].values.size(), 1728u);
  }
}

TEST(Vae, PermutationInvariance) {
  const auto params = LogVaeParams<float>::initialize(VaeArchitecture{}, 8);
  const auto blocks = fx::sphere_blocks(32);
  const auto ref = encode<float>(blocks, params, 21);
  const auto ref_dec = decode<float>(ref, params);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 3; ++trial) {
    auto shuffled = blocks;
    std::shuffle(shuffled.blocks.begin(), shuffled.blocks.end(), rng);
    const auto lat = encode<float>(shuffled, params, 21);
    ASSERT_TRUE(std::equal(lat.mu.values().begin(), lat.mu.values().end(), ref.mu.values().begin()));
    ASSERT_TRUE(std::equal(lat.sample.values().begin(), lat.sample.values().end(), ref.sample.values().begin()));
    EXPECT_EQ(decode<float>(lat, params), ref_dec);
  }
}

TEST(Vae, AffineCollapseToFinalBias) {
  auto params = LogVaeParams<float>::zeros(VaeArchitecture{});
  params.get("dec.conv1.b").mutable_values()[0] = 0.375f;
  const auto blocks = fx::two_block_set();
  const auto decoded = decode<float>(encode<float>(blocks, params, 1), params);
  for (const auto& b : decoded.blocks)
    for (float v : b.values) ASSERT_EQ(v, 0.375f);
}

TEST(Vae, DecodeRejectsMismatchedLatents) {
  const auto params = LogVaeParams<float>::initialize(VaeArchitecture{}, 1);
  auto latents = encode<float>(fx::two_block_set(), params, 1);
  latents.coords.push_back({1, 1, 1});
  EXPECT_THROW(decode<float>(latents, params), ad::ShapeError);
  UBlockSet wrong = fx::two_block_set();
  wrong.alpha = 1;
  for (auto& b : wrong.blocks) b.values.resize(1000);
  EXPECT_THROW(encode<float>(wrong, params, 1), ad::ShapeError);
}

TEST(Losses, KlMatchesScalarOracle) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> mu(200), lv(200);
  for (auto& x : mu) x = n(rng);
  for (auto& x : lv) x = n(rng);
  double ref = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) ref += -0.5 * (1 + lv[i] - mu[i] * mu[i] - std::exp(lv[i]));
  ref /= mu.size();
  EXPECT_NEAR(kl_loss(mu, lv), ref, 1e-12);
  const auto t = ad::kl_mean(ad::Tensor<double>::constant({200}, mu), ad::Tensor<double>::constant({200}, lv));
  EXPECT_NEAR(t.item(), ref, 1e-12);
  const std::vector<double> zero(4, 0.0), one(4, 1.0);
  EXPECT_EQ(kl_loss(zero, zero), 0.0);
  EXPECT_EQ(kl_loss(one, zero), 0.5);
}

TEST(Losses, HuberOnBlockSets) {
  const auto target = fx::two_block_set();
  EXPECT_EQ(huber_udf_loss(target, target, 0.1), 0.0);
  auto pred = target;
  const double total = 2.0 * 1728;
  pred.blocks[0].values[5] += 0.1f;
  const double e = static_cast<double>(pred.blocks[0].values[5]) - target.blocks[0].values[5];
  EXPECT_NEAR(huber_udf_loss(pred, target, 0.1), 0.5 * e * e / total, 1e-15);
  pred = target;
  pred.blocks[1].values[0] += 0.2f;
  const double e2 = static_cast<double>(pred.blocks[1].values[0]) - target.blocks[1].values[0];
  EXPECT_NEAR(huber_udf_loss(pred, target, 0.1), 0.1 * (std::abs(e2) - 0.05) / total, 1e-15);
  pred.blocks[1].coord = {1, 1, 1};
  EXPECT_THROW(huber_udf_loss(pred, target, 0.1), BlockError);
}

TEST(Losses, TotalLossComposition) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> p(10), t(10), mu(6), lv(6);
  for (auto* v : {&p, &t, &mu, &lv})
    for (auto& x : *v) x = n(rng);
  using T = ad::Tensor<double>;
  const T P = T::constant({10}, p), Tt = T::constant({10}, t), M = T::constant({6}, mu), L = T::constant({6}, lv);
  EXPECT_EQ(total_loss(P, Tt, M, L, 0.0, 0.1).item(), ad::huber_mean(P, Tt, 0.1).item());
  EXPECT_NEAR(total_loss(P, Tt, M, L, 0.5, 0.1).item(),
              ad::huber_mean(P, Tt, 0.1).item() + 0.5 * kl_loss(mu, lv), 1e-12);
  const T Z = T::zeros({6});
  EXPECT_EQ(total_loss(P, P, Z, Z, 1.0, 0.1).item(), 0.0);
}

TEST(Vae, TotalLossGradientMatchesFiniteDifferences) {
  const auto check = fx::whole_model_gradcheck(fx::two_block_set(), 20, 123);
  EXPECT_EQ(check.checked, 20u);
  EXPECT_LT(check.worst_relative, 1e-4);
}

TEST(Vae, FloatAndDoubleAgree) {
  const auto pf = LogVaeParams<float>::initialize(VaeArchitecture{}, 2);
  const auto pd = pf.cast<double>();
  const auto blocks = fx::two_block_set();
  const auto of = build_objective<float>(blocks, pf, 3, 1e-6f, 0.1f);
  const auto od = build_objective<double>(blocks, pd, 3, 1e-6, 0.1);
  EXPECT_NEAR(of.terms().udf, od.terms().udf, 1e-5 * od.terms().udf);
}
