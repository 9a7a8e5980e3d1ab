// SPDX-License-Identifier: Apache-2.0
// One finite-difference case per differentiable op.
#pragma once

#include <string>

#include "gradcheck.hpp"

namespace log3d::fx {

struct OpCase {
  std::string name;
  Loss loss;
  std::vector<Tensor<double>> inputs;
};

inline std::vector<OpCase> op_cases() {
  using V = std::vector<Tensor<double>>;
  std::mt19937_64 rng(1);
  std::vector<OpCase> cases;
  const auto a = random_parameter({3, 4}, rng), b = random_parameter({3, 4}, rng);
  cases.push_back({"add", [](const V& in) { return weighted_sum(ad::add(in[0], in[1])); }, {a, b}});
  cases.push_back({"sub", [](const V& in) { return weighted_sum(ad::sub(in[0], in[1])); }, {a, b}});
  cases.push_back({"mul", [](const V& in) { return weighted_sum(ad::mul(in[0], in[1])); }, {a, b}});
  cases.push_back({"scale", [](const V& in) { return weighted_sum(ad::scale(in[0], -1.7)); }, {a}});
  cases.push_back({"exp", [](const V& in) { return weighted_sum(ad::exp(in[0])); }, {a}});
  cases.push_back({"silu", [](const V& in) { return weighted_sum(ad::silu(in[0])); }, {a}});
  cases.push_back({"reshape", [](const V& in) { return weighted_sum(ad::reshape(in[0], {2, 6})); }, {a}});
  cases.push_back({"sum", [](const V& in) { return ad::sum(in[0]); }, {a}});
  cases.push_back({"mean", [](const V& in) { return ad::mean(in[0]); }, {a}});

  const auto x = random_parameter({5, 4}, rng), w = random_parameter({3, 4}, rng), bias = random_parameter({3}, rng);
  cases.push_back({"linear", [](const V& in) { return weighted_sum(ad::linear(in[0], in[1], in[2])); }, {x, w, bias}});

  auto conv = [](std::size_t stride, std::size_t pad) {
    return [=](const V& in) { return weighted_sum(ad::conv3d(in[0], in[1], in[2], stride, pad)); };
  };
  const auto cx = random_parameter({2, 2, 5, 4, 3}, rng), cw = random_parameter({3, 2, 3, 3, 3}, rng),
             cb = random_parameter({3}, rng);
  cases.push_back({"conv3d widening pad 1", conv(1, 1), {cx, cw, cb}});
  cases.push_back({"conv3d widening stride 2", conv(2, 0), {cx, cw, cb}});
  const auto nx = random_parameter({3, 4, 4, 5, 3}, rng), nw = random_parameter({2, 4, 3, 3, 3}, rng),
             nb = random_parameter({2}, rng);
  cases.push_back({"conv3d narrowing pad 1", conv(1, 1), {nx, nw, nb}});
  cases.push_back({"conv3d narrowing pad 0", conv(1, 0), {nx, nw, nb}});
  cases.push_back({"conv3d unbatched", conv(1, 1), {random_parameter({4, 3, 3, 3}, rng), nw, nb}});

  cases.push_back({"maxpool3d", [](const V& in) { return weighted_sum(ad::maxpool3d(in[0], 2, 2)); },
                   {random_parameter({2, 2, 4, 4, 6}, rng)}});
  cases.push_back({"upsample_nearest3d", [](const V& in) { return weighted_sum(ad::upsample_nearest3d(in[0], 2)); },
                   {random_parameter({2, 3, 2, 2}, rng)}});

  cases.push_back({"layernorm", [](const V& in) { return weighted_sum(ad::layernorm(in[0], in[1], in[2])); },
                   {random_parameter({4, 6}, rng), random_parameter({6}, rng), random_parameter({6}, rng)}});
  cases.push_back({"attention", [](const V& in) { return weighted_sum(ad::attention(in[0], in[1], in[2])); },
                   {random_parameter({5, 4}, rng), random_parameter({5, 4}, rng), random_parameter({5, 4}, rng)}});

  const std::vector<std::vector<std::uint32_t>> groups{{0, 3}, {1, 2, 4}};
  cases.push_back({"gather_rows/assemble_rows",
                   [groups](const V& in) {
                     std::vector<Tensor<double>> parts;
                     for (const auto& g : groups) parts.push_back(ad::silu(ad::gather_rows(in[0], g)));
                     return weighted_sum(ad::assemble_rows(parts, groups, 5));
                   },
                   {random_parameter({5, 3}, rng)}});

  // Errors kept away from the Huber knee so the central difference stays on one branch.
  std::vector<double> pv, tv;
  for (double e : {0.03, -0.05, 0.25, -0.4, 0.0, 0.07}) {
    pv.push_back(0.5 + e);
    tv.push_back(0.5);
  }
  const auto target = Tensor<double>::constant({6}, tv);
  cases.push_back({"huber_mean", [target](const V& in) { return ad::huber_mean(in[0], target, 0.1); },
                   {Tensor<double>::parameter({6}, pv)}});
  const auto mu = random_parameter({3, 4}, rng), lv = random_parameter({3, 4}, rng, 0.5);
  cases.push_back({"kl_mean", [](const V& in) { return ad::kl_mean(in[0], in[1]); }, {mu, lv}});
  std::vector<double> eps(12);
  for (auto& e : eps) e = std::normal_distribution<double>()(rng);
  cases.push_back({"reparameterize",
                   [eps](const V& in) { return weighted_sum(ad::reparameterize(in[0], in[1], eps)); }, {mu, lv}});
  return cases;
}

}  // namespace log3d::fx
