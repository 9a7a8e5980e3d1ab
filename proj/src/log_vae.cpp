// SPDX-License-Identifier: Apache-2.0
#include "log3d/log_vae.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "json.hpp"

namespace log3d {

using ad::Shape;
using ad::Tensor;

namespace {

enum class Init { kHe, kLeCun, kZero, kOne, kLogVarBias };

// Initial log-variance of the posterior; the noise starts small relative to
// the unit-scale means so reconstruction dominates early training.
constexpr double kInitialLogVar = -8.0;

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
};

std::vector<ParamSpec> param_specs(const VaeArchitecture& a) {
  const std::size_t d = a.d_model, lat = a.latent_channels, c1 = a.conv1_channels, c2 = a.conv2_channels;
  const std::size_t ts = a.token_side(), hidden = std::size_t{a.mlp_ratio} * d;
  std::vector<ParamSpec> specs;
  auto add = [&](std::string name, Shape shape, Init init) { specs.push_back({std::move(name), std::move(shape), init}); };
  auto transformer = [&](const std::string& prefix) {
    for (std::uint32_t l = 0; l < a.layers; ++l) {
      const std::string p = prefix + ".layer" + std::to_string(l);
      add(p + ".ln1.g", {d}, Init::kOne);
      add(p + ".ln1.b", {d}, Init::kZero);
      for (const char* m : {"q", "k", "v", "o"}) {
        add(p + ".attn.w" + m, {d, d}, Init::kLeCun);
        add(p + ".attn.b" + m, {d}, Init::kZero);
      }
      add(p + ".ln2.g", {d}, Init::kOne);
      add(p + ".ln2.b", {d}, Init::kZero);
      add(p + ".mlp.w1", {hidden, d}, Init::kLeCun);
      add(p + ".mlp.b1", {hidden}, Init::kZero);
      add(p + ".mlp.w2", {d, hidden}, Init::kLeCun);
      add(p + ".mlp.b2", {d}, Init::kZero);
    }
    add(prefix + ".norm.g", {d}, Init::kOne);
    add(prefix + ".norm.b", {d}, Init::kZero);
  };

  add("enc.conv1.w", {c1, 1, 3, 3, 3}, Init::kHe);
  add("enc.conv1.b", {c1}, Init::kZero);
  add("enc.conv2.w", {c2, c1, 3, 3, 3}, Init::kHe);
  add("enc.conv2.b", {c2}, Init::kZero);
  add("enc.conv3.w", {d, c2, ts, ts, ts}, Init::kHe);
  add("enc.conv3.b", {d}, Init::kZero);
  transformer("enc");
  add("enc.mu.w", {lat, d}, Init::kLeCun);
  add("enc.mu.b", {lat}, Init::kZero);
  add("enc.logvar.w", {lat, d}, Init::kZero);
  add("enc.logvar.b", {lat}, Init::kLogVarBias);

  add("dec.embed.w", {d, lat}, Init::kLeCun);
  add("dec.embed.b", {d}, Init::kZero);
  transformer("dec");
  add("dec.expand.w", {c2 * ts * ts * ts, d}, Init::kLeCun);
  add("dec.expand.b", {c2 * ts * ts * ts}, Init::kZero);
  add("dec.conv2.w", {c1, c2, 3, 3, 3}, Init::kHe);
  add("dec.conv2.b", {c1}, Init::kZero);
  add("dec.conv1.w", {1, c1, 3, 3, 3}, Init::kHe);
  add("dec.conv1.b", {1}, Init::kZero);
  return specs;
}

std::size_t fan_in(const Shape& s) {
  std::size_t f = 1;
  for (std::size_t i = 1; i < s.size(); ++i) f *= s[i];
  return f;
}

template <typename T>
Tensor<T> positional_tensor(const std::vector<BlockCoord>& coords, std::uint32_t d_model) {
  std::vector<T> values;
  values.reserve(coords.size() * d_model);
  for (const auto& c : coords)
    for (double v : positional_encoding(c, d_model)) values.push_back(static_cast<T>(v));
  return Tensor<T>::constant({coords.size(), d_model}, std::move(values));
}

template <typename T>
Tensor<T> windowed_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                             const std::vector<std::vector<std::uint32_t>>& groups) {
  std::vector<Tensor<T>> parts;
  parts.reserve(groups.size());
  for (const auto& g : groups)
    parts.push_back(ad::attention(ad::gather_rows(q, g), ad::gather_rows(k, g), ad::gather_rows(v, g)));
  return ad::assemble_rows(parts, groups, q.dim(0));
}

// Pre-norm block: x + attn(LN(x)), then x + MLP(LN(x)).
template <typename T>
Tensor<T> transformer_layer(const Tensor<T>& x, const LogVaeParams<T>& P, const std::string& p,
                            const std::vector<std::vector<std::uint32_t>>& groups) {
  const Tensor<T> h = ad::layernorm(x, P.get(p + ".ln1.g"), P.get(p + ".ln1.b"));
  const Tensor<T> q = ad::linear(h, P.get(p + ".attn.wq"), P.get(p + ".attn.bq"));
  const Tensor<T> k = ad::linear(h, P.get(p + ".attn.wk"), P.get(p + ".attn.bk"));
  const Tensor<T> v = ad::linear(h, P.get(p + ".attn.wv"), P.get(p + ".attn.bv"));
  const Tensor<T> o = ad::linear(windowed_attention(q, k, v, groups), P.get(p + ".attn.wo"), P.get(p + ".attn.bo"));
  const Tensor<T> x1 = ad::add(x, o);
  const Tensor<T> h2 = ad::layernorm(x1, P.get(p + ".ln2.g"), P.get(p + ".ln2.b"));
  const Tensor<T> m = ad::linear(ad::silu(ad::linear(h2, P.get(p + ".mlp.w1"), P.get(p + ".mlp.b1"))),
                                 P.get(p + ".mlp.w2"), P.get(p + ".mlp.b2"));
  return ad::add(x1, m);
}

template <typename T>
Tensor<T> transformer_stack(Tensor<T> x, const std::vector<BlockCoord>& coords, const LogVaeParams<T>& P,
                            const std::string& prefix) {
  const auto& a = P.architecture();
  const auto plain = window_groups(coords, a.window, false);
  const auto shifted = window_groups(coords, a.window, true);
  for (std::uint32_t l = 0; l < a.layers; ++l)
    x = transformer_layer(x, P, prefix + ".layer" + std::to_string(l), l % 2 == 0 ? plain : shifted);
  return ad::layernorm(x, P.get(prefix + ".norm.g"), P.get(prefix + ".norm.b"));
}

}  // namespace

void VaeArchitecture::validate() const {
  if (block_core == 0) throw std::invalid_argument("architecture: block core must be positive");
  if (side() % 4 != 0) throw std::invalid_argument("architecture: padded block side must be divisible by 4");
  if (d_model == 0 || d_model % 6 != 0) throw std::invalid_argument("architecture: d_model must be a positive multiple of 6");
  if (latent_channels == 0 || conv1_channels == 0 || conv2_channels == 0 || window == 0 || mlp_ratio == 0)
    throw std::invalid_argument("architecture: widths and window must be positive");
}

std::string VaeArchitecture::to_json() const {
  nlohmann::ordered_json j;
  j["block_core"] = block_core;
  j["alpha"] = alpha;
  j["d_model"] = d_model;
  j["latent_channels"] = latent_channels;
  j["conv1_channels"] = conv1_channels;
  j["conv2_channels"] = conv2_channels;
  j["layers"] = layers;
  j["window"] = window;
  j["mlp_ratio"] = mlp_ratio;
  return j.dump();
}

VaeArchitecture VaeArchitecture::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  VaeArchitecture a;
  a.block_core = j.at("block_core").get<std::uint32_t>();
  a.alpha = j.at("alpha").get<std::uint32_t>();
  a.d_model = j.at("d_model").get<std::uint32_t>();
  a.latent_channels = j.at("latent_channels").get<std::uint32_t>();
  a.conv1_channels = j.at("conv1_channels").get<std::uint32_t>();
  a.conv2_channels = j.at("conv2_channels").get<std::uint32_t>();
  a.layers = j.at("layers").get<std::uint32_t>();
  a.window = j.at("window").get<std::uint32_t>();
  a.mlp_ratio = j.at("mlp_ratio").get<std::uint32_t>();
  a.validate();
  return a;
}

std::vector<double> positional_encoding(const BlockCoord& p, std::uint32_t d_model) {
  if (d_model == 0 || d_model % 6 != 0)
    throw std::invalid_argument("positional encoding width must be a positive multiple of 6");
  const std::uint32_t freqs = d_model / 6;
  std::vector<double> out;
  out.reserve(d_model);
  for (int axis = 0; axis < 3; ++axis)
    for (std::uint32_t f = 0; f < freqs; ++f) {
      const double omega = std::pow(10000.0, -static_cast<double>(f) / freqs);
      out.push_back(std::sin(omega * p[axis]));
      out.push_back(std::cos(omega * p[axis]));
    }
  return out;
}

std::vector<std::vector<std::uint32_t>> window_groups(const std::vector<BlockCoord>& coords, std::uint32_t w,
                                                      bool shifted) {
  if (w == 0) throw std::invalid_argument("window size must be >= 1");
  const std::uint32_t shift = shifted ? w / 2 : 0;
  std::map<BlockCoord, std::vector<std::uint32_t>> cells;
  for (std::uint32_t i = 0; i < coords.size(); ++i) {
    const auto& c = coords[i];
    cells[{(c[0] + shift) / w, (c[1] + shift) / w, (c[2] + shift) / w}].push_back(i);
  }
  std::vector<std::vector<std::uint32_t>> out;
  out.reserve(cells.size());
  for (auto& [cell, members] : cells) out.push_back(std::move(members));
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Shape>> LogVaeParams<T>::layout(const VaeArchitecture& arch) {
  std::vector<std::pair<std::string, Shape>> out;
  for (auto& s : param_specs(arch)) out.emplace_back(s.name, s.shape);
  return out;
}

template <typename T>
LogVaeParams<T> LogVaeParams<T>::initialize(const VaeArchitecture& arch, std::uint64_t seed) {
  arch.validate();
  LogVaeParams p;
  p.arch_ = arch;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& spec : param_specs(arch)) {
    std::vector<T> v(ad::numel(spec.shape), T(0));
    const double fan = static_cast<double>(fan_in(spec.shape));
    switch (spec.init) {
      case Init::kHe:
        for (auto& x : v) x = static_cast<T>(normal(rng) * std::sqrt(2.0 / fan));
        break;
      case Init::kLeCun:
        for (auto& x : v) x = static_cast<T>(normal(rng) * std::sqrt(1.0 / fan));
        break;
      case Init::kOne:
        std::fill(v.begin(), v.end(), T(1));
        break;
      case Init::kLogVarBias:
        std::fill(v.begin(), v.end(), static_cast<T>(kInitialLogVar));
        break;
      case Init::kZero:
        break;
    }
    p.tensors_.emplace_back(spec.name, Tensor<T>::parameter(spec.shape, std::move(v)));
  }
  return p;
}

template <typename T>
LogVaeParams<T> LogVaeParams<T>::zeros(const VaeArchitecture& arch) {
  arch.validate();
  LogVaeParams p;
  p.arch_ = arch;
  for (const auto& spec : param_specs(arch))
    p.tensors_.emplace_back(spec.name, Tensor<T>::parameter(spec.shape, std::vector<T>(ad::numel(spec.shape), T(0))));
  return p;
}

template <typename T>
const Tensor<T>& LogVaeParams<T>::get(const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return t;
  throw std::out_of_range("no parameter named '" + name + "'");
}

template <typename T>
Tensor<T>& LogVaeParams<T>::get(const std::string& name) {
  return const_cast<Tensor<T>&>(std::as_const(*this).get(name));
}

template <typename T>
std::size_t LogVaeParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.numel();
  return n;
}

template <typename T>
void LogVaeParams<T>::zero_grad() {
  for (auto& [name, t] : tensors_) t.zero_grad();
}

template <typename T>
template <typename U>
LogVaeParams<U> LogVaeParams<T>::cast() const {
  LogVaeParams<U> out;
  out.arch_ = arch_;
  for (const auto& [name, t] : tensors_) {
    std::vector<U> v(t.values().begin(), t.values().end());
    out.tensors_.emplace_back(name, Tensor<U>::parameter(t.shape(), std::move(v)));
  }
  return out;
}

template <typename T>
std::vector<T> standard_normal(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> out(count);
  for (auto& x : out) x = static_cast<T>(normal(rng));
  return out;
}

template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& logvar, std::uint64_t seed) {
  return ad::reparameterize(mu, logvar, standard_normal<T>(mu.numel(), seed));
}

template <typename T>
Tensor<T> blocks_tensor(const UBlockSet& set) {
  const std::size_t side = set.side();
  std::vector<T> values;
  values.reserve(set.blocks.size() * set.block_volume());
  for (const auto& b : set.blocks)
    for (float v : b.values) values.push_back(static_cast<T>(v));
  return Tensor<T>::constant({set.blocks.size(), 1, side, side, side}, std::move(values));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> encode_tensors(const Tensor<T>& blocks, const std::vector<BlockCoord>& coords,
                                               const LogVaeParams<T>& P) {
  const auto& a = P.architecture();
  const std::size_t side = a.side();
  if (blocks.rank() != 5 || blocks.dim(0) != coords.size() || blocks.dim(1) != 1 || blocks.dim(2) != side ||
      blocks.dim(3) != side || blocks.dim(4) != side)
    throw ad::ShapeError("encode: block tensor " + ad::to_string(blocks.shape()) + " does not match side " +
                         std::to_string(side));
  Tensor<T> h = ad::silu(ad::conv3d(blocks, P.get("enc.conv1.w"), P.get("enc.conv1.b"), 1, 1));
  h = ad::maxpool3d(h, 2, 2);
  h = ad::silu(ad::conv3d(h, P.get("enc.conv2.w"), P.get("enc.conv2.b"), 1, 1));
  h = ad::maxpool3d(h, 2, 2);
  h = ad::conv3d(h, P.get("enc.conv3.w"), P.get("enc.conv3.b"), 1, 0);
  Tensor<T> tokens = ad::reshape(h, {coords.size(), std::size_t{a.d_model}});
  tokens = ad::add(tokens, positional_tensor<T>(coords, a.d_model));
  tokens = transformer_stack(tokens, coords, P, "enc");
  return {ad::linear(tokens, P.get("enc.mu.w"), P.get("enc.mu.b")),
          ad::linear(tokens, P.get("enc.logvar.w"), P.get("enc.logvar.b"))};
}

template <typename T>
Tensor<T> decode_tensors(const Tensor<T>& latents, const std::vector<BlockCoord>& coords, const LogVaeParams<T>& P) {
  const auto& a = P.architecture();
  if (latents.rank() != 2 || latents.dim(0) != coords.size() || latents.dim(1) != a.latent_channels)
    throw ad::ShapeError("decode: latent tensor " + ad::to_string(latents.shape()) + " does not match " +
                         std::to_string(coords.size()) + " tokens of width " + std::to_string(a.latent_channels));
  const std::size_t ts = a.token_side();
  Tensor<T> x = ad::linear(latents, P.get("dec.embed.w"), P.get("dec.embed.b"));
  x = ad::add(x, positional_tensor<T>(coords, a.d_model));
  x = transformer_stack(x, coords, P, "dec");
  Tensor<T> h = ad::linear(x, P.get("dec.expand.w"), P.get("dec.expand.b"));
  h = ad::silu(ad::reshape(h, {coords.size(), std::size_t{a.conv2_channels}, ts, ts, ts}));
  h = ad::silu(ad::conv3d(ad::upsample_nearest3d(h, 2), P.get("dec.conv2.w"), P.get("dec.conv2.b"), 1, 1));
  return ad::conv3d(ad::upsample_nearest3d(h, 2), P.get("dec.conv1.w"), P.get("dec.conv1.b"), 1, 1);
}

UBlockSet canonical_order(const UBlockSet& blocks) {
  UBlockSet out = blocks;
  std::sort(out.blocks.begin(), out.blocks.end(), [](const UBlock& a, const UBlock& b) { return a.coord < b.coord; });
  for (std::size_t i = 1; i < out.blocks.size(); ++i)
    if (out.blocks[i - 1].coord == out.blocks[i].coord) throw BlockError("duplicate block coordinate");
  return out;
}

namespace {

void check_blocks_match(const UBlockSet& blocks, const VaeArchitecture& a) {
  blocks.validate();
  if (blocks.d != a.block_core || blocks.alpha != a.alpha)
    throw ad::ShapeError("block set (D=" + std::to_string(blocks.d) + ", alpha=" + std::to_string(blocks.alpha) +
                         ") does not match the architecture (D=" + std::to_string(a.block_core) +
                         ", alpha=" + std::to_string(a.alpha) + ")");
  if (blocks.blocks.empty()) throw ad::ShapeError("block set is empty");
}

std::vector<BlockCoord> coords_of(const UBlockSet& set) {
  std::vector<BlockCoord> out;
  out.reserve(set.blocks.size());
  for (const auto& b : set.blocks) out.push_back(b.coord);
  return out;
}

}  // namespace

template <typename T>
SparseLatentSet<T> encode(const UBlockSet& blocks, const LogVaeParams<T>& params, std::uint64_t seed) {
  check_blocks_match(blocks, params.architecture());
  const UBlockSet canon = canonical_order(blocks);
  SparseLatentSet<T> out;
  out.n = canon.n;
  out.s = canon.s;
  out.d = canon.d;
  out.alpha = canon.alpha;
  out.coords = coords_of(canon);
  std::tie(out.mu, out.logvar) = encode_tensors(blocks_tensor<T>(canon), out.coords, params);
  out.eps = standard_normal<T>(out.mu.numel(), seed);
  out.sample = ad::reparameterize(out.mu, out.logvar, out.eps);
  return out;
}

template <typename T>
UBlockSet decode(const SparseLatentSet<T>& latents, const LogVaeParams<T>& params, bool use_mean) {
  const auto& a = params.architecture();
  if (latents.d != a.block_core || latents.alpha != a.alpha)
    throw ad::ShapeError("latent set partition does not match the architecture");
  if (!std::is_sorted(latents.coords.begin(), latents.coords.end()))
    throw ad::ShapeError("latent coordinates must be in canonical order");
  const Tensor<T> recon = decode_tensors(use_mean ? latents.mu : latents.sample, latents.coords, params);
  UBlockSet out;
  out.n = latents.n;
  out.s = latents.s;
  out.d = latents.d;
  out.alpha = latents.alpha;
  const std::size_t vol = out.block_volume();
  out.blocks.resize(latents.size());
  for (std::size_t b = 0; b < latents.size(); ++b) {
    out.blocks[b].coord = latents.coords[b];
    out.blocks[b].values.resize(vol);
    for (std::size_t i = 0; i < vol; ++i) out.blocks[b].values[i] = static_cast<float>(recon.values()[b * vol + i]);
  }
  return out;
}

double huber_udf_loss(const UBlockSet& pred, const UBlockSet& target, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("Huber delta must be positive");
  if (pred.blocks.size() != target.blocks.size() || pred.side() != target.side())
    throw BlockError("prediction and target block sets differ in shape");
  std::vector<double> terms;
  terms.reserve(pred.blocks.size() * pred.block_volume());
  for (std::size_t b = 0; b < pred.blocks.size(); ++b) {
    if (pred.blocks[b].coord != target.blocks[b].coord) throw BlockError("prediction and target coordinates differ");
    for (std::size_t i = 0; i < pred.blocks[b].values.size(); ++i) {
      const double e = static_cast<double>(pred.blocks[b].values[i]) - target.blocks[b].values[i];
      const double a = std::abs(e);
      terms.push_back(a <= delta ? 0.5 * e * e : delta * (a - 0.5 * delta));
    }
  }
  if (terms.empty()) throw BlockError("cannot compute a loss over empty block sets");
  return ad::pairwise_sum(std::span<const double>(terms)) / static_cast<double>(terms.size());
}

double kl_loss(std::span<const double> mu, std::span<const double> logvar) {
  if (mu.size() != logvar.size() || mu.empty()) throw std::invalid_argument("kl_loss: shape mismatch");
  std::vector<double> terms(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i)
    terms[i] = -0.5 * (1.0 + logvar[i] - mu[i] * mu[i] - std::exp(logvar[i]));
  return ad::pairwise_sum(std::span<const double>(terms)) / static_cast<double>(terms.size());
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mu, const Tensor<T>& logvar,
                     T lambda, T delta) {
  return ad::add(ad::huber_mean(pred, target, delta), ad::scale(ad::kl_mean(mu, logvar), lambda));
}

template <typename T>
LossTerms VaeObjective<T>::terms() const {
  return {static_cast<double>(total.item()), static_cast<double>(udf.item()), static_cast<double>(kl.item())};
}

template <typename T>
VaeObjective<T> build_objective(const UBlockSet& blocks, const LogVaeParams<T>& params, std::uint64_t noise_seed,
                                T lambda, T delta) {
  check_blocks_match(blocks, params.architecture());
  for (std::size_t i = 1; i < blocks.blocks.size(); ++i)
    if (!(blocks.blocks[i - 1].coord < blocks.blocks[i].coord))
      throw ad::ShapeError("objective needs blocks in canonical order");
  const auto coords = coords_of(blocks);
  const Tensor<T> target = blocks_tensor<T>(blocks);
  VaeObjective<T> o;
  std::tie(o.mu, o.logvar) = encode_tensors(target, coords, params);
  const Tensor<T> z = reparameterize(o.mu, o.logvar, noise_seed);
  o.recon = decode_tensors(z, coords, params);
  o.udf = ad::huber_mean(o.recon, target, delta);
  o.kl = ad::kl_mean(o.mu, o.logvar);
  o.total = ad::add(o.udf, ad::scale(o.kl, lambda));
  return o;
}

#define LOG3D_INSTANTIATE(T)                                                                                    \
  template class LogVaeParams<T>;                                                                               \
  template std::vector<T> standard_normal<T>(std::size_t, std::uint64_t);                                       \
  template Tensor<T> reparameterize<T>(const Tensor<T>&, const Tensor<T>&, std::uint64_t);                      \
  template Tensor<T> blocks_tensor<T>(const UBlockSet&);                                                        \
  template std::pair<Tensor<T>, Tensor<T>> encode_tensors<T>(const Tensor<T>&, const std::vector<BlockCoord>&,  \
                                                             const LogVaeParams<T>&);                           \
  template Tensor<T> decode_tensors<T>(const Tensor<T>&, const std::vector<BlockCoord>&, const LogVaeParams<T>&); \
  template SparseLatentSet<T> encode<T>(const UBlockSet&, const LogVaeParams<T>&, std::uint64_t);               \
  template UBlockSet decode<T>(const SparseLatentSet<T>&, const LogVaeParams<T>&, bool);                        \
  template Tensor<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T, T); \
  template struct VaeObjective<T>;                                                                              \
  template VaeObjective<T> build_objective<T>(const UBlockSet&, const LogVaeParams<T>&, std::uint64_t, T, T);

LOG3D_INSTANTIATE(float)
LOG3D_INSTANTIATE(double)
#undef LOG3D_INSTANTIATE

template LogVaeParams<double> LogVaeParams<float>::cast<double>() const;
template LogVaeParams<float> LogVaeParams<double>::cast<float>() const;
template LogVaeParams<float> LogVaeParams<float>::cast<float>() const;
template LogVaeParams<double> LogVaeParams<double>::cast<double>() const;

}  // namespace log3d
