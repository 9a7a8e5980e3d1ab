// SPDX-License-Identifier: Apache-2.0
#include "log3d/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "log3d/binary_io.hpp"
#include "log3d/mesh_io.hpp"
#include "log3d/udf_field.hpp"

namespace log3d {

template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t step,
                  const AdamWHyper& h, T grad_scale) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
    throw std::invalid_argument("adamw_update: buffer sizes differ");
  if (step == 0) throw std::invalid_argument("adamw_update: step counts from 1");
  const T lr = static_cast<T>(h.lr), b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T decay = T(1) - lr * static_cast<T>(h.weight_decay);
  const T c1 = static_cast<T>(1.0 - std::pow(h.beta1, static_cast<double>(step)));
  const T c2 = static_cast<T>(1.0 - std::pow(h.beta2, static_cast<double>(step)));
  const T eps = static_cast<T>(h.eps);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i] * grad_scale;
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    const T mhat = m[i] / c1;
    const T vhat = v[i] / c2;
    param[i] = param[i] * decay - lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template void adamw_update<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                                  std::uint64_t, const AdamWHyper&, float);
template void adamw_update<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                                   std::uint64_t, const AdamWHyper&, double);

void TrainConfig::validate() const {
  if (!(adam.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  if (adam.weight_decay < 0.0 || !(adam.eps > 0.0)) throw std::invalid_argument("invalid weight decay or epsilon");
  if (lambda < 0.0) throw std::invalid_argument("KL weight must be non-negative");
  if (!(delta > 0.0)) throw std::invalid_argument("Huber delta must be positive");
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (!valid_resolution(n)) throw std::invalid_argument("N must be a power of two in [16, 2048]");
  if (s == 0 || n % s != 0) throw std::invalid_argument("s must divide N");
  if (n / s != arch.block_core || alpha != arch.alpha)
    throw std::invalid_argument("N/s and alpha must match the architecture (D=" + std::to_string(arch.block_core) +
                                ", alpha=" + std::to_string(arch.alpha) + ")");
  if (corpus.empty()) throw std::invalid_argument("training corpus is empty");
  arch.validate();
}

std::uint64_t step_noise_seed(std::uint64_t seed, std::uint64_t step) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(seed) ^ step);
}

UBlockSet load_training_shape(const std::filesystem::path& path, const TrainConfig& cfg) {
  const std::string ext = path.extension().string();
  UBlockSet set;
  if (ext == ".ublk") {
    set = read_ublk(path);
  } else if (ext == ".udfv") {
    set = partition(read_udfv(path), cfg.s, cfg.alpha);
  } else {
    const auto loaded = load_mesh(path);
    const auto normalized = normalize_to_unit_cube(loaded.mesh);
    set = partition(voxelize_sparse(normalized.mesh, cfg.n), cfg.s, cfg.alpha);
  }
  if (set.d != cfg.arch.block_core || set.alpha != cfg.arch.alpha)
    throw BlockError(path.string() + ": partition does not match the architecture");
  if (set.blocks.empty()) throw BlockError(path.string() + ": no active blocks");
  return canonical_order(set);
}

namespace {

template <typename T>
bool all_finite(std::span<const T> v) {
  for (T x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

[[noreturn]] void report_non_finite(const ad::Tensor<float>& root, const LogVaeParams<float>& params,
                                    std::uint64_t step) {
  std::unordered_map<const ad::Node<float>*, std::string> names;
  for (const auto& [name, t] : params.tensors()) names[t.node().get()] = name;
  const auto tape = ad::Tape<float>::record(root);
  const auto& nodes = tape.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto* node = nodes[i];
    if (all_finite<float>(node->value)) continue;
    auto it = names.find(node);
    const std::string what = it != names.end() ? "parameter '" + it->second + "'"
                                               : std::string(node->op) + " output " + ad::to_string(node->shape) +
                                                     " (graph node " + std::to_string(i) + ")";
    throw TrainingError("non-finite loss at step " + std::to_string(step) + ": first non-finite tensor is " + what);
  }
  throw TrainingError("non-finite loss at step " + std::to_string(step));
}

}  // namespace

StepResult train_step(LogVaeParams<float>& params, const UBlockSet& blocks, AdamState& opt, const TrainConfig& cfg,
                      std::uint64_t noise_seed) {
  auto& tensors = params.tensors();
  if (opt.m.size() != tensors.size() || opt.v.size() != tensors.size())
    throw std::invalid_argument("optimizer state does not match the parameters");
  const std::uint64_t step = opt.step + 1;

  params.zero_grad();
  const auto obj = build_objective<float>(blocks, params, noise_seed, static_cast<float>(cfg.lambda),
                                          static_cast<float>(cfg.delta));
  StepResult result;
  result.loss = obj.terms();
  if (!std::isfinite(result.loss.total)) report_non_finite(obj.total, params, step);
  ad::backward(obj.total);

  std::vector<double> sq(tensors.size(), 0.0);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& t = tensors[i].second;
    if (!t.has_grad()) t.mutable_grad();
    const auto g = t.grad();
    if (!all_finite(g))
      throw TrainingError("non-finite gradient at step " + std::to_string(step) + " in parameter '" +
                          tensors[i].first + "'");
    for (float x : g) sq[i] += static_cast<double>(x) * x;
  }
  double total_sq = 0.0;
  for (double x : sq) total_sq += x;
  result.grad_norm = std::sqrt(total_sq);
  float scale = 1.0f;
  if (cfg.clip_norm > 0.0 && result.grad_norm > cfg.clip_norm)
    scale = static_cast<float>(cfg.clip_norm / result.grad_norm);

  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& t = tensors[i].second;
    adamw_update<float>(t.mutable_values(), t.grad(), opt.m[i], opt.v[i], step, cfg.adam, scale);
  }
  opt.step = step;
  return result;
}

TrainResult train(const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  std::vector<UBlockSet> corpus;
  corpus.reserve(cfg.corpus.size());
  for (const auto& path : cfg.corpus) corpus.push_back(load_training_shape(path, cfg));

  TrainResult out;
  bool resumed = false;
  if (!cfg.resume_path.empty()) {
    auto ck = read_checkpoint(cfg.resume_path, &cfg.arch);
    if (!ck.optimizer) throw IoError(cfg.resume_path.string() + ": checkpoint has no optimizer state to resume from");
    out.params = std::move(ck.params);
    out.optimizer = std::move(*ck.optimizer);
    resumed = true;
  } else {
    out.params = LogVaeParams<float>::initialize(cfg.arch, cfg.seed);
    out.optimizer = AdamState::zeros_like(out.params);
  }

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    const bool append = resumed && std::filesystem::exists(cfg.log_path);
    log.open(cfg.log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open loss log " + cfg.log_path.string());
    if (!append) log << "step,loss_total,loss_udf,loss_kl\n";
  }
  auto save = [&] {
    if (!cfg.checkpoint_path.empty()) write_checkpoint(cfg.checkpoint_path, out.params, &out.optimizer);
  };

  while (out.optimizer.step < cfg.steps) {
    const std::uint64_t t = out.optimizer.step + 1;
    const auto& blocks = corpus[(t - 1) % corpus.size()];
    const StepResult r = train_step(out.params, blocks, out.optimizer, cfg, step_noise_seed(cfg.seed, t));
    out.history.push_back(r.loss);
    if (log) {
      char row[128];
      std::snprintf(row, sizeof row, "%llu,%.9g,%.9g,%.9g\n", static_cast<unsigned long long>(t), r.loss.total,
                    r.loss.udf, r.loss.kl);
      log << row << std::flush;
    }
    if (on_step) on_step(t, r);
    if (cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0 && t < cfg.steps) save();
  }
  save();
  return out;
}

}  // namespace log3d
