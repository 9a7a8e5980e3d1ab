// SPDX-License-Identifier: Apache-2.0
#include "log3d/checkpoint.hpp"

#include "log3d/binary_io.hpp"

namespace log3d {

namespace {
constexpr std::uint32_t kVersion = 1;
}

AdamState AdamState::zeros_like(const LogVaeParams<float>& params) {
  AdamState s;
  for (const auto& [name, t] : params.tensors()) {
    s.m.emplace_back(t.numel(), 0.0f);
    s.v.emplace_back(t.numel(), 0.0f);
  }
  return s;
}

std::string encode_checkpoint(const LogVaeParams<float>& params, const AdamState* optimizer) {
  BinaryWriter w;
  w.magic("LOGV");
  w.u32(kVersion);
  const std::string arch = params.architecture().to_json();
  w.u32(static_cast<std::uint32_t>(arch.size()));
  w.bytes(arch);
  w.u32(static_cast<std::uint32_t>(params.tensors().size()));
  for (const auto& [name, t] : params.tensors()) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (float x : t.values()) w.f32(x);
  }
  if (optimizer) {
    const auto& ts = params.tensors();
    if (optimizer->m.size() != ts.size() || optimizer->v.size() != ts.size())
      throw IoError("optimizer state does not match the parameter list");
    w.magic("OPTS");
    w.u64(optimizer->step);
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (optimizer->m[i].size() != ts[i].second.numel() || optimizer->v[i].size() != ts[i].second.numel())
        throw IoError("optimizer moments for '" + ts[i].first + "' have the wrong size");
      for (float x : optimizer->m[i]) w.f32(x);
      for (float x : optimizer->v[i]) w.f32(x);
    }
  }
  return w.buffer();
}

void write_checkpoint(const std::filesystem::path& path, const LogVaeParams<float>& params,
                      const AdamState* optimizer) {
  write_file(path, encode_checkpoint(params, optimizer));
}

Checkpoint decode_checkpoint(std::string data, const VaeArchitecture* expected) {
  BinaryReader r(std::move(data));
  r.expect_magic("LOGV");
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  VaeArchitecture arch;
  try {
    arch = VaeArchitecture::from_json(r.bytes(r.u32()));
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError(std::string("bad architecture table: ") + e.what());
  }
  if (expected && !(*expected == arch))
    throw IoError("checkpoint architecture " + arch.to_json() + " does not match the configured " +
                  expected->to_json());

  Checkpoint ck;
  ck.params = LogVaeParams<float>::zeros(arch);
  auto& tensors = ck.params.tensors();
  const std::uint32_t count = r.u32();
  if (count != tensors.size())
    throw IoError("checkpoint holds " + std::to_string(count) + " tensors, architecture needs " +
                  std::to_string(tensors.size()));
  for (auto& [name, t] : tensors) {
    const std::string stored = r.bytes(r.u32());
    if (stored != name) throw IoError("expected tensor '" + name + "', found '" + stored + "'");
    const std::uint32_t rank = r.u32();
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (shape != t.shape())
      throw IoError("tensor '" + name + "' has shape " + ad::to_string(shape) + ", expected " +
                    ad::to_string(t.shape()));
    for (auto& x : t.mutable_values()) x = r.f32();
  }
  if (!r.at_end()) {
    r.expect_magic("OPTS");
    AdamState opt;
    opt.step = r.u64();
    for (const auto& [name, t] : tensors) {
      std::vector<float> m(t.numel()), v(t.numel());
      for (auto& x : m) x = r.f32();
      for (auto& x : v) x = r.f32();
      opt.m.push_back(std::move(m));
      opt.v.push_back(std::move(v));
    }
    ck.optimizer = std::move(opt);
  }
  if (!r.at_end()) throw IoError("trailing bytes after checkpoint");
  return ck;
}

Checkpoint read_checkpoint(const std::filesystem::path& path, const VaeArchitecture* expected) {
  return decode_checkpoint(read_file(path), expected);
}

}  // namespace log3d
