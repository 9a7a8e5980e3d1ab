// SPDX-License-Identifier: Apache-2.0
#include "log3d/commands.hpp"

#include <cstdio>
#include <map>
#include <ostream>
#include <set>

#include "CLI11.hpp"
#include "log3d/binary_io.hpp"
#include "log3d/checkpoint.hpp"
#include "log3d/marching_cubes.hpp"
#include "log3d/mesh_io.hpp"
#include "log3d/parallel.hpp"
#include "log3d/run_config.hpp"
#include "log3d/ublock.hpp"
#include "log3d/udf_field.hpp"

namespace log3d {

VoxelizeSummary cmd_voxelize(const VoxelizeOptions& opt) {
  if (!valid_resolution(opt.n)) throw UsageError("--n must be a power of two in [16, 2048], got " + std::to_string(opt.n));
  const auto loaded = load_mesh(opt.input);
  const auto normalized = normalize_to_unit_cube(loaded.mesh);
  const auto vol = voxelize_sparse(normalized.mesh, opt.n);
  write_udfv(vol, opt.output);
  const double cells = static_cast<double>(opt.n) * opt.n * opt.n;
  return {vol.size(), static_cast<double>(vol.size()) / cells};
}

std::size_t cmd_partition(const PartitionOptions& opt) {
  if (opt.s == 0) throw UsageError("--s must be positive");
  const auto vol = read_udfv(opt.input);
  if (vol.resolution() % opt.s != 0)
    throw UsageError("--s " + std::to_string(opt.s) + " does not divide N = " + std::to_string(vol.resolution()));
  const auto set = partition(vol, opt.s, opt.alpha);
  write_ublk(set, opt.output);
  return set.blocks.size();
}

std::size_t cmd_reassemble(const ReassembleOptions& opt) {
  const auto set = read_ublk(opt.input);
  const auto vol = band_from_field(reassemble(set));
  write_udfv(vol, opt.output);
  return vol.size();
}

TrainResult cmd_train(const TrainConfig& cfg, std::ostream& progress) {
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return train(cfg, [&](std::uint64_t t, const StepResult& r) {
    if (t % 10 == 0 || t == cfg.steps) {
      char line[160];
      std::snprintf(line, sizeof line, "step %llu  loss %.6g  udf %.6g  kl %.6g\n", static_cast<unsigned long long>(t),
                    r.loss.total, r.loss.udf, r.loss.kl);
      progress << line << std::flush;
    }
  });
}

ReconstructResult cmd_reconstruct(const ReconstructOptions& opt) {
  try {
    opt.config.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto ck = read_checkpoint(opt.model);
  const auto& arch = ck.params.architecture();
  if (opt.config.n / opt.config.s != arch.block_core || opt.config.alpha != arch.alpha)
    throw UsageError("model expects N/s = " + std::to_string(arch.block_core) + " and alpha = " +
                     std::to_string(arch.alpha) + ", flags give N/s = " + std::to_string(opt.config.n / opt.config.s) +
                     " and alpha = " + std::to_string(opt.config.alpha));
  const auto loaded = load_mesh(opt.input);
  auto result = reconstruct(loaded.mesh, ck.params, opt.config);
  save_mesh(result.mesh, opt.output);
  return result;
}

EvalReport cmd_eval(const EvalOptions& opt) {
  if (opt.samples == 0) throw UsageError("--samples must be positive");
  const auto a = load_mesh(opt.input);
  const auto b = load_mesh(opt.reference);
  const auto report = evaluate(a.mesh, b.mesh, opt.samples, opt.seed);
  if (!opt.output.empty()) write_file(opt.output, report.to_json() + "\n");
  return report;
}

namespace {

struct Options {
  int threads = 0;
  std::string config;
  VoxelizeOptions voxelize;
  PartitionOptions partition;
  ReassembleOptions reassemble;
  TrainConfig train;
  std::vector<std::string> corpus;
  std::string checkpoint, log, resume;
  ReconstructOptions reconstruct;
  EvalOptions eval;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--threads", o.threads, "Worker threads (default: all cores)")->check(CLI::PositiveNumber);
  sub->add_option("--config", o.config, "Flat 'key = value' settings file; command-line flags win");
}

void build_app(CLI::App& app, Options& o) {
  app.require_subcommand(1);

  auto* vox = app.add_subcommand("voxelize", "Mesh (OBJ) to sparse UDF band (UDFV)");
  vox->add_option("--input", o.voxelize.input, "Input mesh")->required();
  vox->add_option("--output", o.voxelize.output, "Output UDFV file")->required();
  vox->add_option("--n", o.voxelize.n, "Grid resolution, power of two")->capture_default_str();
  add_common(vox, o);

  auto* part = app.add_subcommand("partition", "UDFV volume to padded blocks (UBLK)");
  part->add_option("--input", o.partition.input, "Input UDFV file")->required();
  part->add_option("--output", o.partition.output, "Output UBLK file")->required();
  part->add_option("--s", o.partition.s, "Blocks per axis")->capture_default_str();
  part->add_option("--alpha", o.partition.alpha, "Padding per side")->capture_default_str();
  add_common(part, o);

  auto* reas = app.add_subcommand("reassemble", "Blocks (UBLK) to UDFV by pad averaging");
  reas->add_option("--input", o.reassemble.input, "Input UBLK file")->required();
  reas->add_option("--output", o.reassemble.output, "Output UDFV file")->required();
  add_common(reas, o);

  auto& t = o.train;
  auto* tr = app.add_subcommand("train", "Train the block VAE on a mesh corpus");
  tr->add_option("--corpus", o.corpus, "Training shapes (OBJ, UDFV or UBLK)")->required()->delimiter(',');
  tr->add_option("--checkpoint", o.checkpoint, "Checkpoint output path")->required();
  tr->add_option("--steps", t.steps, "Optimizer steps")->required();
  tr->add_option("--log", o.log, "Loss CSV path");
  tr->add_option("--resume", o.resume, "Checkpoint with optimizer state to continue from");
  tr->add_option("--checkpoint-every", t.checkpoint_every, "Save every K steps (0: only at the end)")
      ->capture_default_str();
  tr->add_option("--lr", t.adam.lr, "Learning rate")->capture_default_str();
  tr->add_option("--beta1", t.adam.beta1, "AdamW beta1")->capture_default_str();
  tr->add_option("--beta2", t.adam.beta2, "AdamW beta2")->capture_default_str();
  tr->add_option("--weight-decay", t.adam.weight_decay, "AdamW weight decay")->capture_default_str();
  tr->add_option("--eps", t.adam.eps, "AdamW epsilon")->capture_default_str();
  tr->add_option("--lambda", t.lambda, "KL weight")->capture_default_str();
  tr->add_option("--delta", t.delta, "Huber threshold")->capture_default_str();
  tr->add_option("--clip-norm", t.clip_norm, "Global gradient norm limit (0 disables)")->capture_default_str();
  tr->add_option("--n", t.n, "Grid resolution")->capture_default_str();
  tr->add_option("--s", t.s, "Blocks per axis")->capture_default_str();
  tr->add_option("--alpha", t.alpha, "Padding per side")->capture_default_str();
  tr->add_option("--seed", t.seed, "Initialization and noise seed")->capture_default_str();
  add_common(tr, o);

  auto& r = o.reconstruct;
  auto* rec = app.add_subcommand("reconstruct", "Encode, decode and mesh a shape with a trained model");
  rec->add_option("--input", r.input, "Input mesh")->required();
  rec->add_option("--model", r.model, "Checkpoint")->required();
  rec->add_option("--output", r.output, "Output mesh (OBJ)")->required();
  rec->add_option("--n", r.config.n, "Grid resolution")->capture_default_str();
  rec->add_option("--s", r.config.s, "Blocks per axis")->capture_default_str();
  rec->add_option("--alpha", r.config.alpha, "Padding per side")->capture_default_str();
  rec->add_option("--theta", r.config.theta, "Iso value in unit-cube distance (default 1/N)");
  rec->add_option("--seed", r.config.seed, "Latent noise seed")->capture_default_str();
  rec->add_flag("--deterministic", r.config.deterministic, "Decode the posterior mean");
  add_common(rec, o);

  auto* ev = app.add_subcommand("eval", "Chamfer distance and F-scores between two meshes");
  ev->add_option("--input", o.eval.input, "Reconstructed mesh")->required();
  ev->add_option("--reference", o.eval.reference, "Reference mesh")->required();
  ev->add_option("--output", o.eval.output, "JSON report path");
  ev->add_option("--samples", o.eval.samples, "Surface samples per mesh")->capture_default_str();
  ev->add_option("--seed", o.eval.seed, "Sampling seed")->capture_default_str();
  add_common(ev, o);
}

std::string option_key(const CLI::Option* opt) {
  std::string name = opt->get_name(false, true);
  if (name.rfind("--", 0) == 0) name = name.substr(2);
  return canonical_key(name);
}

// Prepends settings from --config for every option the command line leaves unset.
std::vector<std::string> merge_config(const std::vector<std::string>& args) {
  if (args.size() < 2) return args;
  std::string path;
  std::set<std::string> given;
  for (std::size_t i = 2; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0) continue;
    const auto eq = a.find('=');
    const std::string key = canonical_key(a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2));
    given.insert(key);
    if (key == "config") {
      if (eq != std::string::npos) path = a.substr(eq + 1);
      else if (i + 1 < args.size()) path = args[i + 1];
    }
  }
  if (path.empty()) return args;

  CLI::App probe;
  Options scratch;
  build_app(probe, scratch);
  std::set<std::string> known;
  std::map<std::string, const CLI::Option*> here;
  for (const auto* sub : probe.get_subcommands({}))
    for (const auto* opt : sub->get_options()) {
      if (opt->get_name() == "--help") continue;
      known.insert(option_key(opt));
      if (sub->get_name() == args[1]) here[option_key(opt)] = opt;
    }
  known.erase("config");
  const RunConfig cfg = RunConfig::load(path, known);

  std::vector<std::string> out(args.begin(), args.begin() + 2);
  for (const auto& [key, value] : cfg.entries()) {
    auto it = here.find(key);
    if (it == here.end() || given.count(key)) continue;
    const std::string flag = "--" + it->second->get_name(false, true).substr(2);
    if (it->second->get_expected_min() == 0) {
      out.push_back(flag + "=" + value);
    } else {
      out.push_back(flag);
      out.push_back(value);
    }
  }
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Sparse-voxel UDF geometry codec"};
  app.name(args.empty() ? "log3d" : std::filesystem::path(args[0]).filename().string());
  Options o;
  build_app(app, o);
  try {
    args = merge_config(args);
    std::vector<const char*> cargs;
    for (const auto& a : args) cargs.push_back(a.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  set_thread_count(o.threads);
  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "voxelize") {
      const auto s = cmd_voxelize(o.voxelize);
      char line[128];
      std::snprintf(line, sizeof line, "band voxels: %zu\noccupancy: %.9g\n", s.band_voxels, s.occupancy);
      out << line;
    } else if (cmd == "partition") {
      out << "active blocks: " << cmd_partition(o.partition) << "\n";
    } else if (cmd == "reassemble") {
      out << "band voxels: " << cmd_reassemble(o.reassemble) << "\n";
    } else if (cmd == "train") {
      o.train.corpus.assign(o.corpus.begin(), o.corpus.end());
      o.train.checkpoint_path = o.checkpoint;
      o.train.log_path = o.log;
      o.train.resume_path = o.resume;
      o.train.arch.block_core = o.train.s == 0 ? 0 : o.train.n / o.train.s;
      o.train.arch.alpha = o.train.alpha;
      if (o.train.s == 0 || o.train.n % o.train.s != 0) throw UsageError("--s must divide --n");
      const auto result = cmd_train(o.train, out);
      out << "trained " << result.history.size() << " steps, checkpoint " << o.checkpoint << "\n";
    } else if (cmd == "reconstruct") {
      const auto r = cmd_reconstruct(o.reconstruct);
      out << "blocks: " << r.blocks << "\nvertices: " << r.mesh.vertices.size()
          << "\ntriangles: " << r.mesh.triangles.size() << "\n";
      if (r.empty()) out << "no surface crossing found; wrote an empty mesh\n";
    } else if (cmd == "eval") {
      out << cmd_eval(o.eval).to_json() << "\n";
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitPipeline;
  }
  return kExitOk;
}

}  // namespace log3d
