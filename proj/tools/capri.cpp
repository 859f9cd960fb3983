// Command-line front end: fits quadric CSG assemblies to voxel grids or
// oriented point clouds, exports the mesh / CSG tree / checkpoint with a run
// manifest, evaluates reconstructions against ground truth, and re-derives
// trees from checkpoints.
//
// Exit codes: 0 success, 1 unexpected failure, 2 bad flags, 3 input format
// error, 4 divergence or empty reconstruction.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "capri/checkpoint.hpp"
#include "capri/common.hpp"
#include "capri/engine.hpp"
#include "capri/extraction.hpp"
#include "capri/marching_cubes.hpp"
#include "capri/mesh.hpp"
#include "capri/metrics.hpp"
#include "capri/model.hpp"
#include "capri/rng.hpp"
#include "capri/sampling.hpp"

namespace fs = std::filesystem;
using capri::FitError;
using capri::Index;
using capri::InputError;
using capri::Mat;
using capri::Rng;
namespace checkpoint = capri::checkpoint;
namespace engine = capri::engine;
namespace extraction = capri::extraction;
namespace mc = capri::mc;
namespace mesh = capri::mesh;
namespace metrics = capri::metrics;
namespace model = capri::model;
namespace sampling = capri::sampling;

namespace {

constexpr int kExitBadFlags = 2;
constexpr int kExitBadInput = 3;
constexpr int kExitDiverged = 4;

constexpr const char* kMeshFile = "mesh.obj";
constexpr const char* kTreeFile = "tree.json";
constexpr const char* kCheckpointFile = "checkpoint.capc";
constexpr const char* kManifestFile = "manifest.json";

void diag(const std::string& message) {
  std::cerr << "capri: " << message << "\n";
}

// FNV-1a over the raw input bytes; recorded in the manifest so a run can be
// matched to the exact file it consumed.
std::uint64_t fnv1a64(const fs::path& path, std::uint64_t& byte_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open input file: " + path.string());
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  byte_count = 0;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf), in.gcount() > 0) {
    const auto got = static_cast<std::size_t>(in.gcount());
    for (std::size_t i = 0; i < got; ++i) {
      hash ^= static_cast<unsigned char>(buf[i]);
      hash *= 0x100000001b3ULL;
    }
    byte_count += got;
  }
  return hash;
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

// All output files are written to a sibling temp path first and renamed into
// place, so a crash never leaves a truncated artifact under the final name.
fs::path temp_name(const fs::path& final_path) {
  fs::path t = final_path;
  t += ".tmp";
  return t;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = temp_name(path);
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InputError("cannot open " + tmp.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw InputError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// "key = value" per line, '#' starts a comment. Keys are the long option
// names of the subcommand being run, without the leading dashes.
std::vector<std::pair<std::string, std::string>> read_config_pairs(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file: " + path);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InputError("config parse error at line " +
                       std::to_string(line_no) + " of " + path +
                       ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') &&
        value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    if (key.empty()) {
      throw InputError("config parse error at line " +
                       std::to_string(line_no) + " of " + path +
                       ": empty key");
    }
    pairs.emplace_back(key, value);
  }
  return pairs;
}

// Expands `--config FILE` into explicit `--key=value` tokens inserted right
// after the subcommand name. Options also given on the command line are left
// alone, so explicit flags always win over config-file entries.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  if (args.empty() || args[0].empty() || args[0][0] == '-') return args;

  std::string config_path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    }
  }
  if (config_path.empty()) return args;

  const auto user_has = [&args](const std::string& key) {
    const std::string flag = "--" + key;
    for (std::size_t i = 1; i < args.size(); ++i) {
      if (args[i] == flag || args[i].rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };

  std::vector<std::string> out;
  out.push_back(args[0]);
  for (const auto& [key, value] : read_config_pairs(config_path)) {
    if (!user_has(key)) out.push_back("--" + key + "=" + value);
  }
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

// Seed-derived random streams. Query sampling and pruning-validation points
// draw from disjoint forks of the root stream, and the fit itself reseeds
// from the raw seed, so every consumer is reproducible in isolation.
Rng query_rng(std::uint64_t seed) {
  Rng root(seed);
  return root.fork(0);
}

Rng pruning_rng(std::uint64_t seed) {
  Rng root(seed);
  (void)root.fork(0);  // stream 0 belongs to query sampling
  return root.fork(1);
}

// ---------------------------------------------------------------- reconstruct

struct ReconstructOptions {
  std::vector<std::string> inputs;
  std::string input_type;  // "voxel" | "pointcloud"
  std::string out_dir;
  std::string precision = "f64";
  model::FitConfig config;
  Index voxel_queries = sampling::kDefaultVoxelQueryCount;
  int offsets_per_point = sampling::kDefaultOffsetsPerPoint;
  double offset_sigma = sampling::kDefaultOffsetSigma;
  Index mesh_resolution = mc::kDefaultResolution;
  double mesh_iso = mc::kDefaultIsoValue;
  int jobs = 1;
};

nlohmann::ordered_json config_json(const ReconstructOptions& o) {
  const model::FitConfig& c = o.config;
  nlohmann::ordered_json j;
  j["primitives"] = c.primitive_count;
  j["convexes"] = c.convex_count;
  j["latent_size"] = c.latent_size;
  j["hidden_size"] = c.hidden_size;
  j["iterations"] = c.iterations_per_stage;
  j["batch_size"] = c.minibatch_size;
  j["learning_rate"] = c.learning_rate;
  j["quantize_eta"] = c.quantize_eta;
  j["inside_weight"] = c.inside_weight;
  j["outside_weight"] = c.outside_weight;
  j["difference_margin"] = c.difference_margin;
  j["gradient_clip"] = c.gradient_clip;
  j["precision"] = o.precision;
  j["straight_through"] = c.straight_through;
  if (o.input_type == "voxel") {
    j["voxel_queries"] = o.voxel_queries;
  } else {
    j["offsets_per_point"] = o.offsets_per_point;
    j["offset_sigma"] = o.offset_sigma;
  }
  j["mesh_resolution"] = o.mesh_resolution;
  j["mesh_iso"] = o.mesh_iso;
  return j;
}

// Fits one input and writes mesh.obj, tree.json, checkpoint.capc, and
// manifest.json into `out_dir`. Returns a process exit code.
int reconstruct_one(const ReconstructOptions& o, const std::string& input,
                    const fs::path& out_dir) {
  const model::FitConfig& cfg = o.config;

  std::uint64_t input_bytes = 0;
  std::uint64_t input_hash = 0;
  sampling::QuerySet queries;
  try {
    input_hash = fnv1a64(input, input_bytes);
    Rng rng = query_rng(cfg.seed);
    if (o.input_type == "voxel") {
      const auto grid = sampling::load_voxel_grid(input);
      queries = sampling::sample_voxel_queries(grid, o.voxel_queries, rng);
    } else {
      const auto cloud = sampling::load_point_cloud(input);
      queries = sampling::sample_pointcloud_queries(
          cloud, rng, o.offsets_per_point, o.offset_sigma);
    }
  } catch (const InputError& e) {
    diag(std::string(e.what()));
    return kExitBadInput;
  }

  std::vector<double> stage_seconds;
  auto t_prev = std::chrono::steady_clock::now();
  engine::FitOutcome outcome;
  try {
    outcome = engine::reconstruct(queries, cfg, [&](int stage) {
      const auto t_now = std::chrono::steady_clock::now();
      const double secs =
          std::chrono::duration<double>(t_now - t_prev).count();
      stage_seconds.push_back(secs);
      t_prev = t_now;
      std::cerr << input << ": stage " << stage << " finished in " << secs
                << " s\n";
    });
  } catch (const FitError& e) {
    diag(std::string(e.what()));
    return kExitDiverged;
  } catch (const InputError& e) {
    // e.g. a degenerate query set whose labels are all equal
    diag(std::string(e.what()));
    return kExitBadInput;
  }

  const Mat validation =
      [&] {
        Rng rng = pruning_rng(cfg.seed);
        return extraction::pruning_points(queries.points, rng);
      }();
  const model::FittedModel pruned =
      extraction::prune_primitives(outcome.fitted, validation);
  const extraction::CSGTree tree = extraction::extract_csg_tree(pruned);

  mesh::TriangleMesh surface;
  try {
    surface = mc::extract_mesh(pruned, o.mesh_resolution, o.mesh_iso);
  } catch (const InputError& e) {
    diag(input + ": " + e.what());
    return kExitDiverged;
  }

  fs::create_directories(out_dir);
  extraction::export_tree(tree, temp_name(out_dir / kTreeFile).string());
  fs::rename(temp_name(out_dir / kTreeFile), out_dir / kTreeFile);
  mesh::save_obj(surface, temp_name(out_dir / kMeshFile).string());
  fs::rename(temp_name(out_dir / kMeshFile), out_dir / kMeshFile);
  checkpoint::save_checkpoint({cfg, outcome.state, queries},
                              temp_name(out_dir / kCheckpointFile));
  fs::rename(temp_name(out_dir / kCheckpointFile),
             out_dir / kCheckpointFile);

  nlohmann::ordered_json manifest;
  manifest["format"] = "capri-manifest-v1";
  manifest["command"] = "reconstruct";
  manifest["seed"] = cfg.seed;
  manifest["rng"] = Rng::kAlgorithm;
  manifest["input"]["path"] = input;
  manifest["input"]["type"] = o.input_type;
  manifest["input"]["bytes"] = input_bytes;
  manifest["input"]["fnv1a64"] = hex64(input_hash);
  manifest["config"] = config_json(o);
  manifest["queries"] = queries.points.rows();
  manifest["stages"] = nlohmann::ordered_json::array();
  for (int s = 0; s < 3; ++s) {
    const model::LossRecord* last = nullptr;
    for (const auto& r : outcome.state.trace) {
      if (r.stage == s) last = &r;
    }
    nlohmann::ordered_json stage;
    stage["stage"] = s;
    stage["iterations"] = cfg.iterations_per_stage;
    stage["seconds"] = stage_seconds[static_cast<std::size_t>(s)];
    if (last != nullptr) {
      stage["final_loss"] = last->total;
      stage["final_reconstruction_loss"] = last->reconstruction;
    }
    manifest["stages"].push_back(stage);
  }
  manifest["outputs"]["mesh"] = kMeshFile;
  manifest["outputs"]["tree"] = kTreeFile;
  manifest["outputs"]["checkpoint"] = kCheckpointFile;
  manifest["result"]["primitives"] =
      static_cast<std::uint64_t>(tree.primitive_ids.size());
  manifest["result"]["left_convexes"] =
      static_cast<std::uint64_t>(tree.left_convexes.size());
  manifest["result"]["right_convexes"] =
      static_cast<std::uint64_t>(tree.right_convexes.size());
  manifest["result"]["mesh_vertices"] = surface.vertices.rows();
  manifest["result"]["mesh_triangles"] =
      static_cast<std::uint64_t>(surface.triangles.size());
  write_text_atomic(out_dir / kManifestFile, manifest.dump(2) + "\n");

  std::cout << input << " -> " << out_dir.string() << ": primitives="
            << tree.primitive_ids.size() << " convexes="
            << tree.left_convexes.size() + tree.right_convexes.size()
            << " triangles=" << surface.triangles.size() << std::endl;
  return 0;
}

// One output directory per input: the --out-dir itself for a single input,
// or per-stem subdirectories when several shapes are fit in one invocation.
std::vector<fs::path> output_dirs(const ReconstructOptions& o) {
  std::vector<fs::path> dirs;
  if (o.inputs.size() == 1) {
    dirs.emplace_back(o.out_dir);
    return dirs;
  }
  std::set<std::string> used;
  for (const auto& input : o.inputs) {
    std::string stem = fs::path(input).stem().string();
    if (stem.empty()) stem = "shape";
    std::string name = stem;
    for (int k = 2; used.count(name) != 0; ++k) {
      name = stem + "_" + std::to_string(k);
    }
    used.insert(name);
    dirs.emplace_back(fs::path(o.out_dir) / name);
  }
  return dirs;
}

int cmd_reconstruct(ReconstructOptions& o) {
  o.config.precision = o.precision == "f32" ? model::Precision::kFloat32
                                            : model::Precision::kFloat64;
  try {
    o.config.validate();
    if (o.voxel_queries < 1) {
      throw InputError("--voxel-queries must be positive");
    }
    if (o.offsets_per_point < 1) {
      throw InputError("--offsets-per-point must be positive");
    }
    if (!(o.offset_sigma > 0.0)) {
      throw InputError("--offset-sigma must be positive");
    }
    if (o.mesh_resolution < 8) {
      throw InputError("--mesh-resolution must be at least 8");
    }
  } catch (const InputError& e) {
    diag(std::string(e.what()));
    return kExitBadFlags;
  }

  const std::vector<fs::path> dirs = output_dirs(o);
  if (o.jobs <= 1 || o.inputs.size() < 2) {
    int worst = 0;
    for (std::size_t i = 0; i < o.inputs.size(); ++i) {
      worst = std::max(worst, reconstruct_one(o, o.inputs[i], dirs[i]));
    }
    return worst;
  }

  // Isolated workers: each input is fit in its own forked process, at most
  // --jobs of them at a time.
  std::size_t next = 0;
  int running = 0;
  int worst = 0;
  while (next < o.inputs.size() || running > 0) {
    while (running < o.jobs && next < o.inputs.size()) {
      const pid_t pid = fork();
      if (pid < 0) {
        diag("fork failed: " + std::string(std::strerror(errno)));
        worst = std::max(worst, 1);
        next = o.inputs.size();  // stop launching; drain what is running
        break;
      }
      if (pid == 0) {
        int rc = 1;
        try {
          rc = reconstruct_one(o, o.inputs[next], dirs[next]);
        } catch (const std::exception& e) {
          diag(std::string(e.what()));
        }
        std::cout.flush();
        _exit(rc);
      }
      ++running;
      ++next;
    }
    if (running > 0) {
      int status = 0;
      if (wait(&status) > 0) {
        --running;
        const int rc = WIFEXITED(status) ? WEXITSTATUS(status) : 1;
        worst = std::max(worst, rc);
      }
    }
  }
  return worst;
}

// ------------------------------------------------------------------ evaluate

struct EvaluateOptions {
  std::string recon;
  std::string gt;
  std::string tree;
  Index samples = metrics::kDefaultSurfaceSamples;
  std::uint64_t seed = 0;
};

bool has_obj_extension(const std::string& path) {
  std::string ext = fs::path(path).extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(c));
  return ext == ".obj";
}

int cmd_evaluate(const EvaluateOptions& o) {
  if (o.samples < 1) {
    diag("--samples must be positive");
    return kExitBadFlags;
  }

  metrics::SurfaceSampleSet recon, truth;
  Index tree_primitives = 0;
  Index tree_convexes = 0;
  try {
    const mesh::TriangleMesh rm = mesh::load_obj(o.recon);
    Rng rng(o.seed);
    recon = metrics::sample_surface(rm, rng, o.samples);

    if (has_obj_extension(o.gt)) {
      const mesh::TriangleMesh gm = mesh::load_obj(o.gt);
      // fresh stream with the same seed: identical meshes then yield
      // identical sample sets, making self-comparison exact
      Rng gt_rng(o.seed);
      truth = metrics::sample_surface(gm, gt_rng, o.samples);
    } else {
      const auto cloud = sampling::load_point_cloud(o.gt);
      truth.points = cloud.points;
      truth.normals = cloud.normals;
    }

    if (!o.tree.empty()) {
      const extraction::CSGTree tree = extraction::load_tree(o.tree);
      tree_primitives = static_cast<Index>(tree.primitive_ids.size());
      tree_convexes = static_cast<Index>(tree.left_convexes.size() +
                                         tree.right_convexes.size());
    }
  } catch (const InputError& e) {
    diag(std::string(e.what()));
    return kExitBadInput;
  }

  const double cd = metrics::chamfer_distance(recon, truth);
  const double nc = metrics::normal_consistency(recon, truth);
  const double ecd = metrics::edge_chamfer_distance(recon, truth);
  std::cout << "cd=" << cd << " nc=" << nc << " ecd=" << ecd << " p="
            << tree_primitives << " c=" << tree_convexes << "\n";
  return 0;
}

// --------------------------------------------------------------- export-tree

struct ExportTreeOptions {
  std::string checkpoint;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int cmd_export_tree(const ExportTreeOptions& o) {
  checkpoint::Checkpoint ck;
  try {
    ck = checkpoint::load_checkpoint(o.checkpoint);
  } catch (const InputError& e) {
    diag(std::string(e.what()));
    return kExitBadInput;
  }

  const std::uint64_t seed = o.seed_given ? o.seed : ck.config.seed;
  const model::FittedModel fitted = model::finalize(ck.state, ck.config);
  Rng rng = pruning_rng(seed);
  const Mat validation = extraction::pruning_points(ck.queries.points, rng);
  const model::FittedModel pruned =
      extraction::prune_primitives(fitted, validation);
  const extraction::CSGTree tree = extraction::extract_csg_tree(pruned);

  const fs::path out = o.out.empty()
                           ? fs::path(o.checkpoint).parent_path() / kTreeFile
                           : fs::path(o.out);
  extraction::export_tree(tree, temp_name(out).string());
  fs::rename(temp_name(out), out);
  std::cout << out.string() << ": primitives=" << tree.primitive_ids.size()
            << " convexes="
            << tree.left_convexes.size() + tree.right_convexes.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Inverse-CSG shape reconstruction: fit a quadric-primitive assembly "
      "to a voxel grid or oriented point cloud, then export and evaluate "
      "the result"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  ReconstructOptions ro;
  auto* rec = app.add_subcommand(
      "reconstruct",
      "Fit a shape and write mesh.obj, tree.json, checkpoint.capc, "
      "manifest.json");
  rec->add_option("--input", ro.inputs,
                  "Input shape file; repeat to fit several shapes")
      ->required();
  rec->add_option("--input-type", ro.input_type,
                  "Input kind: voxel (binary .capv grid) or pointcloud "
                  "(text, x y z nx ny nz per line)")
      ->required()
      ->check(CLI::IsMember({"voxel", "pointcloud"}));
  rec->add_option("--out-dir", ro.out_dir,
                  "Output directory (per-input subdirectories when several "
                  "inputs are given)")
      ->required();
  rec->add_option("--seed", ro.config.seed,
                  "Seed for every random choice in the run");
  rec->add_option("--primitives", ro.config.primitive_count,
                  "Number of quadric primitives");
  rec->add_option("--convexes", ro.config.convex_count,
                  "Number of convexes (split evenly left|right)");
  rec->add_option("--latent-size", ro.config.latent_size,
                  "Latent code width");
  rec->add_option("--hidden-size", ro.config.hidden_size,
                  "Decoder hidden width");
  rec->add_option("--iterations", ro.config.iterations_per_stage,
                  "Optimizer iterations per stage");
  rec->add_option("--batch-size", ro.config.minibatch_size,
                  "Query minibatch size");
  rec->add_option("--learning-rate", ro.config.learning_rate,
                  "Adam learning rate");
  rec->add_option("--quantize-eta", ro.config.quantize_eta,
                  "Selection binarization threshold");
  rec->add_option("--inside-weight", ro.config.inside_weight,
                  "Late-stage loss weight on inside queries");
  rec->add_option("--outside-weight", ro.config.outside_weight,
                  "Late-stage loss weight on outside queries");
  rec->add_option("--difference-margin", ro.config.difference_margin,
                  "Hard-difference carve margin");
  rec->add_option("--gradient-clip", ro.config.gradient_clip,
                  "Gradient-norm clip");
  rec->add_option("--precision", ro.precision, "Forward-pass precision")
      ->check(CLI::IsMember({"f64", "f32"}));
  rec->add_flag("--straight-through,!--no-straight-through",
                ro.config.straight_through,
                "Pass gradients through the binarized selection in stage 2");
  rec->add_option("--voxel-queries", ro.voxel_queries,
                  "Training queries sampled from a voxel grid");
  rec->add_option("--offsets-per-point", ro.offsets_per_point,
                  "Normal-offset queries per cloud point");
  rec->add_option("--offset-sigma", ro.offset_sigma,
                  "Stddev of normal offsets (world units)");
  rec->add_option("--mesh-resolution", ro.mesh_resolution,
                  "Marching-cubes grid resolution");
  rec->add_option("--mesh-iso", ro.mesh_iso, "Isosurface level");
  rec->add_option("--jobs", ro.jobs,
                  "Fit this many inputs concurrently in forked workers")
      ->check(CLI::PositiveNumber);
  std::string rec_config;
  rec->add_option("--config", rec_config,
                  "key=value file ('#' comments); command-line flags take "
                  "precedence");

  EvaluateOptions eo;
  auto* ev = app.add_subcommand(
      "evaluate", "Compare a reconstructed mesh against ground truth");
  ev->add_option("--recon", eo.recon, "Reconstructed mesh (.obj)")->required();
  ev->add_option("--gt", eo.gt,
                 "Ground truth: a mesh (.obj) or an oriented point file "
                 "(x y z nx ny nz per line)")
      ->required();
  ev->add_option("--samples", eo.samples, "Surface samples per mesh");
  ev->add_option("--seed", eo.seed, "Seed for surface sampling");
  ev->add_option("--tree", eo.tree,
                 "tree.json whose primitive/convex counts to report");
  std::string ev_config;
  ev->add_option("--config", ev_config,
                 "key=value file ('#' comments); command-line flags take "
                 "precedence");

  ExportTreeOptions xo;
  auto* ex = app.add_subcommand(
      "export-tree", "Re-derive tree.json from a checkpoint");
  ex->add_option("--checkpoint", xo.checkpoint, "Checkpoint file")->required();
  ex->add_option("--out", xo.out,
                 "Output path (default: tree.json beside the checkpoint)");
  auto* seed_opt = ex->add_option(
      "--seed", xo.seed,
      "Pruning seed (default: the seed stored in the checkpoint)");
  std::string ex_config;
  ex->add_option("--config", ex_config,
                 "key=value file ('#' comments); command-line flags take "
                 "precedence");

  try {
    std::vector<std::string> args =
        expand_config(std::vector<std::string>(argv + 1, argv + argc));
    std::reverse(args.begin(), args.end());  // App::parse wants them reversed
    app.parse(args);
  } catch (const InputError& e) {
    diag(std::string(e.what()));
    return kExitBadFlags;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitBadFlags;  // rc 0: --help and friends
  }
  xo.seed_given = seed_opt->count() > 0;

  try {
    if (rec->parsed()) return cmd_reconstruct(ro);
    if (ev->parsed()) return cmd_evaluate(eo);
    return cmd_export_tree(xo);
  } catch (const std::exception& e) {
    diag(std::string(e.what()));
    return 1;
  }
}
