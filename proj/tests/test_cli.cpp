#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

#include "capri/extraction.hpp"
#include "capri/rng.hpp"
#include "capri/sampling.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
namespace sampling = capri::sampling;

namespace {

// The binary under test; its location is injected by the build so the suite
// works from any build directory.
const std::string kCli = CAPRI_CLI_BINARY;

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunResult run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt";
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd =
      kCli + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

fs::path fresh_dir(const std::string& hint) {
  static capri::Rng rng(
      static_cast<std::uint64_t>(std::random_device{}()) << 32 |
      static_cast<std::uint64_t>(::getpid()));
  const fs::path p = fs::temp_directory_path() /
                     ("capri_cli_" + hint + "_" +
                      std::to_string(rng.next_u64() % 100000000));
  fs::create_directories(p);
  return p;
}

void write_sphere_grid(const fs::path& path) {
  auto grid = testsupport::voxelize(
      [](double x, double y, double z) {
        return x * x + y * y + z * z - 0.09;
      },
      32, 32, 32);
  sampling::save_voxel_grid(grid, path);
}

// One dev-scale fit shared by every test below; fitting once keeps the suite
// fast while still exercising the full reconstruct pipeline.
struct Fixture {
  fs::path scratch = fresh_dir("fixture");
  fs::path input = scratch / "sphere.capv";
  fs::path out_a = scratch / "a";
  fs::path out_b = scratch / "b";
  std::string fit_flags =
      " --input-type voxel --seed 7 --primitives 64 --convexes 8"
      " --latent-size 32 --hidden-size 64 --iterations 1500"
      " --batch-size 1024 --voxel-queries 4096 --mesh-resolution 32";

  Fixture() {
    write_sphere_grid(input);
    const auto r = run_cli("reconstruct --input " + input.string() +
                               " --out-dir " + out_a.string() + fit_flags,
                           scratch);
    REQUIRE(r.exit_code == 0);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("reconstruct writes all four artifacts") {
  const auto& f = fixture();
  for (const char* name :
       {"mesh.obj", "tree.json", "checkpoint.capc", "manifest.json"}) {
    INFO(name);
    CHECK(fs::exists(f.out_a / name));
  }

  const auto manifest =
      nlohmann::json::parse(read_file(f.out_a / "manifest.json"));
  CHECK(manifest.at("format") == "capri-manifest-v1");
  CHECK(manifest.at("rng") == "splitmix64");
  CHECK(manifest.at("seed") == 7);
  CHECK(manifest.at("input").at("type") == "voxel");
  CHECK(manifest.at("config").at("iterations") == 1500);
  CHECK(manifest.at("stages").size() == 3);
  CHECK(manifest.at("stages").at(2).at("seconds").get<double>() > 0.0);
  CHECK(manifest.at("result").at("primitives").get<int>() >= 1);

  // recorded input hash matches an independent FNV-1a of the file bytes
  const std::string bytes = read_file(f.input);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char want[17];
  std::snprintf(want, sizeof want, "%016llx",
                static_cast<unsigned long long>(h));
  CHECK(manifest.at("input").at("fnv1a64") == std::string(want));
  CHECK(manifest.at("input").at("bytes") == bytes.size());
}

TEST_CASE("identical reconstruct runs are byte-identical") {
  const auto& f = fixture();
  const auto r = run_cli("reconstruct --input " + f.input.string() +
                             " --out-dir " + f.out_b.string() + f.fit_flags,
                         f.scratch);
  REQUIRE(r.exit_code == 0);
  CHECK(read_file(f.out_a / "tree.json") == read_file(f.out_b / "tree.json"));
  CHECK(read_file(f.out_a / "checkpoint.capc") ==
        read_file(f.out_b / "checkpoint.capc"));
  CHECK(read_file(f.out_a / "mesh.obj") == read_file(f.out_b / "mesh.obj"));
}

TEST_CASE("config file supplies flags and explicit flags win") {
  const auto& f = fixture();
  const fs::path dir = fresh_dir("config");
  const fs::path cfg = dir / "fit.cfg";
  {
    std::ofstream out(cfg);
    out << "# dev-scale settings\n"
        << "input-type = voxel\n"
        << "seed = 999        # decoy; the command line overrides it\n"
        << "primitives = 64\n"
        << "convexes = 8\n"
        << "latent-size = 32\n"
        << "hidden-size = 64\n"
        << "iterations = 1500\n"
        << "batch-size = 1024\n"
        << "voxel-queries = 4096\n"
        << "mesh-resolution = 32\n";
  }
  const auto r = run_cli("reconstruct --input " + f.input.string() +
                             " --out-dir " + (dir / "out").string() +
                             " --config " + cfg.string() + " --seed 7",
                         dir);
  REQUIRE(r.exit_code == 0);
  // same settings as the fixture run, so the artifacts must match it
  CHECK(read_file(dir / "out" / "tree.json") ==
        read_file(f.out_a / "tree.json"));
  CHECK(read_file(dir / "out" / "checkpoint.capc") ==
        read_file(f.out_a / "checkpoint.capc"));

  const auto bad = run_cli("reconstruct --input " + f.input.string() +
                               " --out-dir " + (dir / "x").string() +
                               " --config " + (dir / "missing.cfg").string(),
                           dir);
  CHECK(bad.exit_code == 2);
}

TEST_CASE("missing required flags exit 2 with usage text") {
  const auto& f = fixture();
  const auto r1 = run_cli("reconstruct --input-type voxel --out-dir /tmp/x",
                          f.scratch);
  CHECK(r1.exit_code == 2);
  CHECK(r1.err.find("--input") != std::string::npos);
  CHECK(r1.err.find("Usage") != std::string::npos);

  const auto r2 =
      run_cli("evaluate --recon " + (f.out_a / "mesh.obj").string(),
              f.scratch);
  CHECK(r2.exit_code == 2);

  const auto r3 = run_cli("", f.scratch);
  CHECK(r3.exit_code == 2);

  const auto r4 = run_cli("reconstruct --input " + f.input.string() +
                              " --input-type voxel --out-dir /tmp/x"
                              " --convexes 7",
                          f.scratch);
  CHECK(r4.exit_code == 2);  // odd convex count cannot split left|right
}

TEST_CASE("unreadable or malformed inputs exit 3") {
  const fs::path dir = fresh_dir("badinput");
  const fs::path garbage = dir / "garbage.capv";
  std::ofstream(garbage) << "not a voxel grid";
  const auto r1 = run_cli("reconstruct --input " + garbage.string() +
                              " --input-type voxel --out-dir " +
                              (dir / "out").string(),
                          dir);
  CHECK(r1.exit_code == 3);
  CHECK(r1.err.find("CAPV") != std::string::npos);

  const auto r2 = run_cli(
      "evaluate --recon " + (dir / "missing.obj").string() + " --gt " +
          (dir / "missing.obj").string(),
      dir);
  CHECK(r2.exit_code == 3);
}

TEST_CASE("corrupted checkpoints exit 3 naming the expected format tag") {
  const auto& f = fixture();
  const fs::path dir = fresh_dir("badckpt");
  const fs::path bad = dir / "bad.capc";
  std::ofstream(bad, std::ios::binary) << "CAPX9999 something else entirely";
  const auto r = run_cli("export-tree --checkpoint " + bad.string(), dir);
  CHECK(r.exit_code == 3);
  CHECK(r.err.find("CAPC0001") != std::string::npos);

  // truncation is also a format error
  const std::string whole = read_file(f.out_a / "checkpoint.capc");
  const fs::path cut = dir / "cut.capc";
  std::ofstream(cut, std::ios::binary)
      << whole.substr(0, whole.size() / 2);
  const auto r2 = run_cli("export-tree --checkpoint " + cut.string(), dir);
  CHECK(r2.exit_code == 3);
  CHECK(r2.err.find("truncated") != std::string::npos);
}

TEST_CASE("self evaluation reports perfect scores") {
  const auto& f = fixture();
  const auto r = run_cli("evaluate --recon " + (f.out_a / "mesh.obj").string() +
                             " --gt " + (f.out_a / "mesh.obj").string() +
                             " --tree " + (f.out_a / "tree.json").string(),
                         f.scratch);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.rfind("cd=0 nc=1 ecd=0 p=", 0) == 0);

  const auto tree = capri::extraction::load_tree(
      (f.out_a / "tree.json").string());
  std::ostringstream want;
  want << "cd=0 nc=1 ecd=0 p=" << tree.primitive_ids.size() << " c="
       << tree.left_convexes.size() + tree.right_convexes.size() << "\n";
  CHECK(r.out == want.str());

  // without --tree the counts are reported as zero
  const auto r2 =
      run_cli("evaluate --recon " + (f.out_a / "mesh.obj").string() +
                  " --gt " + (f.out_a / "mesh.obj").string(),
              f.scratch);
  REQUIRE(r2.exit_code == 0);
  CHECK(r2.out == "cd=0 nc=1 ecd=0 p=0 c=0\n");
}

TEST_CASE("export-tree rederives the identical tree") {
  const auto& f = fixture();
  const fs::path dir = fresh_dir("export");
  const fs::path out = dir / "rederived.json";
  const auto r = run_cli("export-tree --checkpoint " +
                             (f.out_a / "checkpoint.capc").string() +
                             " --out " + out.string(),
                         dir);
  REQUIRE(r.exit_code == 0);
  CHECK(read_file(out) == read_file(f.out_a / "tree.json"));
}

TEST_CASE("multiple inputs fit concurrently into per-stem directories") {
  const auto& f = fixture();
  const fs::path dir = fresh_dir("jobs");
  const fs::path second = dir / "copy.capv";
  fs::copy_file(f.input, second);
  const auto r = run_cli("reconstruct --input " + f.input.string() +
                             " --input " + second.string() + " --out-dir " +
                             (dir / "out").string() + " --jobs 2" +
                             f.fit_flags,
                         dir);
  REQUIRE(r.exit_code == 0);
  const fs::path d1 = dir / "out" / "sphere";
  const fs::path d2 = dir / "out" / "copy";
  REQUIRE(fs::exists(d1 / "tree.json"));
  REQUIRE(fs::exists(d2 / "tree.json"));
  // identical bytes in, identical trees out (and identical to the fixture)
  CHECK(read_file(d1 / "tree.json") == read_file(d2 / "tree.json"));
  CHECK(read_file(d1 / "tree.json") == read_file(f.out_a / "tree.json"));
}
