#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rbhomog/cli.hpp"
#include "rbhomog/errors.hpp"
#include "rbhomog/io.hpp"
#include "rbhomog/mesh_presets.hpp"

using namespace rbhomog;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("rbhomog_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// small custom problem: homogeneous 4x4 unit square
fs::path write_small_setup(const TempDir& tmp, int n_train = 24, int basis_count = 6) {
  const Mesh mesh = build_mesh({.preset = MeshSpec::Preset::UnitSquare, .resolution = 4});
  save_mesh_json(mesh, tmp.path / "rve.json");
  const fs::path cfg = tmp.path / "config.json";
  std::ofstream out(cfg);
  out << R"({
  "problem": "custom",
  "mesh_path": ")" << (tmp.path / "rve.json").string() << R"(",
  "stretch_delta": 0.05,
  "material": {"base": [[1.0, 1.0]]},
  "n_train": )" << n_train << R"(,
  "n_test": 10,
  "basis": {"count": )" << basis_count << R"(},
  "seed": 7,
  "twoscale": {"macro_n": 2, "traction": 0.02, "steps": 1}
})";
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("generate is deterministic and train/evaluate complete the pipeline") {
  TempDir tmp("pipeline");
  const fs::path cfg = write_small_setup(tmp);
  const cli::RunConfig config = cli::RunConfig::load(cfg);

  cli::InvokeOptions opts;
  opts.out = tmp.path / "run";
  opts.workers = 2;

  cli::cmd_generate(config, opts);
  REQUIRE(fs::exists(opts.out / "train.snap"));
  REQUIRE(fs::exists(opts.out / "test.snap"));
  REQUIRE(fs::exists(opts.out / "manifest.json"));
  const std::string train_bytes = slurp(opts.out / "train.snap");
  const std::string manifest_bytes = slurp(opts.out / "manifest.json");

  // rerun: byte identical outputs
  cli::cmd_generate(config, opts);
  CHECK(slurp(opts.out / "train.snap") == train_bytes);
  CHECK(slurp(opts.out / "manifest.json") == manifest_bytes);

  cli::cmd_train(config, opts);
  REQUIRE(fs::exists(opts.out / "model.rbm"));
  REQUIRE(fs::exists(opts.out / "spectrum.csv"));

  // spectrum has non-increasing eigenvalues
  {
    std::ifstream in(opts.out / "spectrum.csv");
    std::string line;
    std::getline(in, line);
    double prev = 1e300;
    while (std::getline(in, line)) {
      const auto c1 = line.find(','), c2 = line.rfind(',');
      const double lambda = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
      CHECK(lambda <= prev * (1.0 + 1e-12));
      prev = lambda;
    }
  }

  cli::cmd_evaluate(config, opts);
  REQUIRE(fs::exists(opts.out / "errors.csv"));
  REQUIRE(fs::exists(opts.out / "summary.csv"));
  REQUIRE(fs::exists(opts.out / "lsweep.csv"));

  // projection error column is monotone non-increasing in L
  {
    std::ifstream in(opts.out / "lsweep.csv");
    std::string line;
    std::getline(in, line);
    double prev = 1e300;
    while (std::getline(in, line)) {
      std::vector<double> vals;
      std::stringstream ss(line);
      std::string tok;
      while (std::getline(ss, tok, ',')) vals.push_back(std::stod(tok));
      REQUIRE(vals.size() == 5);
      CHECK(vals[3] <= prev + 1e-12);
      prev = vals[3];
    }
  }

  // evaluating the model on its own training set: tiny regression error
  cli::cmd_evaluate(config, opts, "train.snap");
  {
    std::ifstream in(opts.out / "summary.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    const double mean_reg_rel = std::stod(row.substr(row.rfind(',') + 1));
    CHECK(mean_reg_rel < 1e-6);
  }
}

TEST_CASE("twoscale runs end to end on a small problem") {
  TempDir tmp("twoscale");
  const fs::path cfg = write_small_setup(tmp, 30, 8);
  const cli::RunConfig config = cli::RunConfig::load(cfg);
  cli::InvokeOptions opts;
  opts.out = tmp.path / "run";
  opts.workers = 4;

  cli::cmd_generate(config, opts);
  cli::cmd_train(config, opts);
  cli::cmd_twoscale(config, opts);

  REQUIRE(fs::exists(opts.out / "comparison.csv"));
  REQUIRE(fs::exists(opts.out / "timing.csv"));
  REQUIRE(fs::exists(opts.out / "micro_compare.csv"));
  REQUIRE(fs::exists(opts.out / "macro_fe2.vtk"));
  REQUIRE(fs::exists(opts.out / "macro_rom.vtk"));

  // homogeneous RVE: surrogate and FE^2 agree closely
  std::ifstream in(opts.out / "comparison.csv");
  std::string line;
  std::getline(in, line);
  double max_eps = 0.0;
  while (std::getline(in, line)) {
    const double eps = std::stod(line.substr(line.rfind(',') + 1));
    max_eps = std::max(max_eps, eps);
  }
  CHECK(max_eps < 0.02);
}

TEST_CASE("twoscale surrogate mode without a model is a config error") {
  TempDir tmp("nomodel");
  const fs::path cfg = write_small_setup(tmp);
  cli::RunConfig config = cli::RunConfig::load(cfg);
  config.twoscale.mode = "surrogate";
  cli::InvokeOptions opts;
  opts.out = tmp.path / "run";
  CHECK_THROWS_AS(cli::cmd_twoscale(config, opts), ConfigError);
}

TEST_CASE("config validation") {
  TempDir tmp("config");
  {
    std::ofstream out(tmp.path / "bad.json");
    out << "{\"problem\": \"porous\", \"unknown_key\": 1}";
  }
  CHECK_THROWS_AS(cli::RunConfig::load(tmp.path / "bad.json"), ConfigError);
  {
    std::ofstream out(tmp.path / "bad2.json");
    out << "{\"problem\": \"custom\"}";
  }
  CHECK_THROWS_AS(cli::RunConfig::load(tmp.path / "bad2.json"), ConfigError);
  {
    std::ofstream out(tmp.path / "bad3.json");
    out << "not json";
  }
  CHECK_THROWS_AS(cli::RunConfig::load(tmp.path / "bad3.json"), ConfigError);
  CHECK_THROWS_AS(cli::RunConfig::load(tmp.path / "missing.json"), ConfigError);

  // L > n_pod is a precondition error at train time
  const fs::path cfg = write_small_setup(tmp, 10, 6);
  cli::RunConfig config = cli::RunConfig::load(cfg);
  config.n_pod = 4;  // < basis count 6
  cli::InvokeOptions opts;
  opts.out = tmp.path / "run";
  cli::cmd_generate(config, opts);
  CHECK_THROWS_AS(cli::cmd_train(config, opts), ConfigError);
}

TEST_CASE("manifest config-hash mismatches are refused unless forced") {
  TempDir tmp("hash");
  const fs::path cfg = write_small_setup(tmp, 12, 4);
  const cli::RunConfig config = cli::RunConfig::load(cfg);
  cli::InvokeOptions opts;
  opts.out = tmp.path / "run";
  cli::cmd_generate(config, opts);

  cli::RunConfig other = config;
  other.stretch_delta = 0.03;
  CHECK_THROWS_AS(cli::cmd_train(other, opts), ConfigError);

  cli::InvokeOptions forced = opts;
  forced.force = true;
  cli::cmd_train(other, forced);  // allowed with --force
  CHECK(fs::exists(opts.out / "model.rbm"));
}

TEST_CASE("a lockfile blocks concurrent runs on one output directory") {
  TempDir tmp("lock");
  const fs::path cfg = write_small_setup(tmp, 8, 3);
  const cli::RunConfig config = cli::RunConfig::load(cfg);
  cli::InvokeOptions opts;
  opts.out = tmp.path / "run";
  fs::create_directories(opts.out);
  {
    std::ofstream lock(opts.out / ".lock");
    lock << "12345\n";
  }
  CHECK_THROWS_AS(cli::cmd_generate(config, opts), ConfigError);
  fs::remove(opts.out / ".lock");
  cli::cmd_generate(config, opts);  // unblocked now
}
