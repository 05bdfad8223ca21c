#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rbhomog/gpr.hpp"
#include "rbhomog/micro_fem.hpp"
#include "rbhomog/pod.hpp"

namespace rbhomog::cli {

/// One sampled material scalar: sets C1 = D1 of a phase.
struct SampledMaterial {
  int phase = 1;
  double lo = 50.0;
  double hi = 150.0;
};

struct TwoscaleConfig {
  std::string mode = "both";  // both | fe2 | surrogate
  int macro_n = 4;            // 2n x n macro element layout
  double traction = 0.1;
  int steps = 5;
  std::vector<double> mu;     // values of the sampled material scalars
  bool warm_start = true;
  bool micro_points = true;   // compare microscopic fields at points A and B
};

/// Parsed run configuration; the file format is JSON (see README).
struct RunConfig {
  std::string problem = "porous";  // porous | fiber | custom
  int resolution = 0;
  bool paper_scale = false;
  std::string mesh_path;           // custom problem only
  std::string bc = "linear";       // linear | periodic

  double stretch_delta = 0.05;
  std::vector<std::pair<double, double>> base_materials = {{1.0, 1.0}};
  std::vector<SampledMaterial> sampled_materials;

  int n_train = 500;
  int n_test = 200;
  bool include_corners = false;

  int n_pod = 0;  // 0 = all training snapshots
  int n_reg = 0;
  BasisSelector selector{.count = 20};

  NewtonOptions solver;
  GprFitOptions gpr;
  std::uint64_t seed = 42;
  int workers = 0;

  TwoscaleConfig twoscale;

  static RunConfig load(const std::filesystem::path& path);
  std::uint64_t hash() const;
};

struct InvokeOptions {
  std::filesystem::path out = "out";
  int workers = 0;                    // > 0 overrides the config
  std::optional<std::uint64_t> seed;  // overrides the config
  bool force = false;                 // skip manifest/hash consistency checks
};

void cmd_generate(const RunConfig& config, const InvokeOptions& opts);
void cmd_train(const RunConfig& config, const InvokeOptions& opts);
/// snapshot_file is relative to the output directory (test.snap by default).
void cmd_evaluate(const RunConfig& config, const InvokeOptions& opts,
                  const std::string& snapshot_file = "test.snap");
void cmd_twoscale(const RunConfig& config, const InvokeOptions& opts);
void cmd_report(const std::filesystem::path& out);

}  // namespace rbhomog::cli
