#include "rbhomog/cli.hpp"

#include <json.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <fstream>
#include <iostream>

#include "rbhomog/errors.hpp"
#include "rbhomog/io.hpp"
#include "rbhomog/macro_fem.hpp"
#include "rbhomog/mesh_presets.hpp"
#include "rbhomog/parallel.hpp"
#include "rbhomog/snapshot.hpp"
#include "rbhomog/surrogate.hpp"

namespace rbhomog::cli {

using nlohmann::json;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

constexpr const char* kVersion = "0.1.0";

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

// ---------------------------------------------------------------- config --

void expect_known_keys(const json& j, std::initializer_list<const char*> keys,
                       const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* k : keys)
      if (key == k) known = true;
    if (!known) throw ConfigError("config: unknown key \"" + key + "\" in " + where);
  }
}

}  // namespace

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }

  try {
    expect_known_keys(j,
                      {"problem", "resolution", "paper_scale", "mesh_path", "bc", "stretch_delta",
                       "material", "n_train", "n_test", "include_corners", "n_pod", "n_reg",
                       "basis", "solver", "gpr", "seed", "workers", "twoscale"},
                      "top level");
    RunConfig c;
    c.problem = j.value("problem", c.problem);
    if (c.problem != "porous" && c.problem != "fiber" && c.problem != "custom")
      throw ConfigError("config: problem must be porous, fiber, or custom");
    c.resolution = j.value("resolution", 0);
    c.paper_scale = j.value("paper_scale", false);
    c.mesh_path = j.value("mesh_path", std::string());
    if (c.problem == "custom" && c.mesh_path.empty())
      throw ConfigError("config: custom problem needs mesh_path");
    c.bc = j.value("bc", std::string("linear"));
    if (c.bc != "linear" && c.bc != "periodic")
      throw ConfigError("config: bc must be linear or periodic");

    c.stretch_delta = j.value("stretch_delta", c.problem == "fiber" ? 0.3 : 0.05);
    if (!(c.stretch_delta > 0.0) || c.stretch_delta >= 0.30001)
      throw ConfigError("config: stretch_delta must lie in (0, 0.3]");

    if (j.contains("material")) {
      const json& m = j["material"];
      expect_known_keys(m, {"base", "sampled"}, "material");
      c.base_materials.clear();
      for (const auto& b : m.at("base"))
        c.base_materials.emplace_back(double(b.at(0)), double(b.at(1)));
      c.sampled_materials.clear();
      if (m.contains("sampled"))
        for (const auto& s : m["sampled"])
          c.sampled_materials.push_back(
              {int(s.at("phase")), double(s.at("lo")), double(s.at("hi"))});
    } else if (c.problem == "fiber") {
      c.base_materials = {{1.0, 1.0}, {100.0, 100.0}};
      c.sampled_materials = {{1, 50.0, 150.0}};
    }
    for (auto [c1, d1] : c.base_materials)
      if (!(c1 > 0.0) || !(d1 > 0.0)) throw ConfigError("config: material constants must be positive");
    for (const auto& s : c.sampled_materials)
      if (!(s.lo < s.hi) || !(s.lo > 0.0))
        throw ConfigError("config: sampled material bounds must satisfy 0 < lo < hi");

    c.n_train = j.value("n_train", 500);
    c.n_test = j.value("n_test", 200);
    if (c.n_train < 2 || c.n_test < 1) throw ConfigError("config: n_train >= 2 and n_test >= 1");
    c.include_corners = j.value("include_corners", c.problem == "fiber");

    c.n_pod = j.value("n_pod", 0);
    c.n_reg = j.value("n_reg", 0);
    if (c.n_pod < 0 || c.n_reg < 0) throw ConfigError("config: n_pod/n_reg must be >= 0");

    if (j.contains("basis")) {
      const json& b = j["basis"];
      expect_known_keys(b, {"count", "energy"}, "basis");
      c.selector.count = b.value("count", 0);
      c.selector.energy = b.value("energy", 0.0);
      if (c.selector.count <= 0 && !(c.selector.energy > 0.0 && c.selector.energy < 1.0))
        throw ConfigError("config: basis needs a positive count or an energy in (0,1)");
    }

    if (j.contains("solver")) {
      const json& s = j["solver"];
      expect_known_keys(s, {"rel_tol", "abs_tol", "max_iter", "max_halvings"}, "solver");
      c.solver.rel_tol = s.value("rel_tol", c.solver.rel_tol);
      c.solver.abs_tol = s.value("abs_tol", c.solver.abs_tol);
      c.solver.max_iter = s.value("max_iter", c.solver.max_iter);
      c.solver.max_halvings = s.value("max_halvings", c.solver.max_halvings);
      if (!(c.solver.rel_tol > 0.0)) throw ConfigError("config: solver.rel_tol must be positive");
    }
    if (j.contains("gpr")) {
      const json& g = j["gpr"];
      expect_known_keys(g, {"starts", "max_iter"}, "gpr");
      c.gpr.starts = g.value("starts", c.gpr.starts);
      c.gpr.max_iter = g.value("max_iter", c.gpr.max_iter);
      if (c.gpr.starts < 1) throw ConfigError("config: gpr.starts must be >= 1");
    }

    c.seed = j.value("seed", std::uint64_t(42));
    c.workers = j.value("workers", 0);

    if (j.contains("twoscale")) {
      const json& t = j["twoscale"];
      expect_known_keys(t, {"mode", "macro_n", "traction", "steps", "mu", "warm_start", "micro_points"},
                        "twoscale");
      c.twoscale.mode = t.value("mode", c.twoscale.mode);
      if (c.twoscale.mode != "both" && c.twoscale.mode != "fe2" && c.twoscale.mode != "surrogate")
        throw ConfigError("config: twoscale.mode must be both, fe2, or surrogate");
      c.twoscale.macro_n = t.value("macro_n", c.twoscale.macro_n);
      c.twoscale.traction = t.value("traction", c.twoscale.traction);
      c.twoscale.steps = t.value("steps", c.twoscale.steps);
      if (c.twoscale.macro_n < 1 || c.twoscale.steps < 1)
        throw ConfigError("config: twoscale sizes must be positive");
      if (t.contains("mu")) c.twoscale.mu = t["mu"].get<std::vector<double>>();
      c.twoscale.warm_start = t.value("warm_start", true);
      c.twoscale.micro_points = t.value("micro_points", true);
    }
    if (c.twoscale.mu.empty())
      for (const auto& s : c.sampled_materials) c.twoscale.mu.push_back(0.5 * (s.lo + s.hi));
    if (c.twoscale.mu.size() != c.sampled_materials.size())
      throw ConfigError("config: twoscale.mu must provide one value per sampled material");
    return c;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
}

std::uint64_t RunConfig::hash() const {
  json j;
  j["problem"] = problem;
  j["resolution"] = resolution;
  j["paper_scale"] = paper_scale;
  j["mesh_path"] = mesh_path;
  j["bc"] = bc;
  j["stretch_delta"] = stretch_delta;
  for (auto [c1, d1] : base_materials) j["material"]["base"].push_back({c1, d1});
  for (const auto& s : sampled_materials)
    j["material"]["sampled"].push_back({{"phase", s.phase}, {"lo", s.lo}, {"hi", s.hi}});
  j["n_train"] = n_train;
  j["n_test"] = n_test;
  j["include_corners"] = include_corners;
  j["n_pod"] = n_pod;
  j["n_reg"] = n_reg;
  j["basis"] = {{"count", selector.count}, {"energy", selector.energy}};
  j["solver"] = {{"rel_tol", solver.rel_tol},
                 {"abs_tol", solver.abs_tol},
                 {"max_iter", solver.max_iter},
                 {"max_halvings", solver.max_halvings}};
  j["gpr"] = {{"starts", gpr.starts}, {"max_iter", gpr.max_iter}};
  j["seed"] = seed;
  j["twoscale"] = {{"mode", twoscale.mode},     {"macro_n", twoscale.macro_n},
                   {"traction", twoscale.traction}, {"steps", twoscale.steps},
                   {"mu", twoscale.mu},         {"warm_start", twoscale.warm_start},
                   {"micro_points", twoscale.micro_points}};
  Fnv1a h;
  h.update(j.dump());
  return h.digest();
}

namespace {

// ------------------------------------------------------------- utilities --

struct Lockfile {
  fs::path path;
  explicit Lockfile(const fs::path& dir) : path(dir / ".lock") {
    fs::create_directories(dir);
    const int fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw ConfigError("output directory " + dir.string() +
                        " is locked by another run (remove .lock if stale)");
    ::dprintf(fd, "%d\n", ::getpid());
    ::close(fd);
  }
  ~Lockfile() {
    std::error_code ec;
    fs::remove(path, ec);
  }
};

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot hash missing file " + path.string());
  Fnv1a h;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) h.update(buf, in.gcount());
  return h.digest();
}

json load_manifest(const fs::path& out) {
  const fs::path path = out / "manifest.json";
  if (!fs::exists(path)) return json::object();
  std::ifstream in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception&) {
    throw FormatError("corrupt manifest " + path.string());
  }
  return j;
}

void check_manifest_config(const json& manifest, const RunConfig& config,
                           const InvokeOptions& opts) {
  if (manifest.contains("config_hash") && !opts.force &&
      manifest["config_hash"] != hex64(config.hash()))
    throw ConfigError(
        "output directory was produced with a different config (use --force to override)");
}

void save_manifest(const fs::path& out, json manifest) {
  std::ofstream f(out / "manifest.json");
  f << manifest.dump(1) << "\n";
}

Mesh problem_mesh(const RunConfig& config) {
  const bool periodic = config.bc == "periodic";
  if (config.problem == "porous")
    return build_mesh({.preset = MeshSpec::Preset::Porous,
                       .resolution = config.resolution,
                       .periodic = periodic,
                       .paper_scale = config.paper_scale});
  if (config.problem == "fiber")
    return build_mesh({.preset = MeshSpec::Preset::Fiber,
                       .resolution = config.resolution,
                       .periodic = periodic,
                       .paper_scale = config.paper_scale});
  Mesh mesh = load_mesh_json(config.mesh_path);
  if (periodic && !mesh.periodic)
    throw ConfigError("config: periodic BCs need a mesh with periodic pairing");
  return mesh;
}

Bounds problem_bounds(const RunConfig& config) {
  const double d = config.stretch_delta;
  Bounds bounds = {{1.0 - d, 1.0 + d}, {1.0 - d, 1.0 + d}, {-d, d}};
  for (const auto& s : config.sampled_materials) bounds.emplace_back(s.lo, s.hi);
  return bounds;
}

MaterialConfig problem_materials(const RunConfig& config) {
  MaterialConfig mc;
  for (auto [c1, d1] : config.base_materials) mc.base.emplace_back(c1, d1);
  for (const auto& s : config.sampled_materials) {
    if (s.phase < 0 || s.phase >= static_cast<int>(mc.base.size()))
      throw ConfigError("config: sampled material phase out of range");
    mc.sampled_phase.push_back(s.phase);
  }
  return mc;
}

BcType bc_type(const RunConfig& config) {
  return config.bc == "periodic" ? BcType::Periodic : BcType::Linear;
}

int effective_workers(const RunConfig& config, const InvokeOptions& opts) {
  return opts.workers > 0 ? opts.workers : config.workers;
}

// ------------------------------------------- macro solution binary codec --

constexpr char kMacroMagic[8] = {'R', 'B', 'M', 'A', 'C', 'S', '0', '1'};

void save_macro_solution(const MacroSolution& sol, const fs::path& path) {
  BinaryWriter w(path);
  w.magic(kMacroMagic);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(sol.steps.size()));
  w.u32(static_cast<std::uint32_t>(sol.n_qp));
  w.u64(static_cast<std::uint64_t>(sol.constitutive_calls));
  w.f64(sol.total_wall_ms);
  for (const auto& s : sol.steps) {
    w.u32(static_cast<std::uint32_t>(s.displacement.size()));
    w.f64_array(s.displacement.data(), s.displacement.size());
    w.f64_array(s.f_field.data(), s.f_field.size());
    w.f64_array(s.p_field.data(), s.p_field.size());
    w.u32(static_cast<std::uint32_t>(s.newton_iterations));
    w.f64(s.wall_ms);
  }
  w.close();
}

MacroSolution load_macro_solution(const fs::path& path) {
  BinaryReader r(path);
  r.magic(kMacroMagic);
  if (r.u32() != 1) throw FormatError(path.string() + ": unsupported macro archive version");
  MacroSolution sol;
  const std::uint32_t n_steps = r.u32();
  sol.n_qp = static_cast<int>(r.u32());
  sol.constitutive_calls = static_cast<long>(r.u64());
  sol.total_wall_ms = r.f64();
  if (n_steps > 100000 || sol.n_qp < 0) throw FormatError(path.string() + ": implausible header");
  for (std::uint32_t s = 0; s < n_steps; ++s) {
    MacroStep step;
    const std::uint32_t nu = r.u32();
    step.displacement.resize(nu);
    r.f64_array(step.displacement.data(), nu);
    step.f_field.resize(4 * sol.n_qp);
    r.f64_array(step.f_field.data(), step.f_field.size());
    step.p_field.resize(4 * sol.n_qp);
    r.f64_array(step.p_field.data(), step.p_field.size());
    step.newton_iterations = static_cast<int>(r.u32());
    step.wall_ms = r.f64();
    sol.steps.push_back(std::move(step));
  }
  return sol;
}

}  // namespace

// ---------------------------------------------------------------- generate --

void cmd_generate(const RunConfig& config_in, const InvokeOptions& opts) {
  RunConfig config = config_in;
  if (opts.seed) config.seed = *opts.seed;
  Lockfile lock(opts.out);
  json manifest = load_manifest(opts.out);
  check_manifest_config(manifest, config, opts);

  const auto t0 = clock_type::now();
  const Mesh mesh = problem_mesh(config);
  save_mesh_json(mesh, opts.out / "mesh.json");
  std::cout << "mesh: " << mesh.n_elements() << " elements, " << mesh.n_nodes() << " nodes"
            << (config.bc == "periodic" ? ", periodic pairing" : "") << "\n";

  const Bounds bounds = problem_bounds(config);
  const auto train_points = sobol_sample(config.n_train, bounds, config.include_corners);
  const auto test_points = uniform_sample(config.n_test, bounds, config.seed);

  GenerateOptions gen;
  gen.newton = config.solver;
  gen.workers = effective_workers(config, opts);

  const MaterialConfig materials = problem_materials(config);
  const fs::path train_tmp = opts.out / "train.snap.tmp";
  const fs::path test_tmp = opts.out / "test.snap.tmp";
  try {
    std::cout << "generating " << config.n_train << " training snapshots...\n";
    const SnapshotSet train = generate_snapshots(train_points, mesh, bc_type(config), materials, gen);
    save_snapshots(train, train_tmp);
    std::cout << "generating " << config.n_test << " test snapshots...\n";
    const SnapshotSet test = generate_snapshots(test_points, mesh, bc_type(config), materials, gen);
    save_snapshots(test, test_tmp);
  } catch (...) {
    std::error_code ec;
    fs::remove(train_tmp, ec);
    fs::remove(test_tmp, ec);
    throw;
  }
  fs::rename(train_tmp, opts.out / "train.snap");
  fs::rename(test_tmp, opts.out / "test.snap");

  manifest["config_hash"] = hex64(config.hash());
  manifest["rbhomog_version"] = kVersion;
  manifest["generate"] = {{"mesh.json", hex64(file_hash(opts.out / "mesh.json"))},
                          {"train.snap", hex64(file_hash(opts.out / "train.snap"))},
                          {"test.snap", hex64(file_hash(opts.out / "test.snap"))},
                          {"mesh_hash", hex64(mesh.hash())}};
  save_manifest(opts.out, manifest);
  std::cout << "generate done in " << seconds_since(t0) << " s\n";
}

// ------------------------------------------------------------------- train --

void cmd_train(const RunConfig& config_in, const InvokeOptions& opts) {
  RunConfig config = config_in;
  if (opts.seed) config.seed = *opts.seed;
  Lockfile lock(opts.out);
  json manifest = load_manifest(opts.out);
  check_manifest_config(manifest, config, opts);

  const auto t0 = clock_type::now();
  const SnapshotSet train = load_snapshots(opts.out / "train.snap");
  const int n_pod = config.n_pod > 0 ? config.n_pod : train.n();
  if (config.selector.count > 0 && config.selector.count > n_pod)
    throw ConfigError("config: basis count L = " + std::to_string(config.selector.count) +
                      " exceeds n_pod = " + std::to_string(n_pod));

  TrainOptions topts;
  topts.n_pod = config.n_pod;
  topts.n_reg = config.n_reg;
  topts.selector = config.selector;
  topts.gpr = config.gpr;
  topts.workers = effective_workers(config, opts);

  const SurrogateModel model = SurrogateModel::train(train, topts);
  model.save(opts.out / "model.rbm");

  // eigenvalue spectrum and energy table
  const Eigen::VectorXd& lambda = model.basis().eigenvalues;
  const double total = lambda.sum();
  std::vector<std::vector<double>> rows;
  double cum = 0.0;
  for (int l = 0; l < lambda.size(); ++l) {
    cum += lambda(l);
    rows.push_back({double(l + 1), lambda(l), cum / total});
  }
  write_csv(opts.out / "spectrum.csv", {"l", "lambda", "cumulative_energy"}, rows);
  write_csv(opts.out / "training_summary.csv",
            {"n_pod", "n_reg", "L", "energy_captured"},
            {{double(n_pod), double(config.n_reg > 0 ? config.n_reg : train.n()),
              double(model.basis_size()), model.basis().energy_captured}});

  manifest["config_hash"] = hex64(config.hash());
  manifest["rbhomog_version"] = kVersion;
  manifest["train"] = {{"model.rbm", hex64(file_hash(opts.out / "model.rbm"))},
                       {"L", model.basis_size()},
                       {"energy_captured", model.basis().energy_captured}};
  save_manifest(opts.out, manifest);
  std::cout << "trained L = " << model.basis_size()
            << " basis functions (energy " << model.basis().energy_captured << ") in "
            << seconds_since(t0) << " s\n";
}

// ---------------------------------------------------------------- evaluate --

void cmd_evaluate(const RunConfig& config_in, const InvokeOptions& opts,
                  const std::string& snapshot_file) {
  RunConfig config = config_in;
  Lockfile lock(opts.out);
  json manifest = load_manifest(opts.out);
  check_manifest_config(manifest, config, opts);

  const auto t0 = clock_type::now();
  const SurrogateModel model = SurrogateModel::load(opts.out / "model.rbm");
  const SnapshotSet test = load_snapshots(opts.out / snapshot_file);
  if (model.mesh_hash() != test.mesh_hash && !opts.force)
    throw ConfigError("evaluate: model and snapshots come from different meshes (use --force)");

  const int n = test.n();
  const int size = model.basis_size();
  const auto& averages = model.basis_averages();

  // per-point effective stresses and coefficient sets
  Eigen::MatrixXd alpha_true(size, n), alpha_hat(size, n);
  std::vector<Tensor2> p_hf(n);
  std::vector<ErrorEntry> entries(n);
  double mean_field_norm = 0.0;
  for (int i = 0; i < n; ++i) {
    const QuadratureStressField field = test.field(i);
    const auto& par = test.params[i];
    alpha_true.col(i) = project_coefficients(field, model.basis());
    alpha_hat.col(i) = model.coefficients(par.stretch_tensor(), par.material);
    p_hf[i] = average_stress(field);
    entries[i] = model.error_decomposition(field, par.stretch_tensor(), par.material);
    mean_field_norm += field.l2_norm();
  }
  mean_field_norm /= n;

  auto eps_pbar = [&](const Eigen::VectorXd& alpha, int i, int upto) {
    Tensor2 p = Tensor2::Zero();
    for (int l = 0; l < upto; ++l) p += alpha(l) * averages[l];
    return (p - p_hf[i]).norm() / std::max(p_hf[i].norm(), 1e-300);
  };

  // per-point error table at full L
  std::vector<std::vector<double>> rows;
  double mean_eps = 0.0, max_eps = 0.0, mean_proj = 0.0, max_proj = 0.0, mean_reg = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = eps_pbar(alpha_hat.col(i), i, size);
    const double ep = eps_pbar(alpha_true.col(i), i, size);
    mean_eps += e;
    max_eps = std::max(max_eps, e);
    mean_proj += ep;
    max_proj = std::max(max_proj, ep);
    mean_reg += entries[i].regression;
    rows.push_back({double(i), e, ep, entries[i].total, entries[i].projection,
                    entries[i].regression});
  }
  mean_eps /= n;
  mean_proj /= n;
  mean_reg /= n;
  write_csv(opts.out / "errors.csv",
            {"point", "eps_pbar", "eps_pbar_projection", "field_total", "field_projection",
             "field_regression"},
            rows);

  const double mean_reg_rel = mean_reg / std::max(mean_field_norm, 1e-300);
  write_csv(opts.out / "summary.csv",
            {"n_points", "mean_eps_pbar", "max_eps_pbar", "mean_eps_projection",
             "max_eps_projection", "mean_regression_rel"},
            {{double(n), mean_eps, max_eps, mean_proj, max_proj, mean_reg_rel}});

  // L sweep: effective-stress error against the projection lower bound
  std::vector<std::vector<double>> sweep;
  for (int upto = 1; upto <= size; ++upto) {
    double me = 0.0, xe = 0.0, mp = 0.0, xp = 0.0;
    for (int i = 0; i < n; ++i) {
      const double e = eps_pbar(alpha_hat.col(i), i, upto);
      const double ep = eps_pbar(alpha_true.col(i), i, upto);
      me += e;
      xe = std::max(xe, e);
      mp += ep;
      xp = std::max(xp, ep);
    }
    sweep.push_back({double(upto), me / n, xe, mp / n, xp});
  }
  write_csv(opts.out / "lsweep.csv",
            {"L", "mean_eps_pbar", "max_eps_pbar", "mean_eps_projection", "max_eps_projection"},
            sweep);

  manifest["config_hash"] = hex64(config.hash());
  manifest["evaluate"] = {{"snapshots", snapshot_file},
                          {"mean_eps_pbar", mean_eps},
                          {"max_eps_pbar", max_eps}};
  save_manifest(opts.out, manifest);
  std::cout << "evaluated " << n << " points: mean eps = " << mean_eps << ", max eps = " << max_eps
            << " (" << seconds_since(t0) << " s)\n";
}

// ---------------------------------------------------------------- twoscale --

void cmd_twoscale(const RunConfig& config_in, const InvokeOptions& opts) {
  RunConfig config = config_in;
  Lockfile lock(opts.out);
  json manifest = load_manifest(opts.out);
  check_manifest_config(manifest, config, opts);

  const bool run_fe2 = config.twoscale.mode != "surrogate";
  const bool run_rom = config.twoscale.mode != "fe2";

  const Mesh rve = fs::exists(opts.out / "mesh.json") ? load_mesh_json(opts.out / "mesh.json")
                                                      : problem_mesh(config);

  // fixed material parameters for this simulation
  Eigen::VectorXd mu(config.twoscale.mu.size());
  for (std::size_t i = 0; i < config.twoscale.mu.size(); ++i) mu(i) = config.twoscale.mu[i];
  ParameterPoint fixed_point;
  fixed_point.material = mu;
  const std::vector<MaterialParams> mu_per_phase = problem_materials(config).resolve(fixed_point);

  MacroProblem problem =
      cooks_membrane(config.twoscale.macro_n, config.twoscale.traction, config.twoscale.steps);
  MacroOptions mopts;
  mopts.workers = effective_workers(config, opts);

  std::optional<MacroSolution> fe2, rom;
  long rom_extrapolations = 0;

  if (run_fe2) {
    std::cout << "running FE^2 reference (" << problem.mesh.n_elements() << " macro elements, "
              << rve.n_elements() << "-element RVE)...\n";
    NestedRveProvider provider(rve, bc_type(config), mu_per_phase,
                               mopts.workers > 0 ? mopts.workers : default_workers(),
                               config.solver, 0.0, config.twoscale.warm_start);
    fe2 = solve_macro(problem, provider, mopts);
    save_macro_solution(*fe2, opts.out / "fe2_reference.bin");
    std::cout << "FE^2 done: " << fe2->total_wall_ms / 1000.0 << " s, "
              << fe2->constitutive_calls << " constitutive calls\n";
  } else if (fs::exists(opts.out / "fe2_reference.bin")) {
    fe2 = load_macro_solution(opts.out / "fe2_reference.bin");
    std::cout << "loaded FE^2 reference from a previous run\n";
  }

  std::optional<SurrogateModel> model_storage;  // keep alive for the provider
  const SurrogateModel* model = nullptr;
  if (run_rom) {
    if (!fs::exists(opts.out / "model.rbm"))
      throw ConfigError("twoscale: surrogate mode needs " + (opts.out / "model.rbm").string() +
                        " (run train first)");
    model_storage = SurrogateModel::load(opts.out / "model.rbm");
    model = &*model_storage;
    if (model->mesh_hash() != rve.hash() && !opts.force)
      throw ConfigError("twoscale: model was trained on a different RVE mesh (use --force)");
    SurrogateProvider provider(*model, mu);
    rom = solve_macro(problem, provider, mopts);
    rom_extrapolations = provider.extrapolations();
    save_macro_solution(*rom, opts.out / "rom_solution.bin");
    std::cout << "surrogate run done: " << rom->total_wall_ms / 1000.0 << " s, "
              << rom->constitutive_calls << " constitutive calls, " << rom_extrapolations
              << " extrapolated evaluations\n";
    export_displacement_vtk(problem.mesh, rom->steps.back().displacement,
                            opts.out / "macro_rom.vtk");
  }
  if (fe2)
    export_displacement_vtk(problem.mesh, fe2->steps.back().displacement,
                            opts.out / "macro_fe2.vtk");

  // macro stress fields on the quadrature subgrid
  auto export_pyx = [&](const MacroSolution& sol, const std::string& name) {
    Eigen::VectorXd pyx(sol.n_qp);
    for (int q = 0; q < sol.n_qp; ++q) pyx(q) = sol.steps.back().p_field(4 * q + 2);
    export_quadrature_vtk(problem.mesh, {{"P21", pyx}}, opts.out / name);
  };
  if (fe2) export_pyx(*fe2, "macro_fe2_stress.vtk");
  if (rom) export_pyx(*rom, "macro_rom_stress.vtk");

  json ts;
  if (fe2 && rom) {
    // micro comparison points: A near the domain center, B in the upper left
    MicroCompareContext micro;
    std::vector<std::string> micro_names;
    if (config.twoscale.micro_points && model) {
      const auto qpoints = quadrature_points(problem.mesh);
      auto nearest = [&](double x, double y) {
        int best = 0;
        double dist = 1e300;
        for (int q = 0; q < static_cast<int>(qpoints.size()); ++q) {
          const double d = (qpoints[q] - Eigen::Vector2d(x, y)).norm();
          if (d < dist) {
            dist = d;
            best = q;
          }
        }
        return best;
      };
      micro.rve_mesh = &rve;
      micro.bc = bc_type(config);
      micro.mu_per_phase = mu_per_phase;
      micro.model = model;
      micro.mu = mu;
      micro.point_ids = {nearest(24.0, 28.0), nearest(8.0, 42.0)};
      micro_names = {"A", "B"};
    }
    const ComparisonReport report =
        compare_solutions(problem, *fe2, *rom, micro.model ? &micro : nullptr);

    // per-point P21 comparison table
    const auto qpoints = quadrature_points(problem.mesh);
    double mean_abs = 0.0;
    for (int q = 0; q < fe2->n_qp; ++q) mean_abs += std::abs(fe2->steps.back().p_field(4 * q + 2));
    mean_abs = std::max(mean_abs / fe2->n_qp, 1e-300);
    std::vector<std::vector<double>> rows;
    for (int q = 0; q < fe2->n_qp; ++q) {
      const double a = fe2->steps.back().p_field(4 * q + 2);
      const double b = rom->steps.back().p_field(4 * q + 2);
      rows.push_back({double(q), qpoints[q](0), qpoints[q](1), a, b, std::abs(a - b) / mean_abs});
    }
    write_csv(opts.out / "comparison.csv", {"qp", "x", "y", "Pyx_fe2", "Pyx_rom", "eps_yx"}, rows);

    // microscopic field exports at the named points
    if (micro.model) {
      RveSolver solver(rve, micro.bc, config.solver);
      std::vector<std::vector<double>> micro_rows;
      for (std::size_t k = 0; k < micro.point_ids.size(); ++k) {
        const int q = micro.point_ids[k];
        Tensor2 f;
        f << fe2->steps.back().f_field(4 * q), fe2->steps.back().f_field(4 * q + 1),
            fe2->steps.back().f_field(4 * q + 2), fe2->steps.back().f_field(4 * q + 3);
        const QuadratureStressField hf = solver.solve(f, mu_per_phase).stress_field;
        const QuadratureStressField rb = model->stress_field_at_deformation(f, mu);
        export_quadrature_vtk(rve, stress_component_fields(hf),
                              opts.out / ("micro_" + micro_names[k] + "_fe2.vtk"));
        export_quadrature_vtk(rve, stress_component_fields(rb),
                              opts.out / ("micro_" + micro_names[k] + "_rom.vtk"));
        micro_rows.push_back({double(q), report.micro_max_error[k]});
      }
      write_csv(opts.out / "micro_compare.csv", {"macro_qp", "max_rel_err_Pyx"}, micro_rows);
    }

    const double speedup = fe2->total_wall_ms / std::max(rom->total_wall_ms, 1e-9);
    write_csv(opts.out / "timing.csv",
              {"fe2_wall_ms", "rom_wall_ms", "speedup", "fe2_calls", "rom_calls"},
              {{fe2->total_wall_ms, rom->total_wall_ms, speedup, double(fe2->constitutive_calls),
                double(rom->constitutive_calls)}});

    ts["max_eps_pyx"] = report.stress[2].max;
    ts["mean_eps_pyx"] = report.stress[2].mean;
    ts["speedup"] = speedup;
    if (!report.micro_max_error.empty()) ts["micro_max_err"] = report.micro_max_error;
    std::cout << "comparison: max P_yx error " << report.stress[2].max << ", speedup " << speedup
              << "x\n";
  }

  manifest["config_hash"] = hex64(config.hash());
  manifest["twoscale"] = ts.is_null() ? json::object() : ts;
  save_manifest(opts.out, manifest);
}

// ------------------------------------------------------------------ report --

void cmd_report(const fs::path& out) {
  const json manifest = load_manifest(out);
  if (manifest.empty()) throw ConfigError("no manifest in " + out.string());
  std::cout << "run directory: " << out.string() << "\n";
  std::cout << "config hash:   " << manifest.value("config_hash", std::string("?")) << "\n";
  if (manifest.contains("train"))
    std::cout << "model:         L = " << manifest["train"].value("L", 0) << ", energy "
              << manifest["train"].value("energy_captured", 0.0) << "\n";
  if (manifest.contains("evaluate"))
    std::cout << "evaluation:    mean eps = " << manifest["evaluate"].value("mean_eps_pbar", 0.0)
              << ", max eps = " << manifest["evaluate"].value("max_eps_pbar", 0.0) << " on "
              << manifest["evaluate"].value("snapshots", std::string("?")) << "\n";
  if (manifest.contains("twoscale") && !manifest["twoscale"].empty()) {
    std::cout << "two-scale:     max P_yx error = " << manifest["twoscale"].value("max_eps_pyx", 0.0)
              << ", speedup = " << manifest["twoscale"].value("speedup", 0.0) << "x\n";
    if (manifest["twoscale"].contains("micro_max_err")) {
      std::cout << "micro points:  ";
      for (double e : manifest["twoscale"]["micro_max_err"].get<std::vector<double>>())
        std::cout << e << " ";
      std::cout << "\n";
    }
  }
  for (const char* f : {"summary.csv", "lsweep.csv", "timing.csv"}) {
    if (fs::exists(out / f)) {
      std::cout << "\n" << f << ":\n";
      std::ifstream in(out / f);
      std::string line;
      int count = 0;
      while (std::getline(in, line) && count++ < 12) std::cout << "  " << line << "\n";
    }
  }
}

}  // namespace rbhomog::cli
