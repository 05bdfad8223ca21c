#include <CLI11.hpp>

#include <iostream>

#include "rbhomog/cli.hpp"
#include "rbhomog/errors.hpp"

using namespace rbhomog;

int main(int argc, char** argv) {
  CLI::App app{"Reduced-basis homogenization workflow"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::string snapshot_file = "test.snap";
  int workers = 0;
  std::uint64_t seed = 0;
  bool has_seed = false;
  bool force = false;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* c = cmd->add_option("--config", config_path, "run configuration file (JSON)");
    if (needs_config) c->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--workers", workers, "worker threads (0 = hardware)");
    cmd->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
      has_seed = true;
    });
    cmd->add_flag("--force", force, "skip manifest/hash consistency checks");
  };

  auto* generate = app.add_subcommand("generate", "sample parameters and run the RVE solves");
  add_common(generate, true);
  auto* train = app.add_subcommand("train", "build the POD basis and fit the regressors");
  add_common(train, true);
  auto* evaluate = app.add_subcommand("evaluate", "error study of a trained model");
  add_common(evaluate, true);
  evaluate->add_option("--snapshots", snapshot_file, "snapshot file inside the output directory");
  auto* twoscale = app.add_subcommand("twoscale", "Cook's membrane with FE^2 and/or the surrogate");
  add_common(twoscale, true);
  auto* report = app.add_subcommand("report", "summarize a run directory");
  add_common(report, false);

  CLI11_PARSE(app, argc, argv);

  try {
    cli::InvokeOptions opts;
    opts.out = out_dir;
    opts.workers = workers;
    if (has_seed) opts.seed = seed;
    opts.force = force;

    if (report->parsed()) {
      cli::cmd_report(out_dir);
      return 0;
    }
    const cli::RunConfig config = cli::RunConfig::load(config_path);
    if (generate->parsed()) cli::cmd_generate(config, opts);
    if (train->parsed()) cli::cmd_train(config, opts);
    if (evaluate->parsed()) cli::cmd_evaluate(config, opts, snapshot_file);
    if (twoscale->parsed()) cli::cmd_twoscale(config, opts);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const SolverError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
