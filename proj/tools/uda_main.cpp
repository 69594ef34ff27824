// CLI for the bound-verification suites and training sweeps.
#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "uda/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"information-theoretic UDA bounds: exact oracles, estimators, trainers"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool have_out = false, have_seed = false;

  auto add_run_command = [&](const std::string& name, const std::string& help) {
    CLI::App* cmd = app.add_subcommand(name, help);
    cmd->add_option("--config", config_path, "experiment config file")->required();
    cmd->add_option("--out", out_dir, "output directory (overrides the config)")
        ->each([&](const std::string&) { have_out = true; });
    cmd->add_option("--seed", seed, "single seed (overrides the config seed list)")
        ->each([&](const std::string&) { have_seed = true; });
    return cmd;
  };

  add_run_command("bounds", "verify generalization bounds on a task or micro-world");
  add_run_command("oracle", "enumerate a micro-world and dump its exact quantities");
  add_run_command("train", "run the configured trainer once per seed");
  add_run_command("sweep", "run every configured method across the seed list");
  add_run_command("convergence", "empirical-KL convergence experiment");

  std::string report_dir;
  CLI::App* rep = app.add_subcommand("report", "summarize a results directory");
  rep->add_option("dir", report_dir, "results directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (rep->parsed()) return uda::harness::report(report_dir);
    uda::harness::Overrides overrides;
    if (have_out) overrides.out_dir = out_dir;
    if (have_seed) overrides.seed = seed;
    const std::string kind = app.get_subcommands().front()->get_name();
    const std::string dir = uda::harness::run(kind, config_path, overrides);
    std::cout << "wrote " << dir << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
