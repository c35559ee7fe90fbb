#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spg/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Continual learning with soft-masked gradient updates"};
  app.require_subcommand(1);

  spg::CliOptions opts;
  std::string out;
  std::vector<std::uint64_t> seeds;
  int threads = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "output directory (overrides output_dir)");
    cmd->add_option("--seeds", seeds, "comma-separated seeds (overrides seeds)")->delimiter(',');
    cmd->add_option("--threads", threads, "worker threads (default: $SPG_THREADS or 1)")->check(CLI::PositiveNumber);
  };
  auto* run = app.add_subcommand("run", "train every method on every seed and write run records");
  auto* prune = app.add_subcommand("prune", "pruning experiment on the first task");
  auto* probe = app.add_subcommand("probe", "probe the extractor after every task");
  for (auto* cmd : {run, prune, probe}) add_common(cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : spg::kExitConfig;
  }

  if (!out.empty()) opts.out = out;
  if (!seeds.empty()) opts.seeds = seeds;
  if (threads > 0) opts.threads = threads;

  if (run->parsed()) return spg::cmd_run(opts, std::cerr);
  if (prune->parsed()) return spg::cmd_prune(opts, std::cerr);
  return spg::cmd_probe(opts, std::cerr);
}
