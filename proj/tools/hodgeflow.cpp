#include <exception>
#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"

namespace cli = hodgeflow::cli;

int main(int argc, char** argv) {
  CLI::App app{"hodgeflow: Hodge-projected learning dynamics"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const cli::Options&);
  };
  const Sub subs[] = {
      {"mechanism", "run a mechanism experiment (rps, 2d, logistic, 3d)",
       [](const cli::Options& o) { return cli::cmd_mechanism(o); }},
      {"project", "project a sampled field onto its potential part", [](const cli::Options& o) { return cli::cmd_project(o); }},
      {"ctde", "centralized-training logit learning on a matrix game", [](const cli::Options& o) { return cli::cmd_ctde(o); }},
      {"diagnose", "run the invariant suite", [](const cli::Options& o) { return cli::cmd_diagnose(o); }},
  };

  cli::Options opt;
  std::string config, out;
  std::uint64_t seed = 0;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "single seed (overrides seeds)");
    sub->add_option("--threads", opt.threads, "worker threads, 0 = auto (HODGEFLOW_THREADS overrides)")
        ->check(CLI::NonNegativeNumber);
  }
  CLI11_PARSE(app, argc, argv);

  const CLI::App* chosen = app.get_subcommands().front();
  opt.config = config;
  if (!out.empty()) opt.out = out;
  if (chosen->count("--seed")) opt.seed = seed;
  try {
    for (const auto& s : subs) {
      if (chosen->get_name() == s.name) return s.run(opt);
    }
  } catch (const std::exception& e) {
    std::cerr << "hodgeflow " << chosen->get_name() << ": " << e.what() << "\n";
    return 2;
  }
  return 2;
}
