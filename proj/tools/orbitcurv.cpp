#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "orbitcurv/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"orbitcurv: orbit disintegration, quotient transport and curvature certification"};
  app.require_subcommand(1, 1);

  std::string config, out;
  std::int64_t seed = -1;
  unsigned jobs = 1;
  auto add_flags = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", config, "experiment config (JSON)");
    if (config_required) c->required();
    sub->add_option("--out", out, "output directory (overrides the config)");
    sub->add_option("--seed", seed, "random seed (overrides the config)")->check(CLI::NonNegativeNumber);
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  };
  add_flags(app.add_subcommand("disintegrate", "split a density into quotient marginal and orbit conditionals"), true);
  add_flags(app.add_subcommand("transport", "quotient optimal transport and displacement interpolation"), true);
  add_flags(app.add_subcommand("certify", "estimate and certify a horizontal Ricci lower bound"), true);
  add_flags(app.add_subcommand("report", "emit plot-ready CSV series from a run directory"), false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : orbitcurv::pipeline::kBadInput;
  }

  orbitcurv::pipeline::RunOptions opt;
  opt.config = config;
  if (!out.empty()) opt.out = out;
  if (seed >= 0) opt.seed = static_cast<std::uint64_t>(seed);
  opt.jobs = jobs;
  return orbitcurv::pipeline::run_command(app.get_subcommands().front()->get_name(), opt);
}
