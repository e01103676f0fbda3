// malctl: config-driven gen -> attribute -> train -> eval -> report.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mal/error.hpp"
#include "mal/experiment.hpp"
#include "mal/pipeline.hpp"

namespace {

int exit_code(mal::ErrorKind kind) {
  switch (kind) {
    case mal::ErrorKind::Config:
    case mal::ErrorKind::Parse:
      return 2;
    case mal::ErrorKind::Dependency:
    case mal::ErrorKind::Staleness:
      return 3;
    case mal::ErrorKind::Numeric:
      return 4;
    default:
      return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-attribution CVR experiments on synthetic journeys"};
  app.require_subcommand(0, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
  bool force = false;
  bool print_config = false;
  bool quiet = false;
  app.add_option("--config", config_path, "INI config; unset keys take defaults");
  app.add_option("--seed", seed, "Run a single seed instead of [run] seeds");
  app.add_option("--jobs", jobs, "Concurrent (variant, seed) jobs")->check(CLI::PositiveNumber);
  app.add_flag("--force", force, "Overwrite outputs produced under a different config");
  app.add_flag("--print-config", print_config, "Print the resolved config and exit");
  app.add_flag("-q,--quiet", quiet, "Suppress progress notices");

  auto* gen = app.add_subcommand("gen", "Generate and split the journey log");
  auto* attribute = app.add_subcommand("attribute", "Fit MTA on train and build samples");
  auto* train = app.add_subcommand("train", "Train every (variant, seed)");
  auto* eval = app.add_subcommand("eval", "Score the test split with every checkpoint");
  auto* report = app.add_subcommand("report", "Aggregate evaluations into comparison tables");
  auto* ablate = app.add_subcommand("ablate", "Run Base, MAL_noCAT, MAL_noMultiAttr and MAL end to end");
  auto* check = app.add_subcommand("check", "Gradient check and metric oracles");
  auto* run = app.add_subcommand("run", "All stages in order");

  CLI11_PARSE(app, argc, argv);

  try {
    mal::ExperimentConfig config =
        config_path.empty() ? mal::ExperimentConfig::defaults() : mal::load_config(config_path);
    if (seed) config.seeds = {*seed};
    config.validate();
    if (print_config) {
      std::cout << config.to_ini();
      return 0;
    }
    if (check->parsed()) return mal::run_self_checks(std::cout) ? 0 : 1;
    if (app.get_subcommands().empty()) {
      std::cerr << app.help();
      return 2;
    }

    mal::RunOptions options;
    options.force = force;
    options.jobs = jobs;
    options.log = quiet ? nullptr : &std::cerr;
    mal::Pipeline pipeline(config, options);
    if (gen->parsed()) pipeline.gen();
    if (attribute->parsed()) pipeline.attribute();
    if (train->parsed()) pipeline.train();
    if (eval->parsed()) pipeline.eval();
    if (report->parsed()) std::cout << mal::to_text(pipeline.report());
    if (ablate->parsed()) std::cout << mal::to_text(pipeline.ablate());
    if (run->parsed()) std::cout << mal::to_text(pipeline.run_all());
    return 0;
  } catch (const mal::Error& e) {
    std::cerr << "malctl: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "malctl: " << e.what() << "\n";
    return 1;
  }
}
