// latplan: experiment pipeline from image transitions to validated plans.

#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "latplan/cli.hpp"
#include "latplan/common/error.hpp"

namespace fs = std::filesystem;
using namespace latplan;

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.file, "JSON experiment config (defaults for every missing key)")
      ->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", args.overrides, "override a config key, e.g. --set latent.F=49")->take_all();
}

cli::ExperimentConfig resolve_config(const ConfigArgs& args) {
  nlohmann::json j = nlohmann::json::object();
  if (!args.file.empty()) {
    std::ifstream in(args.file);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(args.file + ": " + e.what());
    }
  }
  for (const auto& o : args.overrides) cli::apply_override(j, o);
  return cli::ExperimentConfig::from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latplan: learn a symbolic model from image transitions, plan in it and validate the plans"};
  app.require_subcommand(1);

  std::string dir;
  cli::StageOptions opts;
  opts.progress = &std::cerr;
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress messages");

  ConfigArgs config_args;
  auto* show = app.add_subcommand("config", "print the resolved experiment config");
  add_config_options(show, config_args);

  auto* init = app.add_subcommand("init", "create an experiment directory with config.json and manifest.json");
  init->add_option("dir", dir, "experiment directory")->required();
  add_config_options(init, config_args);
  init->add_flag("-f,--force", opts.force, "replace a differing config");

  struct Stage {
    const char* name;
    const char* help;
    void (*fn)(const fs::path&, const cli::StageOptions&);
  };
  const std::vector<Stage> stages{
      {"generate-data", "sample the transition dataset", cli::generate_data},
      {"train", "train the state (and action) model", cli::train},
      {"export-pddl", "extract the PDDL domain and the extraction report", cli::export_pddl},
      {"make-instances", "sample planning instances at the configured goal distances", cli::make_instances},
      {"plan", "encode the instances and search for plans", cli::plan},
      {"validate", "decode the plans and check them against the ground-truth rules", cli::validate},
  };
  std::vector<std::pair<CLI::App*, const Stage*>> stage_cmds;
  for (const auto& s : stages) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    cmd->add_option("dir", dir, "experiment directory")->required()->check(CLI::ExistingDirectory);
    cmd->add_flag("-f,--force", opts.force, "overwrite this stage's outputs");
    if (std::string(s.name) == "plan") cmd->add_option("-j,--jobs", opts.jobs, "parallel searches")->check(CLI::PositiveNumber);
    stage_cmds.emplace_back(cmd, &s);
  }

  std::vector<std::string> report_dirs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "metric tables and plots for one or more experiments");
  report->add_option("dirs", report_dirs, "experiment directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("-o,--out", report_out, "output directory (default: <first dir>/report)");
  report->add_flag("-f,--force", opts.force, "overwrite existing report files");

  auto* run = app.add_subcommand("run", "init plus every stage in order");
  run->add_option("dir", dir, "experiment directory")->required();
  add_config_options(run, config_args);
  run->add_flag("-f,--force", opts.force, "overwrite existing outputs");
  run->add_option("-j,--jobs", opts.jobs, "parallel searches")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  if (quiet) opts.progress = nullptr;

  try {
    if (show->parsed()) {
      std::cout << resolve_config(config_args).to_json().dump(2) << '\n';
    } else if (init->parsed()) {
      cli::init_experiment(dir, resolve_config(config_args), opts.force);
    } else if (report->parsed()) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      const fs::path out = report_out.empty() ? dirs.front() / "report" : fs::path(report_out);
      cli::report(dirs, out, opts);
    } else if (run->parsed()) {
      cli::init_experiment(dir, resolve_config(config_args), opts.force);
      cli::run_all(dir, opts);
    } else {
      for (const auto& [cmd, stage] : stage_cmds) {
        if (cmd->parsed()) stage->fn(dir, opts);
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
