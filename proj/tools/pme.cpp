// Experiment runner: pme <command> --config <file> --out <dir>
//
// Exit codes: 0 success, 1 check failure, 2 config error, 3 solver failure.

#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "pme/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Perron envelopes and estimate checks for the porous medium equation"};
  std::string command;
  std::string config_path;
  std::string out_dir;
  app.add_option("command", command, "solve | barenblatt | perron | resolutivity | verify-suite")->required();
  app.add_option("--config", config_path, "JSON experiment config")->required();
  app.add_option("--out", out_dir, "output directory (defaults to the config's output_dir)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : pme::exit_config_error;
  }

  pme::ExperimentConfig cfg;
  try {
    cfg = pme::load_config(config_path);
    if (cfg.command != command) {
      throw pme::ConfigError("command '" + command + "' does not match the config's '" + cfg.command + "'");
    }
    if (out_dir.empty()) out_dir = cfg.output_dir;
    if (out_dir.empty()) throw pme::ConfigError("no output directory: pass --out or set output_dir");
  } catch (const pme::ConfigError& e) {
    std::cerr << "pme: " << e.what() << '\n';
    return pme::exit_config_error;
  }

  const pme::RunResult res = pme::run(cfg, out_dir);
  for (const auto& r : res.reports) {
    std::cout << (r.satisfied ? "ok   " : "FAIL ") << r.name << "  lhs=" << r.lhs << " rhs=" << r.rhs << '\n';
  }
  if (!res.error.empty()) std::cerr << "pme: " << res.error << '\n';
  std::cout << "exit " << res.exit_code << ", " << res.artifacts.size() << " files in " << out_dir << '\n';
  return res.exit_code;
}
