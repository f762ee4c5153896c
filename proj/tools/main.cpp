// Command-line front end: synth -> train -> prune -> eval -> report.
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric error.

#include <CLI11.hpp>
#include <iostream>

#include "prunecnn/experiment.hpp"

using prunecnn::ExperimentConfig;

int main(int argc, char** argv) {
  CLI::App app{"structured CNN pruning toolkit for membrane segmentation"};
  app.require_subcommand(1);

  std::string config_path;
  bool resume = false;
  bool no_timing = false;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "experiment config file")
        ->required();
  };

  CLI::App* synth =
      app.add_subcommand("synth", "generate synthetic membrane images");
  add_config(synth);
  CLI::App* train = app.add_subcommand("train", "train the network");
  add_config(train);
  train->add_flag("--resume", resume, "continue from an existing checkpoint");
  CLI::App* prune =
      app.add_subcommand("prune", "order features, prune and retrain");
  add_config(prune);
  CLI::App* eval = app.add_subcommand("eval", "evaluate checkpoints");
  add_config(eval);
  eval->add_flag("--no-timing", no_timing, "skip segmentation timing");
  CLI::App* report = app.add_subcommand("report", "merge experiment outputs");
  add_config(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const ExperimentConfig cfg = ExperimentConfig::parse_file(config_path);
    if (synth->parsed()) prunecnn::pipeline::run_synth(cfg);
    if (train->parsed()) prunecnn::pipeline::run_train(cfg, resume);
    if (prune->parsed()) prunecnn::pipeline::run_prune(cfg);
    if (eval->parsed()) prunecnn::pipeline::run_eval(cfg, !no_timing);
    if (report->parsed()) prunecnn::pipeline::run_report(cfg);
  } catch (const prunecnn::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
