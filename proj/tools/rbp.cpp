#include <iostream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "rbp/commands.hpp"
#include "rbp/error.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Recursive Bayesian channel pruning"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log per-epoch progress");

  std::string config_path;
  rbp::CommandOptions opts;
  std::string out = opts.out.string(), checkpoint, resume;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* c = cmd->add_option("--config", config_path, "Run configuration (JSON)");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "Override dataset and model seeds");
    cmd->add_option("--out", out, "Output directory")->capture_default_str();
    cmd->add_option("--checkpoint", checkpoint, "Input checkpoint")->check(CLI::ExistingFile);
    cmd->add_option("--resume", resume, "Checkpoint of an interrupted run")->check(CLI::ExistingFile);
    cmd->add_flag("--allow-config-mismatch", opts.allow_config_mismatch, "Resume under a changed config");
  };
  auto* pretrain = app.add_subcommand("pretrain", "Train the baseline model");
  auto* prune = app.add_subcommand("prune", "Run the layer-wise pruning pipeline on a baseline checkpoint");
  auto* finetune = app.add_subcommand("finetune", "Finetune a checkpoint with the decaying SGD schedule");
  auto* eval = app.add_subcommand("eval", "Test accuracy of a checkpoint");
  auto* report = app.add_subcommand("report", "Re-render report tables from <out>/report.json");
  for (auto* cmd : {pretrain, prune, finetune, eval}) add_common(cmd, true);
  add_common(report, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (verbose) spdlog::set_level(spdlog::level::debug);
  opts.out = out;
  if (!checkpoint.empty()) opts.checkpoint = checkpoint;
  if (!resume.empty()) opts.resume = resume;
  for (auto* cmd : {pretrain, prune, finetune, eval, report})
    if (cmd->parsed() && cmd->count("--seed")) opts.seed = seed;

  try {
    if (report->parsed()) {
      rbp::cmd_report(opts);
      return 0;
    }
    const rbp::RunConfig config = rbp::load_config(config_path);
    if (pretrain->parsed()) {
      const double acc = rbp::cmd_pretrain(config, opts);
      std::cout << "test accuracy " << acc << '\n';
    } else if (prune->parsed()) {
      const rbp::PruneReport r = rbp::cmd_prune(config, opts);
      std::cout << "FLOPs ratio " << r.flops_ratio << ", compression rate " << r.compression_rate << '\n';
    } else if (finetune->parsed()) {
      const double acc = rbp::cmd_finetune(config, opts);
      std::cout << "test accuracy " << acc << '\n';
    } else if (eval->parsed()) {
      const double acc = rbp::cmd_eval(config, opts);
      std::cout << "test accuracy " << acc << '\n';
    }
    return 0;
  } catch (const rbp::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
