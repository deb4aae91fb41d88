#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fidelity/cli.hpp"

namespace cli = fidelity::cli;

int main(int argc, char** argv) {
  CLI::App app{"Deterministic simulation lab for reflective, self-correcting systems"};
  app.require_subcommand(1);

  cli::RunArgs run;
  std::uint64_t run_seed = 0;
  std::string resume;
  auto* run_cmd = app.add_subcommand("run", "Run one scenario and write its exports");
  run_cmd->add_option("--config", run.config, "Scenario JSON document")->required();
  auto* seed_opt = run_cmd->add_option("--seed", run_seed, "Override the scenario seed");
  run_cmd->add_option("--out", run.out, "Output directory")->capture_default_str();
  auto* resume_opt = run_cmd->add_option("--resume", resume, "learning.json from a previous run");

  cli::ClassifyArgs classify;
  double hard = 0.0;
  std::vector<double> soft;
  double best_effort = 0.0;
  std::size_t window = 0;
  std::string node;
  auto* cls_cmd = app.add_subcommand("classify", "Classify a Δ trace against a contract");
  cls_cmd->add_option("--trace", classify.trace, "CSV with time and delta columns")->required();
  auto* hard_opt = cls_cmd->add_option("--hard", hard, "HardRT bound t");
  auto* soft_opt = cls_cmd->add_option("--soft", soft, "SoftRT bound t and spread sigma")->expected(2);
  auto* be_opt = cls_cmd->add_option("--best-effort", best_effort, "BestEffort bound b");
  auto* window_opt = cls_cmd->add_option("--window", window, "Trailing samples to classify (default: all)");
  auto* node_opt = cls_cmd->add_option("--node", node, "Node to select from a multi-node trace");
  hard_opt->excludes(soft_opt)->excludes(be_opt);
  soft_opt->excludes(be_opt);

  cli::BatchArgs batch;
  std::uint64_t seed_base = 0;
  auto* batch_cmd = app.add_subcommand("batch", "Run configs over several seeds");
  batch_cmd->add_option("--glob", batch.pattern, "Config glob pattern")->required();
  batch_cmd->add_option("--reps", batch.reps, "Repetitions per config")->required();
  auto* base_opt = batch_cmd->add_option("--seed-base", seed_base, "First seed (default: config seed)");
  batch_cmd->add_option("--jobs", batch.jobs, "Concurrent runs")->capture_default_str();
  batch_cmd->add_option("--out", batch.out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kExitValidation;
  }

  if (run_cmd->parsed()) {
    if (*seed_opt) run.seed = run_seed;
    if (*resume_opt) run.resume = resume;
    return cli::cmd_run(run, std::cout, std::cerr);
  }
  if (cls_cmd->parsed()) {
    if (*hard_opt) classify.candidate.t = hard;
    if (*soft_opt) {
      classify.candidate.t = soft[0];
      classify.candidate.sigma = soft[1];
    }
    if (*be_opt) classify.candidate.b = best_effort;
    if (!*hard_opt && !*soft_opt && !*be_opt) {
      std::cerr << "error: one of --hard, --soft or --best-effort is required\n";
      return cli::kExitValidation;
    }
    if (*window_opt) classify.window = window;
    if (*node_opt) classify.node = node;
    return cli::cmd_classify(classify, std::cout, std::cerr);
  }
  if (*base_opt) batch.seed_base = seed_base;
  return cli::cmd_batch(batch, std::cout, std::cerr);
}
