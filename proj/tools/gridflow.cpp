#include "gridflow/cli.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <map>

namespace cli = gridflow::cli;

int main(int argc, char** argv) {
  CLI::App app{"Grid-street intersection control: TRPO training, evaluation and MIQP export"};
  app.require_subcommand(1);
  app.set_version_flag("--version", GRIDFLOW_VERSION);

  const std::map<std::string, gridflow::ObjectiveSense> senses{
      {"minimize", gridflow::ObjectiveSense::minimize},
      {"maximize", gridflow::ObjectiveSense::maximize}};

  cli::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train a policy with TRPO");
  train_cmd->add_option("--scenario", train.scenario, "Scenario file");
  train_cmd->add_option("--config", train.config, "Environment config file");
  train_cmd->add_option("--train-config", train.train_config, "Training config file");
  train_cmd->add_option("--manifest", train.manifest, "Re-run from a manifest.json");
  train_cmd->add_option("--out", train.out, "Output directory")->capture_default_str();
  train_cmd->add_option("--seed", train.seed, "Override the training seed");
  train_cmd->add_option("--iterations", train.iterations, "Override the iteration count")
      ->check(CLI::NonNegativeNumber);

  cli::RolloutOptions rollout;
  auto* rollout_cmd = app.add_subcommand("rollout", "Run one episode and write its trajectory CSV");
  rollout_cmd->add_option("--policy", rollout.policy, "Policy checkpoint")->required();
  rollout_cmd->add_option("--scenario", rollout.scenario, "Scenario file")->required();
  rollout_cmd->add_option("--config", rollout.config, "Environment config file");
  rollout_cmd->add_option("--out", rollout.out, "Trajectory CSV")->capture_default_str();
  rollout_cmd->add_option("--horizon", rollout.horizon, "Step limit")->capture_default_str();
  rollout_cmd->add_option("--seed", rollout.seed, "Sampling seed")->capture_default_str();
  rollout_cmd->add_flag("--deterministic", rollout.deterministic, "Use the mean action");

  cli::EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Travel time and success rate over several episodes");
  eval_cmd->add_option("--policy", eval.policy, "Policy checkpoint")->required();
  eval_cmd->add_option("--scenario", eval.scenario, "Scenario file")->required();
  eval_cmd->add_option("--config", eval.config, "Environment config file");
  eval_cmd->add_option("--episodes", eval.episodes, "Episode count")->capture_default_str();
  eval_cmd->add_option("--horizon", eval.horizon, "Step limit")->capture_default_str();
  eval_cmd->add_option("--seed", eval.seed, "Sampling seed")->capture_default_str();
  eval_cmd->add_flag("--deterministic", eval.deterministic, "Use the mean action");

  cli::ExportMiqpOptions exp;
  auto* export_cmd = app.add_subcommand("export-miqp", "Write the mixed-integer model as LP text");
  export_cmd->add_option("--scenario", exp.scenario, "Scenario file")->required();
  export_cmd->add_option("--config", exp.config, "Environment config file");
  export_cmd->add_option("--out", exp.out, "LP file")->capture_default_str();
  export_cmd->add_option("--horizon", exp.horizon, "Time steps T (>= 2)")->required();
  export_cmd->add_option("--big-m", exp.big_m, "Big-M constant (default 10x the lower bound)");
  export_cmd->add_option("--objective-sense", exp.sense, "minimize or maximize")
      ->transform(CLI::CheckedTransformer(senses, CLI::ignore_case));

  cli::CheckOptions check;
  auto* check_cmd = app.add_subcommand("check", "Validate a trajectory CSV against the constraints");
  check_cmd->add_option("trajectory", check.trajectory, "Trajectory CSV")->required();
  check_cmd->add_option("--scenario", check.scenario, "Scenario file")->required();
  check_cmd->add_option("--config", check.config, "Environment config file");
  check_cmd->add_option("--out", check.out, "Violations CSV (default stdout)");
  check_cmd->add_option("--big-m", check.big_m, "Big-M constant (default 10x the lower bound)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  if (*train_cmd) {
    if (train.scenario.empty() && !train.manifest) {
      std::cerr << "error: train needs --scenario or --manifest\n";
      return cli::kExitUsage;
    }
    return cli::cmd_train(train, std::cout, std::cerr);
  }
  if (*rollout_cmd) return cli::cmd_rollout(rollout, std::cout, std::cerr);
  if (*eval_cmd) return cli::cmd_eval(eval, std::cout, std::cerr);
  if (*export_cmd) return cli::cmd_export_miqp(exp, std::cout, std::cerr);
  return cli::cmd_check(check, std::cout, std::cerr);
}
