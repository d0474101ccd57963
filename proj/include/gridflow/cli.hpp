#pragma once

#include "gridflow/miqp.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>

namespace gridflow::cli {

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitCheckFailed = 3;

using Path = std::filesystem::path;

struct TrainOptions {
  Path scenario;
  std::optional<Path> config;
  std::optional<Path> train_config;
  // Replaces scenario/config/train_config with the texts recorded in a
  // previous run's manifest.json.
  std::optional<Path> manifest;
  Path out = "run";
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
};

struct RolloutOptions {
  Path policy;
  Path scenario;
  std::optional<Path> config;
  Path out = "trajectory.csv";
  int horizon = 2000;
  std::uint64_t seed = 0;
  bool deterministic = false;
};

struct EvalOptions {
  Path policy;
  Path scenario;
  std::optional<Path> config;
  int episodes = 20;
  int horizon = 2000;
  std::uint64_t seed = 0;
  bool deterministic = false;
};

struct ExportMiqpOptions {
  Path scenario;
  std::optional<Path> config;
  Path out = "model.lp";
  int horizon = 0;
  std::optional<double> big_m;
  ObjectiveSense sense = ObjectiveSense::minimize;
};

struct CheckOptions {
  Path trajectory;
  Path scenario;
  std::optional<Path> config;
  // Violations CSV destination; stdout when unset.
  std::optional<Path> out;
  std::optional<double> big_m;
};

struct EvalSummary {
  double mean_travel_time = 0.0;
  double min_travel_time = 0.0;
  double max_travel_time = 0.0;
  double success_rate = 0.0;
  long near_collisions = 0;
};

/// Episodes of `policy` on `scenario`; episode e samples with
/// derive_seed(seed, e) unless deterministic.
EvalSummary evaluate_policy(const Policy& policy, const Scenario& scenario,
                            const EnvConfig& config, int episodes, int horizon,
                            std::uint64_t seed, bool deterministic);

/// Throws InvalidArgument when the policy's input/output sizes do not match
/// the scenario's vehicle count.
void check_policy_dimensions(const Policy& policy, const Scenario& scenario);

int cmd_train(const TrainOptions& opts, std::ostream& out, std::ostream& err);
int cmd_rollout(const RolloutOptions& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err);
int cmd_export_miqp(const ExportMiqpOptions& opts, std::ostream& out, std::ostream& err);
int cmd_check(const CheckOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace gridflow::cli
