#include "gridflow/cli.hpp"

#include "gridflow/checkpoint.hpp"
#include "gridflow/errors.hpp"
#include "gridflow/io.hpp"
#include "gridflow/trpo.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <limits>
#include <ostream>
#include <random>

namespace gridflow::cli {

namespace {

using json = nlohmann::json;

// Loads a text input, tagging format errors with the file they came from.
template <class T, class Parse>
T load_tagged(const Path& path, Parse parse) {
  const std::string text = read_text_file(path);
  try {
    return parse(text);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset(), e.line());
  }
}

EnvConfig load_config_or_default(const std::optional<Path>& path) {
  if (!path) return EnvConfig{};
  return load_tagged<EnvConfig>(*path, parse_env_config);
}

Policy load_policy_tagged(const Path& path) {
  try {
    return load_policy(path);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset(), e.line());
  }
}

// Maps exceptions onto the shared exit-code contract.
int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const FileNotFound& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidLayout& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

PolicyCallback make_actor(const Policy& policy, bool deterministic, std::mt19937_64& rng) {
  if (deterministic) {
    return [&policy](const EnvState& s) { return ActionVec(policy.forward(s.values)); };
  }
  return [&policy, &rng](const EnvState& s) {
    return ActionVec(sample_action(policy.forward(s.values), policy.log_std(), rng));
  };
}

std::optional<int> workers_from_environment() {
  const char* raw = std::getenv("GRIDFLOW_WORKERS");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (*end != '\0' || v < 1 || v > 1024) {
    throw InvalidArgument(std::string("GRIDFLOW_WORKERS must be a positive integer, got '") + raw +
                          "'");
  }
  return static_cast<int>(v);
}

}  // namespace

void check_policy_dimensions(const Policy& policy, const Scenario& scenario) {
  const int n = scenario.num_vehicles();
  if (policy.input_dim() != 4 * n || policy.output_dim() != 2 * n) {
    throw InvalidArgument("policy expects " + std::to_string(policy.input_dim() / 4) +
                          " vehicles (input " + std::to_string(policy.input_dim()) +
                          "), scenario has " + std::to_string(n));
  }
}

EvalSummary evaluate_policy(const Policy& policy, const Scenario& scenario,
                            const EnvConfig& config, int episodes, int horizon,
                            std::uint64_t seed, bool deterministic) {
  if (episodes < 1) throw InvalidArgument("episodes must be >= 1");
  if (horizon < 1) throw InvalidArgument("horizon must be >= 1");
  check_policy_dimensions(policy, scenario);
  EvalSummary s;
  s.min_travel_time = std::numeric_limits<double>::infinity();
  s.max_travel_time = -std::numeric_limits<double>::infinity();
  int successes = 0;
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(e)));
    const Trajectory traj =
        run_episode(scenario, config, make_actor(policy, deterministic, rng), horizon);
    const double tt = traj.total_travel_time();
    total += tt;
    s.min_travel_time = std::min(s.min_travel_time, tt);
    s.max_travel_time = std::max(s.max_travel_time, tt);
    successes += traj.done ? 1 : 0;
    s.near_collisions += traj.near_collisions();
  }
  s.mean_travel_time = total / episodes;
  s.success_rate = static_cast<double>(successes) / episodes;
  return s;
}

int cmd_train(const TrainOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    std::string scenario_text, env_text, train_text;
    if (opts.manifest) {
      json m;
      try {
        m = json::parse(read_text_file(*opts.manifest));
        scenario_text = m.at("scenario").get<std::string>();
        env_text = m.at("env_config").get<std::string>();
        train_text = m.at("train_config").get<std::string>();
      } catch (const json::exception& e) {
        throw FormatError(opts.manifest->string() + ": " + e.what());
      }
    } else {
      scenario_text = format_scenario(load_tagged<Scenario>(opts.scenario, parse_scenario));
      env_text = format_env_config(load_config_or_default(opts.config));
      train_text = format_train_config(
          opts.train_config ? load_tagged<TrainConfig>(*opts.train_config, parse_train_config)
                            : TrainConfig{});
    }
    const Scenario scenario = parse_scenario(scenario_text);
    const EnvConfig env = parse_env_config(env_text);
    TrainConfig tc = parse_train_config(train_text);
    if (opts.seed) tc.seed = *opts.seed;
    if (opts.iterations) tc.n_iterations = *opts.iterations;
    if (auto w = workers_from_environment()) tc.workers = *w;
    scenario.validate();
    env.validate();
    tc.validate();

    std::filesystem::create_directories(opts.out);
    // Worker count does not affect results, so it stays out of the manifest.
    TrainConfig recorded = tc;
    recorded.workers = 1;
    const json manifest = {
        {"tool", "gridflow"},
        {"version", GRIDFLOW_VERSION},
        {"command", "train"},
        {"seed", tc.seed},
        {"scenario", format_scenario(scenario)},
        {"env_config", format_env_config(env)},
        {"train_config", format_train_config(recorded)},
        {"outputs",
         {{"metrics", (opts.out / "metrics.csv").string()},
          {"final_policy", (opts.out / "policy_final.bin").string()}}},
    };
    write_text_file(opts.out / "manifest.json", manifest.dump(2) + '\n');

    train(scenario, env, tc, opts.out, [&](const IterationStats& s, const Policy&) {
      out << "iter " << s.iter << " disc_return " << format_real(s.mean_disc_return)
          << " near_collisions " << s.near_collisions << " kl " << format_real(s.kl) << '\n';
    });
    out << "wrote " << (opts.out / "policy_final.bin").string() << '\n';
    return kExitOk;
  });
}

int cmd_rollout(const RolloutOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Scenario scenario = load_tagged<Scenario>(opts.scenario, parse_scenario);
    const EnvConfig env = load_config_or_default(opts.config);
    const Policy policy = load_policy_tagged(opts.policy);
    check_policy_dimensions(policy, scenario);
    if (opts.horizon < 1) throw InvalidArgument("horizon must be >= 1");

    std::mt19937_64 rng(opts.seed);
    const Trajectory traj =
        run_episode(scenario, env, make_actor(policy, opts.deterministic, rng), opts.horizon);
    write_text_file(opts.out, format_trajectory_csv(table_from_trajectory(traj, env)));

    for (std::size_t i = 0; i < traj.travel_times.size(); ++i) {
      out << "vehicle " << i << " travel_time " << format_real(traj.travel_times[i]) << '\n';
    }
    out << "total_travel_time " << format_real(traj.total_travel_time()) << '\n';
    out << "steps " << traj.length() << '\n';
    out << "reached " << (traj.done ? "yes" : "no") << '\n';
    out << "near_collisions " << traj.near_collisions() << '\n';
    return kExitOk;
  });
}

int cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Scenario scenario = load_tagged<Scenario>(opts.scenario, parse_scenario);
    const EnvConfig env = load_config_or_default(opts.config);
    const Policy policy = load_policy_tagged(opts.policy);
    const EvalSummary s = evaluate_policy(policy, scenario, env, opts.episodes, opts.horizon,
                                          opts.seed, opts.deterministic);
    out << "episodes " << opts.episodes << '\n';
    out << "mean_travel_time " << format_real(s.mean_travel_time) << '\n';
    out << "min_travel_time " << format_real(s.min_travel_time) << '\n';
    out << "max_travel_time " << format_real(s.max_travel_time) << '\n';
    out << "success_rate " << format_real(s.success_rate) << '\n';
    out << "near_collisions " << s.near_collisions << '\n';
    return kExitOk;
  });
}

int cmd_export_miqp(const ExportMiqpOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Scenario scenario = load_tagged<Scenario>(opts.scenario, parse_scenario);
    const EnvConfig env = load_config_or_default(opts.config);
    const double big_m = opts.big_m.value_or(default_big_m(scenario.layout, env.safe_radius));
    const MiqpModel model = build_miqp(scenario, env, opts.horizon, big_m, opts.sense);
    write_text_file(opts.out, emit_lp(model));
    out << "continuous " << model.count(VarKind::continuous) << '\n';
    out << "integer " << model.count(VarKind::integer) << '\n';
    out << "binary " << model.count(VarKind::binary) << '\n';
    out << "constraints " << model.constraints.size() << '\n';
    out << "big_m " << format_real(big_m) << '\n';
    return kExitOk;
  });
}

int cmd_check(const CheckOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const TrajectoryTable table = load_tagged<TrajectoryTable>(opts.trajectory, parse_trajectory_csv);
    const Scenario scenario = load_tagged<Scenario>(opts.scenario, parse_scenario);
    const EnvConfig env = load_config_or_default(opts.config);
    const double big_m = opts.big_m.value_or(default_big_m(scenario.layout, env.safe_radius));
    const double bound = big_m_lower_bound(scenario.layout, env.safe_radius);
    if (!(big_m >= bound)) {
      throw InvalidArgument("big-M below big_m_lower_bound " + format_real(bound));
    }

    std::vector<Violation> all = check_geometric(table, scenario, env).violations;
    const CheckReport witness = assign_binaries(table, scenario, env, big_m);
    all.insert(all.end(), witness.violations.begin(), witness.violations.end());
    if (all.empty()) {
      out << "ok\n";
      return kExitOk;
    }
    const std::string csv = format_report_csv(all);
    if (opts.out) {
      write_text_file(*opts.out, csv);
    } else {
      out << csv;
    }
    err << all.size() << " violation(s)\n";
    return kExitCheckFailed;
  });
}

}  // namespace gridflow::cli
