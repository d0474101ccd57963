#include "gridflow/trpo.hpp"

#include "gridflow/checkpoint.hpp"
#include "gridflow/io.hpp"

#include <algorithm>
#include <fstream>
#include <numbers>
#include <random>
#include <thread>

namespace gridflow {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct Episode {
  Trajectory traj;
  std::vector<double> log_probs;
};

Episode run_sampled_episode(const Scenario& scenario, const EnvConfig& config,
                            const Policy& policy, std::uint64_t seed) {
  Episode ep;
  std::mt19937_64 rng(seed);
  const double ls = policy.log_std();
  const auto act = [&](const EnvState& s) {
    const Eigen::VectorXd mean = policy.forward(s.values);
    Eigen::VectorXd a = sample_action(mean, ls, rng);
    ep.log_probs.push_back(log_prob(mean, ls, a));
    return a;
  };
  ep.traj = run_episode(scenario, config, act, config.max_episode_len);
  return ep;
}

// Per-sample Gaussian log-densities for a batch of means and actions.
Eigen::VectorXd batch_log_probs(const Eigen::MatrixXd& mean, double log_std,
                                const Eigen::MatrixXd& actions) {
  const double var = std::exp(2.0 * log_std);
  const auto dim = static_cast<double>(mean.rows());
  const double norm = dim * log_std + dim / 2.0 * std::log(2.0 * std::numbers::pi);
  return (-(actions - mean).colwise().squaredNorm().transpose().array() / (2.0 * var) - norm)
      .matrix();
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream));
}

void TrainConfig::validate() const {
  if (batch_steps < 1) throw InvalidArgument("batch_steps must be >= 1");
  if (n_iterations < 0) throw InvalidArgument("iterations must be >= 0");
  if (!(kl_step > 0.0)) throw InvalidArgument("kl_step must be positive");
  if (cg_iters < 1) throw InvalidArgument("cg_iters must be >= 1");
  if (!(cg_damping >= 0.0)) throw InvalidArgument("cg_damping must be non-negative");
  if (backtracks < 1) throw InvalidArgument("backtracks must be >= 1");
  if (!(backtrack_ratio > 0.0 && backtrack_ratio < 1.0)) {
    throw InvalidArgument("backtrack_ratio must lie in (0, 1)");
  }
  if (init_std && !(*init_std > 0.0)) throw InvalidArgument("init_std must be positive");
  for (int h : hidden) {
    if (h < 1) throw InvalidArgument("hidden widths must be >= 1");
  }
  if (checkpoint_every < 0) throw InvalidArgument("checkpoint_every must be >= 0");
  if (workers < 1) throw InvalidArgument("workers must be >= 1");
}

RolloutBatch collect_rollouts(const Scenario& scenario, const EnvConfig& config,
                              const Policy& policy, int batch_steps, std::uint64_t seed,
                              int workers) {
  if (batch_steps < 1) throw InvalidArgument("batch_steps must be >= 1");
  if (workers < 1) throw InvalidArgument("workers must be >= 1");
  const int n = scenario.num_vehicles();
  if (policy.input_dim() != 4 * n || policy.output_dim() != 2 * n) {
    throw InvalidArgument("policy dimensions do not match a " + std::to_string(n) +
                          "-vehicle scenario");
  }

  std::vector<Episode> kept;
  long total = 0;
  std::uint64_t next_episode = 0;
  // Episodes run in waves of `workers`; they are appended in index order and
  // the surplus of the final wave is dropped, so the batch is independent of
  // the worker count.
  while (total < batch_steps) {
    std::vector<Episode> wave(static_cast<std::size_t>(workers));
    const auto run = [&](std::size_t w) {
      wave[w] = run_sampled_episode(scenario, config, policy,
                                    derive_seed(seed, next_episode + w));
    };
    if (workers == 1) {
      run(0);
    } else {
      std::vector<std::jthread> threads;
      for (std::size_t w = 0; w < wave.size(); ++w) threads.emplace_back(run, w);
    }
    for (auto& ep : wave) {
      total += ep.traj.length();
      kept.push_back(std::move(ep));
      if (total >= batch_steps) break;
    }
    next_episode += static_cast<std::uint64_t>(workers);
  }

  RolloutBatch batch;
  batch.states.resize(4 * n, total);
  batch.actions.resize(2 * n, total);
  batch.rewards.resize(total);
  batch.log_probs.resize(total);
  batch.times.reserve(static_cast<std::size_t>(total));
  Eigen::Index col = 0;
  for (const auto& ep : kept) {
    batch.episode_starts.push_back(col);
    batch.terminated.push_back(ep.traj.done ? 1 : 0);
    batch.travel_times.push_back(ep.traj.total_travel_time());
    for (int k = 0; k < ep.traj.length(); ++k, ++col) {
      const auto ks = static_cast<std::size_t>(k);
      batch.states.col(col) = ep.traj.states[ks].values;
      batch.actions.col(col) = ep.traj.actions[ks];
      batch.rewards(col) = ep.traj.rewards[ks];
      batch.log_probs(col) = ep.log_probs[ks];
      batch.times.push_back(k);
      batch.boundary_events += ep.traj.events[ks].boundary;
      batch.pair_events += ep.traj.events[ks].pair;
      batch.unresolved_steps += ep.traj.events[ks].unresolved ? 1 : 0;
    }
  }
  return batch;
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t k = rewards.size(); k-- > 0;) {
    acc = rewards[k] + gamma * acc;
    out[k] = acc;
  }
  return out;
}

Eigen::VectorXd batch_returns(const RolloutBatch& batch, double gamma) {
  Eigen::VectorXd out(batch.size());
  for (int e = 0; e < batch.num_episodes(); ++e) {
    const Eigen::Index start = batch.episode_starts[static_cast<std::size_t>(e)];
    const Eigen::Index len = batch.episode_end(e) - start;
    const auto g = discounted_returns(
        std::span<const double>(batch.rewards.data() + start, static_cast<std::size_t>(len)),
        gamma);
    out.segment(start, len) = Eigen::Map<const Eigen::VectorXd>(g.data(), len);
  }
  return out;
}

LinearBaseline::LinearBaseline(int state_dim, int max_episode_len)
    : state_dim_(state_dim),
      max_episode_len_(max_episode_len),
      coef_(Eigen::VectorXd::Zero(2 * state_dim + 4)) {}

Eigen::VectorXd LinearBaseline::features(const Eigen::Ref<const Eigen::VectorXd>& state,
                                         int t) const {
  const double u = static_cast<double>(t) / max_episode_len_;
  Eigen::VectorXd f(2 * state_dim_ + 4);
  f << state, state.array().square().matrix(), u, u * u, u * u * u, 1.0;
  return f;
}

void LinearBaseline::fit(const Eigen::MatrixXd& states, std::span<const int> times,
                         const Eigen::VectorXd& returns) {
  const Eigen::Index n = states.cols();
  Eigen::MatrixXd x(n, coef_.size());
  for (Eigen::Index k = 0; k < n; ++k) {
    x.row(k) = features(states.col(k), times[static_cast<std::size_t>(k)]).transpose();
  }
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().array() += kRidge;
  const Eigen::LDLT<Eigen::MatrixXd> solver(gram);
  coef_ = solver.solve(x.transpose() * returns);
  // Iterated Tikhonov: each pass removes most of the shrinkage the ridge puts
  // on well-determined directions, while directions the data never excites
  // stay at zero.
  for (int pass = 0; pass < kRefinePasses; ++pass) {
    const Eigen::VectorXd step = solver.solve(x.transpose() * (returns - x * coef_));
    coef_ += step;
    if (step.norm() <= 1e-13 * (1.0 + coef_.norm())) break;
  }
}

double LinearBaseline::predict(const Eigen::Ref<const Eigen::VectorXd>& state, int t) const {
  return features(state, t).dot(coef_);
}

LinearBaseline fit_baseline(const RolloutBatch& batch, const Eigen::VectorXd& returns,
                            int max_episode_len) {
  if (batch.size() == 0) throw InvalidArgument("cannot fit a baseline to an empty batch");
  LinearBaseline b(static_cast<int>(batch.states.rows()), max_episode_len);
  b.fit(batch.states, batch.times, returns);
  return b;
}

double predict_baseline(const LinearBaseline& baseline, const Eigen::VectorXd& state, int t) {
  return baseline.predict(state, t);
}

Eigen::VectorXd normalize(const Eigen::VectorXd& values) {
  if (values.size() == 0) return values;
  const Eigen::VectorXd centered = values.array() - values.mean();
  const double sd = std::sqrt(centered.squaredNorm() / static_cast<double>(values.size()));
  if (!(sd > 0.0)) return centered;
  return centered / sd;
}

Eigen::VectorXd compute_advantages(const RolloutBatch& batch, const Eigen::VectorXd& returns,
                                   BaselineKind baseline, bool normalize_result,
                                   int max_episode_len) {
  Eigen::VectorXd adv = returns;
  if (baseline == BaselineKind::linear) {
    const LinearBaseline b = fit_baseline(batch, returns, max_episode_len);
    for (Eigen::Index k = 0; k < adv.size(); ++k) {
      adv(k) -= b.predict(batch.states.col(k), batch.times[static_cast<std::size_t>(k)]);
    }
  }
  return normalize_result ? normalize(adv) : adv;
}

SurrogateValue surrogate_and_grad(const RolloutBatch& batch, const Policy& policy,
                                  const Eigen::VectorXd& advantages) {
  const auto n = static_cast<double>(batch.size());
  const auto acts = policy.forward_cached(batch.states);
  const double var = std::exp(2.0 * policy.log_std());
  const Eigen::MatrixXd diff = batch.actions - acts.mean();
  const Eigen::VectorXd ratio =
      (batch_log_probs(acts.mean(), policy.log_std(), batch.actions) - batch.log_probs)
          .array()
          .exp()
          .matrix();
  const Eigen::VectorXd weight = ratio.cwiseProduct(advantages) / n;

  SurrogateValue out;
  out.loss = weight.sum();
  out.grad = policy.vjp(acts, (diff * weight.asDiagonal()) / var);
  out.grad(policy.log_std_index()) =
      weight.dot((diff.colwise().squaredNorm().transpose() / var).array().matrix() -
                 Eigen::VectorXd::Constant(weight.size(), static_cast<double>(diff.rows())));
  return out;
}

namespace {

// At p = old the Hessian of mean_kl is block diagonal: J'J / (N sigma^2) for
// the network parameters (J the Jacobian of the means) and 2D for log_std.
Eigen::VectorXd kl_hessian_product(const Policy& policy, const Policy::Activations& acts,
                                   const Eigen::VectorXd& v, double damping) {
  const auto n = static_cast<double>(acts.mean().cols());
  const double var = std::exp(2.0 * policy.log_std());
  const Eigen::MatrixXd jv = policy.jvp(acts, v);
  Eigen::VectorXd hv = policy.vjp(acts, jv) / (var * n);
  const Eigen::Index ls = policy.log_std_index();
  hv(ls) = 2.0 * static_cast<double>(policy.output_dim()) * v(ls);
  return hv + damping * v;
}

}  // namespace

Eigen::VectorXd fisher_vector_product(const RolloutBatch& batch, const Policy& policy,
                                      const Eigen::VectorXd& v, double damping) {
  if (v.size() != policy.num_params()) throw InvalidArgument("FVP: vector size mismatch");
  if (batch.size() == 0) return damping * v;
  return kl_hessian_product(policy, policy.forward_cached(batch.states), v, damping);
}

SurrogateProblem::SurrogateProblem(const RolloutBatch& batch, Policy old_policy,
                                   Eigen::VectorXd advantages, bool learn_std)
    : batch_(batch),
      old_(std::move(old_policy)),
      advantages_(std::move(advantages)),
      learn_std_(learn_std) {
  if (advantages_.size() != batch_.size()) {
    throw InvalidArgument("advantages do not match the batch size");
  }
  acts_ = old_.forward_cached(batch_.states);
  SurrogateValue sv = surrogate_and_grad(batch_, old_, advantages_);
  old_loss_ = sv.loss;
  grad_ = std::move(sv.grad);
  if (!learn_std_) grad_(old_.log_std_index()) = 0.0;
}

double SurrogateProblem::loss(const Policy& candidate) const {
  const Eigen::MatrixXd mean = candidate.forward_batch(batch_.states);
  const Eigen::VectorXd ratio =
      (batch_log_probs(mean, candidate.log_std(), batch_.actions) - batch_.log_probs)
          .array()
          .exp()
          .matrix();
  return ratio.dot(advantages_) / static_cast<double>(batch_.size());
}

double SurrogateProblem::kl(const Policy& candidate) const {
  return mean_kl_from_means(acts_.mean(), old_.log_std(), candidate.forward_batch(batch_.states),
                            candidate.log_std());
}

Eigen::VectorXd SurrogateProblem::fisher_vector_product(const Eigen::VectorXd& v,
                                                        double damping) const {
  return kl_hessian_product(old_, acts_, v, damping);
}

LineSearchResult line_search(const SurrogateProblem& problem, const Eigen::VectorXd& direction,
                             double max_kl, int backtracks, double ratio, double damping) {
  const Policy& old = problem.old_policy();
  LineSearchResult result{old, false, 0.0, 0.0, backtracks};
  if (!direction.allFinite()) return result;
  const double shs = direction.dot(problem.fisher_vector_product(direction, damping));
  if (!(shs > 0.0)) return result;
  const Eigen::VectorXd full_step = std::sqrt(2.0 * max_kl / shs) * direction;

  Policy candidate = old;
  double frac = 1.0;
  for (int k = 0; k < backtracks; ++k, frac *= ratio) {
    candidate.set_params(old.params() + frac * full_step);
    const double improvement = problem.loss(candidate) - problem.old_loss();
    const double kl = problem.kl(candidate);
    if (std::isfinite(improvement) && std::isfinite(kl) && improvement > 0.0 && kl <= max_kl) {
      return {std::move(candidate), true, kl, improvement, k};
    }
  }
  return result;
}

std::string format_metrics_row(const IterationStats& s) {
  return std::to_string(s.iter) + ',' + format_real(s.mean_disc_return) + ',' +
         format_real(s.mean_return) + ',' + format_real(s.mean_ep_len) + ',' +
         std::to_string(s.near_collisions) + ',' + format_real(s.total_travel_time) + ',' +
         format_real(s.kl) + ',' + format_real(s.surrogate_improvement) + ',' +
         std::to_string(s.backtracks);
}

IterationStats train_iteration(Policy& policy, const Scenario& scenario,
                               const EnvConfig& env_config, const TrainConfig& tc, int iter) {
  const RolloutBatch batch =
      collect_rollouts(scenario, env_config, policy, tc.batch_steps,
                       derive_seed(tc.seed, static_cast<std::uint64_t>(iter) + 1), tc.workers);
  const Eigen::VectorXd returns = batch_returns(batch, env_config.gamma);
  Eigen::VectorXd adv = compute_advantages(batch, returns, tc.baseline, tc.normalize_advantages,
                                           env_config.max_episode_len);

  IterationStats stats;
  stats.iter = iter;
  const double episodes = batch.num_episodes();
  for (int e = 0; e < batch.num_episodes(); ++e) {
    const Eigen::Index start = batch.episode_starts[static_cast<std::size_t>(e)];
    stats.mean_disc_return += returns(start) / episodes;
    stats.mean_return += batch.rewards.segment(start, batch.episode_end(e) - start).sum() / episodes;
    stats.total_travel_time += batch.travel_times[static_cast<std::size_t>(e)] / episodes;
  }
  stats.mean_ep_len = static_cast<double>(batch.size()) / episodes;
  stats.near_collisions = batch.near_collisions();

  const SurrogateProblem problem(batch, policy, std::move(adv), tc.learn_std);
  const auto fvp = [&](const Eigen::VectorXd& v) {
    return problem.fisher_vector_product(v, tc.cg_damping);
  };
  const Eigen::VectorXd direction =
      conjugate_gradient<double>(fvp, problem.gradient(), tc.cg_iters, 1e-10);
  LineSearchResult ls =
      line_search(problem, direction, tc.kl_step, tc.backtracks, tc.backtrack_ratio, tc.cg_damping);
  stats.accepted = ls.accepted;
  stats.backtracks = ls.backtracks;
  if (ls.accepted) {
    stats.kl = ls.kl;
    stats.surrogate_improvement = ls.improvement;
    policy = std::move(ls.policy);
  }
  return stats;
}

TrainResult train(const Scenario& scenario, const EnvConfig& env_config,
                  const TrainConfig& tc, const std::filesystem::path& out_dir,
                  const IterationCallback& on_iteration) {
  scenario.validate();
  env_config.validate();
  tc.validate();
  std::filesystem::create_directories(out_dir);

  TrainResult result{init_policy<double>(scenario.num_vehicles(), tc.hidden, derive_seed(tc.seed, 0),
                                         tc.init_std.value_or(0.3 * env_config.a_max)),
                     {}};
  const auto metrics_path = out_dir / "metrics.csv";
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot open " + metrics_path.string() + " for writing");
  metrics << kMetricsHeader << '\n' << std::flush;

  for (int iter = 0; iter < tc.n_iterations; ++iter) {
    IterationStats stats = train_iteration(result.policy, scenario, env_config, tc, iter);
    metrics << format_metrics_row(stats) << '\n' << std::flush;
    if (!metrics) throw std::runtime_error("failed writing " + metrics_path.string());
    if (tc.checkpoint_every > 0 && (iter + 1) % tc.checkpoint_every == 0) {
      save_policy(result.policy, out_dir / ("policy_iter_" + std::to_string(iter) + ".bin"));
    }
    if (on_iteration) on_iteration(stats, result.policy);
    result.stats.push_back(stats);
  }
  save_policy(result.policy, out_dir / "policy_final.bin");
  return result;
}

}  // namespace gridflow
