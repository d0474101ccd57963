#pragma once

#include "gridflow/env.hpp"
#include "gridflow/errors.hpp"
#include "gridflow/policy.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gridflow {

/// splitmix64 finalizer applied to base ^ splitmix64(stream). Training uses
/// stream 0 for the initial weights and stream k + 1 for iteration k's
/// rollouts; inside a batch, episode e uses derive_seed(batch_seed, e).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

enum class BaselineKind { linear, none };

struct TrainConfig {
  int batch_steps = 10000;
  int n_iterations = 300;
  double kl_step = 0.01;
  int cg_iters = 10;
  double cg_damping = 0.1;
  int backtracks = 10;
  double backtrack_ratio = 0.5;
  bool normalize_advantages = true;
  BaselineKind baseline = BaselineKind::linear;
  bool learn_std = true;
  // Unset means 0.3 * a_max.
  std::optional<double> init_std;
  std::vector<int> hidden{100, 100, 100};
  std::uint64_t seed = 0;
  int checkpoint_every = 50;
  int workers = 1;

  void validate() const;
};

/// Whole episodes laid out back to back; column k of `states`/`actions`
/// belongs to step `times[k]` of its episode.
struct RolloutBatch {
  Eigen::MatrixXd states;
  Eigen::MatrixXd actions;
  Eigen::VectorXd rewards;
  Eigen::VectorXd log_probs;
  std::vector<int> times;
  std::vector<Eigen::Index> episode_starts;
  std::vector<char> terminated;
  std::vector<double> travel_times;  // per episode, summed over vehicles
  long boundary_events = 0;
  long pair_events = 0;
  long unresolved_steps = 0;

  Eigen::Index size() const { return rewards.size(); }
  int num_episodes() const { return static_cast<int>(episode_starts.size()); }
  Eigen::Index episode_end(int e) const {
    return e + 1 < num_episodes() ? episode_starts[static_cast<std::size_t>(e) + 1] : size();
  }
  long near_collisions() const { return boundary_events + pair_events; }
};

/// Runs whole episodes (capped at max_episode_len) until at least
/// `batch_steps` steps are collected. The result does not depend on `workers`.
RolloutBatch collect_rollouts(const Scenario& scenario, const EnvConfig& config,
                              const Policy& policy, int batch_steps, std::uint64_t seed,
                              int workers = 1);

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);

/// Per-episode discounted returns for every step of the batch.
Eigen::VectorXd batch_returns(const RolloutBatch& batch, double gamma);

/// Ridge-regularised linear fit of returns on
/// [s, s*s, t/T, (t/T)^2, (t/T)^3, 1], refined by iterated Tikhonov passes so
/// that exactly representable returns are reproduced.
class LinearBaseline {
 public:
  static constexpr double kRidge = 1e-5;
  static constexpr int kRefinePasses = 20;

  LinearBaseline(int state_dim, int max_episode_len);

  Eigen::VectorXd features(const Eigen::Ref<const Eigen::VectorXd>& state, int t) const;
  void fit(const Eigen::MatrixXd& states, std::span<const int> times,
           const Eigen::VectorXd& returns);
  double predict(const Eigen::Ref<const Eigen::VectorXd>& state, int t) const;
  const Eigen::VectorXd& coefficients() const { return coef_; }

 private:
  int state_dim_;
  int max_episode_len_;
  Eigen::VectorXd coef_;
};

LinearBaseline fit_baseline(const RolloutBatch& batch, const Eigen::VectorXd& returns,
                            int max_episode_len);
double predict_baseline(const LinearBaseline& baseline, const Eigen::VectorXd& state, int t);

/// Shift to zero mean and scale to unit (population) standard deviation.
Eigen::VectorXd normalize(const Eigen::VectorXd& values);

Eigen::VectorXd compute_advantages(const RolloutBatch& batch, const Eigen::VectorXd& returns,
                                   BaselineKind baseline, bool normalize_result,
                                   int max_episode_len);

struct SurrogateValue {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

/// mean_t exp(log pi(a_t|s_t) - batch.log_probs[t]) * A_t and its exact
/// gradient with respect to the parameters of `policy`.
SurrogateValue surrogate_and_grad(const RolloutBatch& batch, const Policy& policy,
                                  const Eigen::VectorXd& advantages);

/// (H + damping I) v with H the Hessian of mean_kl(policy, p) at p = policy
/// over the batch states.
Eigen::VectorXd fisher_vector_product(const RolloutBatch& batch, const Policy& policy,
                                      const Eigen::VectorXd& v, double damping);

/// One trust-region update around a fixed snapshot of the collecting policy.
/// Caches the snapshot's activations so repeated Fisher products and
/// candidate evaluations reuse them.
class SurrogateProblem {
 public:
  SurrogateProblem(const RolloutBatch& batch, Policy old_policy, Eigen::VectorXd advantages,
                   bool learn_std = true);

  const Policy& old_policy() const { return old_; }
  double loss(const Policy& candidate) const;
  double old_loss() const { return old_loss_; }
  const Eigen::VectorXd& gradient() const { return grad_; }
  double kl(const Policy& candidate) const;
  Eigen::VectorXd fisher_vector_product(const Eigen::VectorXd& v, double damping) const;
  bool learn_std() const { return learn_std_; }

 private:
  const RolloutBatch& batch_;
  Policy old_;
  Eigen::VectorXd advantages_;
  bool learn_std_;
  Policy::Activations acts_;
  double old_loss_ = 0.0;
  Eigen::VectorXd grad_;
};

/// Solves A x = b for symmetric positive definite A given as a callable.
template <typename Scalar, typename ApplyA>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> conjugate_gradient(
    ApplyA&& apply_a, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& b, int iters, Scalar tol) {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Vector x = Vector::Zero(b.size());
  Vector r = b;
  Vector p = r;
  Scalar rr = r.squaredNorm();
  for (int i = 0; i < iters; ++i) {
    if (std::sqrt(rr) < tol) break;
    const Vector ap = apply_a(p);
    const Scalar alpha = rr / p.dot(ap);
    x += alpha * p;
    r -= alpha * ap;
    const Scalar rr_next = r.squaredNorm();
    if (!std::isfinite(alpha) || !std::isfinite(rr_next) || !x.allFinite()) {
      throw NumericError("conjugate gradient produced a non-finite iterate at step " +
                         std::to_string(i));
    }
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  return x;
}

struct LineSearchResult {
  Policy policy;
  bool accepted = false;
  double kl = 0.0;
  double improvement = 0.0;
  int backtracks = 0;
};

/// Scales `direction` to the trust-region boundary sqrt(2 delta / d'Hd) and
/// backtracks until the surrogate improves with mean KL <= delta.
LineSearchResult line_search(const SurrogateProblem& problem, const Eigen::VectorXd& direction,
                             double max_kl, int backtracks, double ratio, double damping);

struct IterationStats {
  int iter = 0;
  double mean_disc_return = 0.0;
  double mean_return = 0.0;
  double mean_ep_len = 0.0;
  long near_collisions = 0;
  double total_travel_time = 0.0;
  double kl = 0.0;
  double surrogate_improvement = 0.0;
  int backtracks = 0;
  bool accepted = false;
};

inline constexpr const char* kMetricsHeader =
    "iter,mean_disc_return,mean_return,mean_ep_len,near_collisions,total_travel_time,kl,"
    "surrogate_improvement,backtracks";

std::string format_metrics_row(const IterationStats& stats);

/// Runs one collect -> advantages -> CG -> line search iteration in place.
IterationStats train_iteration(Policy& policy, const Scenario& scenario,
                               const EnvConfig& env_config, const TrainConfig& train_config,
                               int iter);

struct TrainResult {
  Policy policy;
  std::vector<IterationStats> stats;
};

using IterationCallback = std::function<void(const IterationStats&, const Policy&)>;

/// Writes metrics.csv, policy_iter_<k>.bin every checkpoint_every iterations
/// and policy_final.bin into `out_dir`.
TrainResult train(const Scenario& scenario, const EnvConfig& env_config,
                  const TrainConfig& train_config, const std::filesystem::path& out_dir,
                  const IterationCallback& on_iteration = {});

}  // namespace gridflow
