#pragma once

#include "gridflow/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace gridflow {

/// Multilayer perceptron with tanh hidden layers and a linear output layer
/// producing the mean of a diagonal Gaussian whose elements share one
/// learnable log standard deviation.
///
/// All parameters live in one flat vector, ordered layer by layer: the weight
/// matrix in row-major order, then the bias vector; log_std is the last entry.
template <typename Scalar>
class GaussianMlpPolicy {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using WeightMap = Eigen::Map<RowMatrix>;
  using ConstWeightMap = Eigen::Map<const RowMatrix>;
  using BiasMap = Eigen::Map<Vector>;
  using ConstBiasMap = Eigen::Map<const Vector>;

  /// Per-layer outputs of a batched forward pass; layers[0] is the input
  /// batch (one column per sample), layers.back() the mean actions.
  struct Activations {
    std::vector<Matrix> layers;
    const Matrix& mean() const { return layers.back(); }
  };

  /// All parameters zero (log_std = 0). `layer_sizes` lists input, hidden and
  /// output widths.
  explicit GaussianMlpPolicy(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
    if (sizes_.size() < 2) throw InvalidArgument("policy needs input and output widths");
    Eigen::Index offset = 0;
    for (std::size_t k = 0; k + 1 < sizes_.size(); ++k) {
      if (sizes_[k] < 1 || sizes_[k + 1] < 1) throw InvalidArgument("layer widths must be >= 1");
      offsets_.push_back(offset);
      offset += Eigen::Index{sizes_[k + 1]} * (sizes_[k] + 1);
    }
    params_ = Vector::Zero(offset + 1);
  }

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  Eigen::Index num_params() const { return params_.size(); }
  Eigen::Index log_std_index() const { return params_.size() - 1; }

  const Vector& params() const { return params_; }
  void set_params(const Vector& p) {
    if (p.size() != params_.size()) {
      throw InvalidArgument("parameter vector has " + std::to_string(p.size()) +
                            " entries, expected " + std::to_string(params_.size()));
    }
    params_ = p;
  }

  Scalar log_std() const { return params_(log_std_index()); }
  void set_log_std(Scalar v) { params_(log_std_index()) = v; }

  Eigen::Index weight_offset(int k) const { return offsets_[static_cast<std::size_t>(k)]; }
  Eigen::Index bias_offset(int k) const { return weight_offset(k) + rows(k) * cols(k); }

  ConstWeightMap weight(int k) const {
    return ConstWeightMap(params_.data() + weight_offset(k), rows(k), cols(k));
  }
  WeightMap weight(int k) { return WeightMap(params_.data() + weight_offset(k), rows(k), cols(k)); }
  ConstBiasMap bias(int k) const { return ConstBiasMap(params_.data() + bias_offset(k), rows(k)); }
  BiasMap bias(int k) { return BiasMap(params_.data() + bias_offset(k), rows(k)); }

  bool same_architecture(const GaussianMlpPolicy& other) const { return sizes_ == other.sizes_; }

  /// Mean action for one state.
  Vector forward(const Eigen::Ref<const Vector>& state) const {
    check_input(state.size());
    Vector h = state;
    for (int k = 0; k < num_layers(); ++k) {
      Vector z = bias(k);
      z.noalias() += weight(k) * h;
      if (k + 1 == num_layers()) return z;
      h = z.array().tanh().matrix();
    }
    return h;
  }

  /// Mean actions for a batch of states stored column-wise.
  Matrix forward_batch(const Eigen::Ref<const Matrix>& states) const {
    check_input(states.rows());
    Matrix h = states;
    for (int k = 0; k < num_layers(); ++k) {
      Matrix z = weight(k) * h;
      z.colwise() += bias(k);
      if (k + 1 == num_layers()) return z;
      h = z.array().tanh().matrix();
    }
    return h;
  }

  Activations forward_cached(const Eigen::Ref<const Matrix>& states) const {
    check_input(states.rows());
    Activations acts;
    acts.layers.reserve(sizes_.size());
    acts.layers.emplace_back(states);
    for (int k = 0; k < num_layers(); ++k) {
      Matrix z = weight(k) * acts.layers.back();
      z.colwise() += bias(k);
      if (k + 1 < num_layers()) z = z.array().tanh().matrix();
      acts.layers.push_back(std::move(z));
    }
    return acts;
  }

  /// Gradient of sum_j <grad_mean.col(j), mean.col(j)> with respect to the
  /// flat parameters (log_std entry left at zero).
  Vector vjp(const Activations& acts, const Eigen::Ref<const Matrix>& grad_mean) const {
    Vector grad = Vector::Zero(num_params());
    Matrix g = grad_mean;
    for (int k = num_layers() - 1; k >= 0; --k) {
      const Matrix& input = acts.layers[static_cast<std::size_t>(k)];
      WeightMap(grad.data() + weight_offset(k), rows(k), cols(k)).noalias() =
          g * input.transpose();
      BiasMap(grad.data() + bias_offset(k), rows(k)) = g.rowwise().sum();
      if (k == 0) break;
      Matrix back = weight(k).transpose() * g;
      g = back.cwiseProduct((Scalar(1) - input.array().square()).matrix());
    }
    return grad;
  }

  /// Directional derivative of the batched mean along a flat parameter
  /// direction (the log_std entry does not affect the mean).
  Matrix jvp(const Activations& acts, const Eigen::Ref<const Vector>& direction) const {
    Matrix dh;
    for (int k = 0; k < num_layers(); ++k) {
      const ConstWeightMap dw(direction.data() + weight_offset(k), rows(k), cols(k));
      const ConstBiasMap db(direction.data() + bias_offset(k), rows(k));
      Matrix dz = dw * acts.layers[static_cast<std::size_t>(k)];
      if (k > 0) dz.noalias() += weight(k) * dh;
      dz.colwise() += db;
      if (k + 1 == num_layers()) return dz;
      const Matrix& h = acts.layers[static_cast<std::size_t>(k) + 1];
      dh = dz.cwiseProduct((Scalar(1) - h.array().square()).matrix());
    }
    return dh;
  }

 private:
  Eigen::Index rows(int k) const { return sizes_[static_cast<std::size_t>(k) + 1]; }
  Eigen::Index cols(int k) const { return sizes_[static_cast<std::size_t>(k)]; }

  void check_input(Eigen::Index n) const {
    if (n != input_dim()) {
      throw InvalidArgument("state has " + std::to_string(n) + " entries, policy expects " +
                            std::to_string(input_dim()));
    }
  }

  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  Vector params_;
};

using Policy = GaussianMlpPolicy<double>;

/// Layer widths for n vehicles: 4n inputs, the given hidden widths, 2n outputs.
inline std::vector<int> policy_layer_sizes(int n_vehicles, const std::vector<int>& hidden) {
  if (n_vehicles < 1) throw InvalidArgument("policy needs at least one vehicle");
  std::vector<int> sizes{4 * n_vehicles};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(2 * n_vehicles);
  return sizes;
}

/// Weights uniform in +-1/sqrt(fan_in), output layer scaled by 0.01, zero
/// biases, log_std = ln(init_std).
template <typename Scalar = double>
GaussianMlpPolicy<Scalar> init_policy(int n_vehicles, const std::vector<int>& hidden,
                                      std::uint64_t seed, Scalar init_std) {
  if (!(init_std > Scalar(0))) throw InvalidArgument("init_std must be positive");
  GaussianMlpPolicy<Scalar> p(policy_layer_sizes(n_vehicles, hidden));
  std::mt19937_64 rng(seed);
  for (int k = 0; k < p.num_layers(); ++k) {
    auto w = p.weight(k);
    const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(w.cols()));
    const Scalar scale = k + 1 == p.num_layers() ? Scalar(0.01) : Scalar(1);
    std::uniform_real_distribution<Scalar> dist(-bound, bound);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = scale * dist(rng);
    }
  }
  p.set_log_std(std::log(init_std));
  return p;
}

template <typename Derived, typename Rng>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> sample_action(
    const Eigen::MatrixBase<Derived>& mean, typename Derived::Scalar log_std, Rng& rng) {
  using Scalar = typename Derived::Scalar;
  std::normal_distribution<Scalar> normal;
  const Scalar sigma = std::exp(log_std);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> a(mean.size());
  for (Eigen::Index d = 0; d < a.size(); ++d) a(d) = mean(d) + sigma * normal(rng);
  return a;
}

template <typename DerivedMean, typename DerivedAction>
typename DerivedMean::Scalar log_prob(const Eigen::MatrixBase<DerivedMean>& mean,
                                      typename DerivedMean::Scalar log_std,
                                      const Eigen::MatrixBase<DerivedAction>& action) {
  using Scalar = typename DerivedMean::Scalar;
  const Scalar var = std::exp(Scalar(2) * log_std);
  const auto dim = static_cast<Scalar>(action.size());
  return -(action - mean).squaredNorm() / (Scalar(2) * var) - dim * log_std -
         dim / Scalar(2) * std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
}

/// Exact gradient of log pi(action | state) with respect to every parameter.
template <typename Scalar>
typename GaussianMlpPolicy<Scalar>::Vector grad_log_prob(
    const GaussianMlpPolicy<Scalar>& policy,
    const Eigen::Ref<const typename GaussianMlpPolicy<Scalar>::Vector>& state,
    const Eigen::Ref<const typename GaussianMlpPolicy<Scalar>::Vector>& action) {
  using Matrix = typename GaussianMlpPolicy<Scalar>::Matrix;
  if (action.size() != policy.output_dim()) throw InvalidArgument("action dimension mismatch");
  const auto acts = policy.forward_cached(Matrix(state));
  const Matrix diff = Matrix(action) - acts.mean();
  const Scalar var = std::exp(Scalar(2) * policy.log_std());
  auto grad = policy.vjp(acts, diff / var);
  grad(policy.log_std_index()) = diff.squaredNorm() / var - static_cast<Scalar>(action.size());
  return grad;
}

/// Mean over columns of KL(old || new) given the two batches of means.
template <typename DerivedOld, typename DerivedNew>
typename DerivedOld::Scalar mean_kl_from_means(const Eigen::MatrixBase<DerivedOld>& mu_old,
                                               typename DerivedOld::Scalar ls_old,
                                               const Eigen::MatrixBase<DerivedNew>& mu_new,
                                               typename DerivedOld::Scalar ls_new) {
  using Scalar = typename DerivedOld::Scalar;
  if (mu_old.cols() == 0) return Scalar(0);
  const Scalar var_old = std::exp(Scalar(2) * ls_old);
  const Scalar var_new = std::exp(Scalar(2) * ls_new);
  const auto dim = static_cast<Scalar>(mu_old.rows());
  const Scalar per_state =
      dim * (ls_new - ls_old + var_old / (Scalar(2) * var_new) - Scalar(0.5));
  const Scalar mean_sq = (mu_old - mu_new).squaredNorm() / static_cast<Scalar>(mu_old.cols());
  // Rounding can leave a tiny negative value for nearly identical policies.
  return std::max(Scalar(0), per_state + mean_sq / (Scalar(2) * var_new));
}

/// Mean over the columns of `states` of KL(old || new) between the two
/// diagonal Gaussians.
template <typename Scalar>
Scalar mean_kl(const GaussianMlpPolicy<Scalar>& old_policy,
               const GaussianMlpPolicy<Scalar>& new_policy,
               const Eigen::Ref<const typename GaussianMlpPolicy<Scalar>::Matrix>& states) {
  if (!old_policy.same_architecture(new_policy)) {
    throw InvalidArgument("mean_kl: policies have different architectures");
  }
  return mean_kl_from_means(old_policy.forward_batch(states), old_policy.log_std(),
                            new_policy.forward_batch(states), new_policy.log_std());
}

}  // namespace gridflow
