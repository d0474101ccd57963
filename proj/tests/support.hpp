#pragma once

// Shared generators and independent reference implementations for the test
// binaries. Nothing here calls into the library code it is compared with.

#include "gridflow/env.hpp"
#include "gridflow/policy.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace gridflow::test {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// Unit blocks, l = 0.2, default area limits.
inline GridLayout unit_layout(int rows = 3, int cols = 3) {
  return GridLayout::with_default_limits(rows, cols, 1.0, 1.0, 0.2);
}

/// Random scenario with distinct sources on a small grid.
inline Scenario random_scenario(Rng& rng, int n_vehicles, int rows = 3, int cols = 3) {
  Scenario s;
  s.layout = unit_layout(rows, cols);
  std::vector<std::pair<int, int>> cells;
  for (int r = -s.layout.max_row(); r <= s.layout.max_row(); ++r) {
    for (int c = -s.layout.max_col(); c <= s.layout.max_col(); ++c) cells.emplace_back(r, c);
  }
  std::shuffle(cells.begin(), cells.end(), rng);
  for (int i = 0; i < n_vehicles; ++i) {
    const auto [sr, sc] = cells[static_cast<std::size_t>(i)];
    const auto& d = cells[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(cells.size()) - 1))];
    s.vehicles.push_back({sr, sc, d.first, d.second});
  }
  return s;
}

/// A point inside a random street corridor, optionally close to its edge.
inline Vec2 random_street_point(Rng& rng, const GridLayout& g, double half) {
  const bool vertical = uniform_int(rng, 0, 1) == 0;
  const double lateral = uniform(rng, -half, half);
  if (vertical) {
    const int c = uniform_int(rng, -g.max_col(), g.max_col());
    return {c * g.block_width + lateral, uniform(rng, g.y_min + 0.05, g.y_max - 0.05)};
  }
  const int r = uniform_int(rng, -g.max_row(), g.max_row());
  return {uniform(rng, g.x_min + 0.05, g.x_max - 0.05), r * g.block_height + lateral};
}

/// Legal random state; vehicles after the first are often placed within a
/// few radii of an earlier one so pair resolution gets exercised.
inline EnvState random_state(Rng& rng, const Scenario& s, const EnvConfig& cfg) {
  const int n = s.num_vehicles();
  const double half = s.layout.street_width / 2.0 - cfg.safe_radius;
  EnvState st;
  st.values.resize(4 * n);
  st.step = uniform_int(rng, 0, cfg.max_episode_len - 1);
  for (int i = 0; i < n; ++i) {
    Vec2 p = random_street_point(rng, s.layout, half);
    if (i > 0 && uniform_int(rng, 0, 2) == 0) {
      const Vec2 anchor = st.position(uniform_int(rng, 0, i - 1));
      const Vec2 candidate = anchor + Vec2(uniform(rng, -0.06, 0.06), uniform(rng, -0.06, 0.06));
      if (is_legal_position(s.layout, cfg.safe_radius, candidate)) p = candidate;
    }
    st.set_position(i, p);
    st.set_velocity(i, {uniform(rng, -cfg.v_max, cfg.v_max), uniform(rng, -cfg.v_max, cfg.v_max)});
  }
  return st;
}

inline ActionVec random_action(Rng& rng, int n, double scale) {
  ActionVec a(2 * n);
  for (int k = 0; k < 2 * n; ++k) a(k) = uniform(rng, -scale, scale);
  return a;
}

// ---------------------------------------------------------------------------
// Reference transition written from the rules directly, on plain arrays.

struct RefOutcome {
  std::vector<double> x, y, vx, vy;
  std::vector<int> event;  // 0 none, 1 boundary, 2 pair
  int boundary = 0;
  int pair = 0;
  bool unresolved = false;
  double reward = 0.0;
  bool done = false;
  bool truncated = false;
};

inline double ref_clip(double v, double lo, double hi) {
  return v <= lo ? lo : (v >= hi ? hi : v);
}

inline bool ref_legal(const GridLayout& g, double R, double x, double y) {
  const double half = g.street_width / 2.0 - R;
  for (int c = -(g.cols / 2); c <= g.cols / 2; ++c) {
    const double d = x - c * g.block_width;
    if ((d < 0 ? -d : d) <= half) return true;
  }
  for (int r = -(g.rows / 2); r <= g.rows / 2; ++r) {
    const double d = y - r * g.block_height;
    if ((d < 0 ? -d : d) <= half) return true;
  }
  return false;
}

// Closest point with slack `margin`, vertical corridors first, smallest index
// first, strict improvement required to replace a candidate.
inline void ref_project(const GridLayout& g, double R, double margin, double& x, double& y) {
  const double inner = (g.street_width / 2.0 - R) - margin;
  double best = 1e300;
  double bx = x, by = y;
  for (int c = -(g.cols / 2); c <= g.cols / 2; ++c) {
    const double center = c * g.block_width;
    const double off = x - center;
    const double gap = (off < 0 ? -off : off) - inner;
    const double cand = gap <= 0.0 ? x : (off > 0.0 ? center + inner : center - inner);
    const double score = gap <= 0.0 ? 0.0 : gap;
    if (score < best) {
      best = score;
      bx = cand;
      by = y;
    }
  }
  for (int r = -(g.rows / 2); r <= g.rows / 2; ++r) {
    const double center = r * g.block_height;
    const double off = y - center;
    const double gap = (off < 0 ? -off : off) - inner;
    const double cand = gap <= 0.0 ? y : (off > 0.0 ? center + inner : center - inner);
    const double score = gap <= 0.0 ? 0.0 : gap;
    if (score < best) {
      best = score;
      bx = x;
      by = cand;
    }
  }
  x = ref_clip(bx, g.x_min, g.x_max);
  y = ref_clip(by, g.y_min, g.y_max);
}

inline RefOutcome reference_step(const EnvState& state, const ActionVec& action,
                                 const Scenario& s, const EnvConfig& cfg) {
  const int n = static_cast<int>(state.values.size() / 4);
  const GridLayout& g = s.layout;
  const double R = cfg.safe_radius;
  const double h = cfg.dt;
  RefOutcome o;
  o.x.resize(static_cast<std::size_t>(n));
  o.y = o.vx = o.vy = o.x;
  o.event.assign(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    const double x = state.values[4 * i], y = state.values[4 * i + 1];
    const double vx = state.values[4 * i + 2], vy = state.values[4 * i + 3];
    const double ax = ref_clip(action[2 * i], -cfg.a_max, cfg.a_max);
    const double ay = ref_clip(action[2 * i + 1], -cfg.a_max, cfg.a_max);
    o.x[u] = ref_clip(x + h * vx, g.x_min, g.x_max);
    o.y[u] = ref_clip(y + h * vy, g.y_min, g.y_max);
    o.vx[u] = ref_clip(vx + h * ax, -cfg.v_max, cfg.v_max);
    o.vy[u] = ref_clip(vy + h * ay, -cfg.v_max, cfg.v_max);
  }
  auto boundary_stop = [&](std::size_t u) {
    if (ref_legal(g, R, o.x[u], o.y[u])) return;
    ref_project(g, R, cfg.boundary_margin, o.x[u], o.y[u]);
    o.vx[u] = o.vy[u] = 0.0;
    o.event[u] = 1;
    ++o.boundary;
  };
  for (int i = 0; i < n; ++i) boundary_stop(static_cast<std::size_t>(i));

  const double need = 2.0 * R;
  std::vector<std::vector<bool>> counted(static_cast<std::size_t>(n),
                                         std::vector<bool>(static_cast<std::size_t>(n), false));
  for (int pass = 0; pass < cfg.resolve_iters; ++pass) {
    std::vector<bool> touched(static_cast<std::size_t>(n), false);
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const auto a = static_cast<std::size_t>(i), b = static_cast<std::size_t>(j);
        const double dx = o.x[b] - o.x[a], dy = o.y[b] - o.y[a];
        const double d = std::sqrt(dx * dx + dy * dy);
        if (!(d < need - 1e-12)) continue;
        const double ux = d > 0.0 ? dx / d : 1.0;
        const double uy = d > 0.0 ? dy / d : 0.0;
        const double push = (need - d) / 2.0;
        o.x[a] = o.x[a] - push * ux;
        o.y[a] = o.y[a] - push * uy;
        o.x[b] = o.x[b] + push * ux;
        o.y[b] = o.y[b] + push * uy;
        o.vx[a] = o.vy[a] = o.vx[b] = o.vy[b] = 0.0;
        o.event[a] = o.event[b] = 2;
        if (!counted[a][b]) ++o.pair;
        counted[a][b] = true;
        touched[a] = touched[b] = true;
      }
    }
    bool any = false;
    for (int i = 0; i < n; ++i) any = any || touched[static_cast<std::size_t>(i)];
    if (!any) break;
    for (int i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      if (!touched[u]) continue;
      o.x[u] = ref_clip(o.x[u], g.x_min, g.x_max);
      o.y[u] = ref_clip(o.y[u], g.y_min, g.y_max);
      boundary_stop(u);
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const auto a = static_cast<std::size_t>(i), b = static_cast<std::size_t>(j);
      const double dx = o.x[b] - o.x[a], dy = o.y[b] - o.y[a];
      if (std::sqrt(dx * dx + dy * dy) < need - 1e-12) o.unresolved = true;
    }
  }

  double total = 0.0;
  bool all_in = true;
  for (int i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    const Route& rt = s.vehicles[u];
    const double ex = o.x[u] - rt.dest_col * g.block_width;
    const double ey = o.y[u] - rt.dest_row * g.block_height;
    const double d = std::sqrt(ex * ex + ey * ey);
    all_in = all_in && d < cfg.eta;
    total += d;
  }
  o.done = all_in;
  o.reward = all_in ? 1.0 : -cfg.alpha * total;
  o.truncated = !o.done && state.step + 1 >= cfg.max_episode_len;
  return o;
}

// ---------------------------------------------------------------------------
// Policy helpers.

inline Policy random_policy(Rng& rng, int in, const std::vector<int>& hidden, int out) {
  std::vector<int> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  Policy p(sizes);
  Eigen::VectorXd theta(p.num_params());
  for (Eigen::Index k = 0; k < theta.size(); ++k) theta(k) = uniform(rng, -0.8, 0.8);
  theta(p.log_std_index()) = uniform(rng, -0.5, 0.5);
  p.set_params(theta);
  return p;
}

/// Straight matrix arithmetic over the documented flat layout.
inline Eigen::VectorXd reference_forward(const Policy& p, const Eigen::VectorXd& s) {
  const auto& sizes = p.layer_sizes();
  const Eigen::VectorXd& th = p.params();
  Eigen::Index off = 0;
  Eigen::VectorXd h = s;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    const int in = sizes[k], out = sizes[k + 1];
    Eigen::VectorXd z(out);
    for (int r = 0; r < out; ++r) {
      double acc = 0.0;
      for (int c = 0; c < in; ++c) acc += th(off + r * in + c) * h(c);
      z(r) = acc + th(off + Eigen::Index{out} * in + r);
    }
    off += Eigen::Index{out} * (in + 1);
    h = k + 2 < sizes.size() ? Eigen::VectorXd(z.array().tanh()) : z;
  }
  return h;
}

/// Central differences of f around theta with step `eps`.
inline Eigen::VectorXd central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& theta, double eps) {
  Eigen::VectorXd g(theta.size());
  Eigen::VectorXd t = theta;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    t(k) = theta(k) + eps;
    const double up = f(t);
    t(k) = theta(k) - eps;
    const double down = f(t);
    t(k) = theta(k);
    g(k) = (up - down) / (2.0 * eps);
  }
  return g;
}

inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-300});
  return (a - b).norm() / scale;
}

}  // namespace gridflow::test
