#include "gridflow/env.hpp"

#include "gridflow/errors.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace gridflow {

namespace {

// Pair distances this close below 2R count as separated.
constexpr double kPairTolerance = 1e-12;

double corridor_half_width(const GridLayout& layout, double safe_radius) {
  return layout.street_width / 2.0 - safe_radius;
}

void check_index(const GridLayout& layout, int row, int col) {
  if (std::abs(row) > layout.max_row() || std::abs(col) > layout.max_col()) {
    throw InvalidArgument("intersection (" + std::to_string(row) + ", " + std::to_string(col) +
                          ") outside grid of " + std::to_string(layout.rows) + "x" +
                          std::to_string(layout.cols));
  }
}

Vec2 clamp_to_area(const GridLayout& layout, const Vec2& p) {
  return {saturate(p.x(), layout.x_min, layout.x_max), saturate(p.y(), layout.y_min, layout.y_max)};
}

}  // namespace

GridLayout GridLayout::with_default_limits(int rows, int cols, double block_width,
                                           double block_height, double street_width) {
  GridLayout g;
  g.rows = rows;
  g.cols = cols;
  g.block_width = block_width;
  g.block_height = block_height;
  g.street_width = street_width;
  g.x_max = (cols / 2) * block_width + street_width / 2.0;
  g.x_min = -g.x_max;
  g.y_max = (rows / 2) * block_height + street_width / 2.0;
  g.y_min = -g.y_max;
  return g;
}

void GridLayout::validate() const {
  if (rows < 1 || cols < 1) throw InvalidArgument("grid needs at least one row and column");
  if (!(street_width > 0.0)) throw InvalidArgument("street_width must be positive");
  if (block_width < street_width || block_height < street_width) {
    throw InvalidArgument("blocks must be at least as wide as the street");
  }
  if (x_min > -max_col() * block_width || x_max < max_col() * block_width ||
      y_min > -max_row() * block_height || y_max < max_row() * block_height) {
    throw InvalidArgument("area limits must enclose every intersection");
  }
}

void EnvConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidArgument("gamma must lie in (0, 1)");
  if (!(alpha > 0.0 && eta > 0.0 && v_max > 0.0 && a_max > 0.0 && dt > 0.0 &&
        safe_radius > 0.0)) {
    throw InvalidArgument("alpha, eta, v_max, a_max, dt and safe_radius must be positive");
  }
  if (!(boundary_margin > 0.0 && boundary_margin < safe_radius)) {
    throw InvalidArgument("boundary_margin must lie in (0, safe_radius)");
  }
  if (resolve_iters < 1) throw InvalidArgument("resolve_iters must be >= 1");
  if (max_episode_len < 1) throw InvalidArgument("max_episode_len must be >= 1");
}

Vec2 Scenario::source(int i) const {
  const Route& r = vehicles.at(static_cast<std::size_t>(i));
  return intersection_position(layout, r.source_row, r.source_col);
}

Vec2 Scenario::destination(int i) const {
  const Route& r = vehicles.at(static_cast<std::size_t>(i));
  return intersection_position(layout, r.dest_row, r.dest_col);
}

void Scenario::validate() const {
  layout.validate();
  if (vehicles.empty()) throw InvalidArgument("scenario needs at least one vehicle");
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const Route& r = vehicles[i];
    check_index(layout, r.source_row, r.source_col);
    check_index(layout, r.dest_row, r.dest_col);
    for (std::size_t j = 0; j < i; ++j) {
      if (vehicles[j].source_row == r.source_row && vehicles[j].source_col == r.source_col) {
        throw InvalidArgument("vehicles " + std::to_string(j) + " and " + std::to_string(i) +
                              " share a source intersection");
      }
    }
  }
}

const char* to_string(VehicleEvent event) {
  switch (event) {
    case VehicleEvent::boundary:
      return "boundary";
    case VehicleEvent::pair:
      return "pair";
    case VehicleEvent::none:
      break;
  }
  return "none";
}

double saturate(double x, double lo, double hi) {
  if (lo > hi) throw InvalidArgument("saturate: lower bound exceeds upper bound");
  if (x <= lo) return lo;
  if (x >= hi) return hi;
  return x;
}

Vec2 intersection_position(const GridLayout& layout, int row, int col) {
  check_index(layout, row, col);
  return {col * layout.block_width, row * layout.block_height};
}

bool is_legal_position(const GridLayout& layout, double safe_radius, const Vec2& pos) {
  const double half = corridor_half_width(layout, safe_radius);
  for (int c = -layout.max_col(); c <= layout.max_col(); ++c) {
    if (std::abs(pos.x() - c * layout.block_width) <= half) return true;
  }
  for (int r = -layout.max_row(); r <= layout.max_row(); ++r) {
    if (std::abs(pos.y() - r * layout.block_height) <= half) return true;
  }
  return false;
}

Vec2 project_to_corridor(const GridLayout& layout, double safe_radius, double margin,
                         const Vec2& pos) {
  const double half = corridor_half_width(layout, safe_radius) - margin;
  if (half < 0.0) {
    throw InvalidLayout("street too narrow for safe radius " + std::to_string(safe_radius) +
                        " and margin " + std::to_string(margin));
  }

  // Distance to a corridor of half-width `half` around `center` along one axis,
  // and the coordinate of the closest point in it.
  const auto nearest = [half](double v, double center) {
    const double offset = v - center;
    const double gap = std::abs(offset) - half;
    if (gap <= 0.0) return std::pair{0.0, v};
    return std::pair{gap, offset > 0.0 ? center + half : center - half};
  };

  double best = std::numeric_limits<double>::infinity();
  Vec2 out = pos;
  for (int c = -layout.max_col(); c <= layout.max_col(); ++c) {
    const auto [gap, x] = nearest(pos.x(), c * layout.block_width);
    if (gap < best) {
      best = gap;
      out = {x, pos.y()};
    }
  }
  for (int r = -layout.max_row(); r <= layout.max_row(); ++r) {
    const auto [gap, y] = nearest(pos.y(), r * layout.block_height);
    if (gap < best) {
      best = gap;
      out = {pos.x(), y};
    }
  }
  return clamp_to_area(layout, out);
}

EnvState reset(const Scenario& scenario, const EnvConfig& config) {
  scenario.validate();
  config.validate();
  EnvState s;
  s.values = Eigen::VectorXd::Zero(4 * scenario.num_vehicles());
  for (int i = 0; i < scenario.num_vehicles(); ++i) s.set_position(i, scenario.source(i));
  return s;
}

double reward(const EnvState& state, const Scenario& scenario, const EnvConfig& config) {
  double total = 0.0;
  bool arrived = true;
  for (int i = 0; i < state.num_vehicles(); ++i) {
    const double d = (state.position(i) - scenario.destination(i)).norm();
    arrived = arrived && d < config.eta;
    total += d;
  }
  return arrived ? 1.0 : -config.alpha * total;
}

bool is_terminal(const EnvState& state, const Scenario& scenario, const EnvConfig& config) {
  for (int i = 0; i < state.num_vehicles(); ++i) {
    if (!((state.position(i) - scenario.destination(i)).norm() < config.eta)) return false;
  }
  return true;
}

StepResult step(const EnvState& state, const ActionVec& action, const Scenario& scenario,
                const EnvConfig& config) {
  const int n = state.num_vehicles();
  if (action.size() != 2 * n) {
    throw InvalidArgument("action has " + std::to_string(action.size()) + " entries, expected " +
                          std::to_string(2 * n));
  }
  if (!action.allFinite()) throw InvalidArgument("action contains non-finite components");

  const GridLayout& g = scenario.layout;
  const double h = config.dt;
  const double R = config.safe_radius;

  StepResult out;
  out.events.per_vehicle.assign(static_cast<std::size_t>(n), VehicleEvent::none);
  EnvState& next = out.next_state;
  next.values.resize(4 * n);
  next.step = state.step + 1;

  for (int i = 0; i < n; ++i) {
    const Vec2 p = state.position(i);
    const Vec2 v = state.velocity(i);
    const double ax = saturate(action(2 * i), -config.a_max, config.a_max);
    const double ay = saturate(action(2 * i + 1), -config.a_max, config.a_max);
    next.set_position(i, {saturate(p.x() + h * v.x(), g.x_min, g.x_max),
                          saturate(p.y() + h * v.y(), g.y_min, g.y_max)});
    next.set_velocity(i, {saturate(v.x() + h * ax, -config.v_max, config.v_max),
                          saturate(v.y() + h * ay, -config.v_max, config.v_max)});
  }

  const auto stop_at_boundary = [&](int i) {
    if (is_legal_position(g, R, next.position(i))) return false;
    next.set_position(i, project_to_corridor(g, R, config.boundary_margin, next.position(i)));
    next.set_velocity(i, Vec2::Zero());
    out.events.per_vehicle[static_cast<std::size_t>(i)] = VehicleEvent::boundary;
    ++out.events.boundary;
    return true;
  };

  for (int i = 0; i < n; ++i) stop_at_boundary(i);

  std::vector<char> pair_hit(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0);
  std::vector<char> moved(static_cast<std::size_t>(n), 0);
  const double min_dist = 2.0 * R;
  for (int pass = 0; pass < config.resolve_iters; ++pass) {
    bool changed = false;
    std::fill(moved.begin(), moved.end(), 0);
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const Vec2 delta = next.position(j) - next.position(i);
        const double dist = delta.norm();
        if (dist >= min_dist - kPairTolerance) continue;
        const Vec2 dir = dist > 0.0 ? Vec2(delta / dist) : Vec2(1.0, 0.0);
        const double half_deficit = (min_dist - dist) / 2.0;
        next.set_position(i, next.position(i) - half_deficit * dir);
        next.set_position(j, next.position(j) + half_deficit * dir);
        next.set_velocity(i, Vec2::Zero());
        next.set_velocity(j, Vec2::Zero());
        out.events.per_vehicle[static_cast<std::size_t>(i)] = VehicleEvent::pair;
        out.events.per_vehicle[static_cast<std::size_t>(j)] = VehicleEvent::pair;
        char& hit = pair_hit[static_cast<std::size_t>(i * n + j)];
        if (!hit) ++out.events.pair;
        hit = 1;
        moved[static_cast<std::size_t>(i)] = 1;
        moved[static_cast<std::size_t>(j)] = 1;
        changed = true;
      }
    }
    if (!changed) break;
    // A push can leave the area or the corridor; re-stop those vehicles.
    for (int i = 0; i < n; ++i) {
      if (!moved[static_cast<std::size_t>(i)]) continue;
      next.set_position(i, clamp_to_area(g, next.position(i)));
      stop_at_boundary(i);
    }
  }
  for (int i = 0; i < n && !out.events.unresolved; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if ((next.position(j) - next.position(i)).norm() < min_dist - kPairTolerance) {
        out.events.unresolved = true;
        break;
      }
    }
  }

  out.reward = reward(next, scenario, config);
  out.done = is_terminal(next, scenario, config);
  out.truncated = !out.done && next.step >= config.max_episode_len;
  return out;
}

int Trajectory::near_collisions() const {
  int total = 0;
  for (const auto& e : events) total += e.near_collisions();
  return total;
}

double Trajectory::total_travel_time() const {
  double total = 0.0;
  for (double t : travel_times) total += t;
  return total;
}

std::vector<double> travel_times(const std::vector<EnvState>& states, const Scenario& scenario,
                                 const EnvConfig& config, int horizon) {
  const int n = scenario.num_vehicles();
  std::vector<double> out(static_cast<std::size_t>(n), config.dt * horizon);
  for (int i = 0; i < n; ++i) {
    const Vec2 dest = scenario.destination(i);
    int first = -1;
    for (int k = static_cast<int>(states.size()) - 1; k >= 0; --k) {
      if (!((states[static_cast<std::size_t>(k)].position(i) - dest).norm() < config.eta)) break;
      first = k;
    }
    if (first >= 0) out[static_cast<std::size_t>(i)] = config.dt * first;
  }
  return out;
}

Trajectory run_episode(const Scenario& scenario, const EnvConfig& config,
                       const PolicyCallback& policy, int horizon) {
  if (horizon < 1) throw InvalidArgument("horizon must be >= 1");
  Trajectory traj;
  traj.states.push_back(reset(scenario, config));
  for (int k = 0; k < horizon; ++k) {
    ActionVec a = policy(traj.states.back());
    StepResult r = step(traj.states.back(), a, scenario, config);
    traj.actions.push_back(std::move(a));
    traj.rewards.push_back(r.reward);
    traj.events.push_back(std::move(r.events));
    traj.states.push_back(std::move(r.next_state));
    if (r.done) {
      traj.done = true;
      break;
    }
  }
  traj.travel_times = travel_times(traj.states, scenario, config, horizon);
  return traj;
}

}  // namespace gridflow
