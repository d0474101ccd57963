#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace gridflow {

using Vec2 = Eigen::Vector2d;

/// Rectangular street grid. Street centerlines sit at x = c * block_width and
/// y = r * block_height with r in [-rows/2, rows/2] and c in [-cols/2, cols/2]
/// (integer division).
struct GridLayout {
  int rows = 1;
  int cols = 1;
  double block_width = 1.0;
  double block_height = 1.0;
  double street_width = 0.2;
  double x_min = -0.1;
  double x_max = 0.1;
  double y_min = -0.1;
  double y_max = 0.1;

  /// Layout whose area limits extend half a street past the outermost centerlines.
  static GridLayout with_default_limits(int rows, int cols, double block_width,
                                        double block_height, double street_width);

  int max_row() const { return rows / 2; }
  int max_col() const { return cols / 2; }

  /// Throws InvalidArgument if any invariant fails.
  void validate() const;
};

struct EnvConfig {
  double gamma = 0.999;
  double alpha = 0.1;
  double eta = 0.05;
  double v_max = 0.8;
  double a_max = 30.0;
  double dt = 0.01;
  int max_episode_len = 200;
  double safe_radius = 0.02;
  double boundary_margin = 0.005;
  int resolve_iters = 10;

  void validate() const;
};

struct Route {
  int source_row = 0;
  int source_col = 0;
  int dest_row = 0;
  int dest_col = 0;

  bool operator==(const Route&) const = default;
};

struct Scenario {
  GridLayout layout;
  std::vector<Route> vehicles;

  int num_vehicles() const { return static_cast<int>(vehicles.size()); }
  Vec2 source(int i) const;
  Vec2 destination(int i) const;

  /// Checks the layout, index ranges and distinct source intersections.
  void validate() const;
};

/// Stacked per-vehicle (x, y, vx, vy) plus the step counter.
struct EnvState {
  Eigen::VectorXd values;
  int step = 0;

  int num_vehicles() const { return static_cast<int>(values.size() / 4); }
  Vec2 position(int i) const { return values.segment<2>(4 * i); }
  Vec2 velocity(int i) const { return values.segment<2>(4 * i + 2); }
  void set_position(int i, const Vec2& p) { values.segment<2>(4 * i) = p; }
  void set_velocity(int i, const Vec2& v) { values.segment<2>(4 * i + 2) = v; }

  bool operator==(const EnvState& other) const {
    return step == other.step && values.size() == other.values.size() &&
           values == other.values;
  }
};

/// Stacked per-vehicle (ax, ay).
using ActionVec = Eigen::VectorXd;

enum class VehicleEvent { none, boundary, pair };

const char* to_string(VehicleEvent event);

struct StepEvents {
  int boundary = 0;
  int pair = 0;
  // Pair overlap left after all resolution passes.
  bool unresolved = false;
  std::vector<VehicleEvent> per_vehicle;

  int near_collisions() const { return boundary + pair; }
};

struct StepResult {
  EnvState next_state;
  double reward = 0.0;
  bool done = false;
  bool truncated = false;
  StepEvents events;
};

/// Clamp to [lo, hi]. Throws InvalidArgument when lo > hi.
double saturate(double x, double lo, double hi);

Vec2 intersection_position(const GridLayout& layout, int row, int col);

/// True when the point lies within l/2 - R of some street centerline.
bool is_legal_position(const GridLayout& layout, double safe_radius, const Vec2& pos);

/// Nearest point whose corridor slack is at least `margin`. Ties prefer
/// vertical streets, then the smaller index.
Vec2 project_to_corridor(const GridLayout& layout, double safe_radius, double margin,
                         const Vec2& pos);

EnvState reset(const Scenario& scenario, const EnvConfig& config);

double reward(const EnvState& state, const Scenario& scenario, const EnvConfig& config);

bool is_terminal(const EnvState& state, const Scenario& scenario, const EnvConfig& config);

StepResult step(const EnvState& state, const ActionVec& action, const Scenario& scenario,
                const EnvConfig& config);

using PolicyCallback = std::function<ActionVec(const EnvState&)>;

struct Trajectory {
  std::vector<EnvState> states;    // length() + 1 entries
  std::vector<ActionVec> actions;  // as returned by the callback
  std::vector<double> rewards;
  std::vector<StepEvents> events;
  bool done = false;
  std::vector<double> travel_times;  // seconds, per vehicle

  int length() const { return static_cast<int>(rewards.size()); }
  int near_collisions() const;
  double total_travel_time() const;
};

/// Steps until the terminal state or `horizon` steps, ignoring the
/// max_episode_len truncation.
Trajectory run_episode(const Scenario& scenario, const EnvConfig& config,
                       const PolicyCallback& policy, int horizon);

/// dt * (first state index from which the vehicle stays within eta through the
/// end), or dt * horizon if it is not within eta at the end.
std::vector<double> travel_times(const std::vector<EnvState>& states, const Scenario& scenario,
                                 const EnvConfig& config, int horizon);

}  // namespace gridflow
