#pragma once

#include "gridflow/env.hpp"
#include "gridflow/trpo.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gridflow {

/// 17 significant digits, '.' decimal separator.
std::string format_real(double v);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// `key = value` lines; '#' starts a comment; blank lines ignored. Throws
/// FormatError carrying the 1-based line number.
std::vector<KeyValue> parse_key_values(std::string_view text);

/// Keys: rows, cols, block_width, block_height, street_width, optional
/// x_min/x_max/y_min/y_max, and `vehicle = s_r,s_c,d_r,d_c` per vehicle.
Scenario parse_scenario(std::string_view text);
/// Keys: gamma, alpha, eta, v_max, a_max, dt, max_episode_len, safe_radius,
/// boundary_margin (default 0.25 * safe_radius), resolve_iters.
EnvConfig parse_env_config(std::string_view text);
TrainConfig parse_train_config(std::string_view text);

std::string format_scenario(const Scenario& scenario);
std::string format_env_config(const EnvConfig& config);
std::string format_train_config(const TrainConfig& config);

Scenario load_scenario(const std::filesystem::path& path);
EnvConfig load_env_config(const std::filesystem::path& path);
TrainConfig load_train_config(const std::filesystem::path& path);

/// Rectangular per-step, per-vehicle table matching the trajectory CSV
/// `t,vehicle,x,y,vx,vy,ax,ay,event`.
struct TrajectoryTable {
  // One row per (t, vehicle): x, y, vx, vy, ax, ay.
  using Row = Eigen::Matrix<double, 6, 1>;

  int vehicles = 0;
  int steps = 0;
  std::vector<Row> rows;
  std::vector<VehicleEvent> events;

  TrajectoryTable() = default;
  TrajectoryTable(int n_vehicles, int n_steps);

  Row& at(int t, int i) { return rows[index(t, i)]; }
  const Row& at(int t, int i) const { return rows[index(t, i)]; }
  VehicleEvent& event(int t, int i) { return events[index(t, i)]; }
  VehicleEvent event(int t, int i) const { return events[index(t, i)]; }
  Vec2 position(int t, int i) const { return at(t, i).head<2>(); }

 private:
  std::size_t index(int t, int i) const {
    return static_cast<std::size_t>(t) * static_cast<std::size_t>(vehicles) +
           static_cast<std::size_t>(i);
  }
};

/// Accelerations are the effective ones, (v[t+1] - v[t]) / dt; the last step
/// carries zero acceleration. Event at t is the one raised by the step that
/// produced state t.
TrajectoryTable table_from_trajectory(const Trajectory& traj, const EnvConfig& config);

std::string format_trajectory_csv(const TrajectoryTable& table);
TrajectoryTable parse_trajectory_csv(std::string_view text);

}  // namespace gridflow
