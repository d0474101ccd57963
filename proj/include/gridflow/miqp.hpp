#pragma once

#include "gridflow/env.hpp"
#include "gridflow/io.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gridflow {

enum class VarKind { continuous, integer, binary };
enum class Sense { le, ge, eq };
enum class ObjectiveSense { minimize, maximize };

struct Variable {
  std::string name;
  VarKind kind = VarKind::continuous;
  double lower = 0.0;
  double upper = 0.0;

  bool operator==(const Variable&) const = default;
};

struct LinearTerm {
  int var = 0;
  double coef = 0.0;

  bool operator==(const LinearTerm&) const = default;
};

/// coef * x[a] * x[b]
struct QuadraticTerm {
  int a = 0;
  int b = 0;
  double coef = 0.0;

  bool operator==(const QuadraticTerm&) const = default;
};

struct Constraint {
  std::string name;
  std::vector<LinearTerm> terms;
  Sense sense = Sense::le;
  double rhs = 0.0;

  bool operator==(const Constraint&) const = default;
};

/// Mixed-integer model of the intersection problem over a fixed horizon:
/// positions/velocities for t = 0..T-1, accelerations for t = 0..T-2, street
/// indices r/c, corridor binaries bx/by and pair binaries cx/cy/dx/dy.
struct MiqpModel {
  ObjectiveSense sense = ObjectiveSense::minimize;
  std::vector<Variable> variables;
  std::vector<LinearTerm> linear_objective;
  std::vector<QuadraticTerm> quadratic_objective;
  double objective_constant = 0.0;
  std::vector<Constraint> constraints;
  int n_vehicles = 0;
  int horizon = 0;
  double big_m = 0.0;

  /// Index of the named variable, or -1.
  int find(std::string_view name) const;
  int count(VarKind kind) const;
  /// Number of variables whose name starts with one of the given prefixes.
  int count_prefixed(std::initializer_list<std::string_view> prefixes) const;

  bool operator==(const MiqpModel&) const = default;
};

/// Bound on every coordinate-difference expression in the big-M rows:
/// (x_max - x_min) + (y_max - y_min) + 4R + l.
double big_m_lower_bound(const GridLayout& layout, double safe_radius);

/// 10 x big_m_lower_bound.
double default_big_m(const GridLayout& layout, double safe_radius);

/// Throws InvalidArgument naming the bound when big_m is too small.
MiqpModel build_miqp(const Scenario& scenario, const EnvConfig& config, int horizon,
                     double big_m, ObjectiveSense sense = ObjectiveSense::minimize);

/// CPLEX-style LP text. Metadata (vehicles, horizon, big-M, objective
/// constant) travels in a leading comment so parse_lp can rebuild the model.
std::string emit_lp(const MiqpModel& model);

/// Reads the subset of the LP format produced by emit_lp.
MiqpModel parse_lp(std::string_view text);

struct Violation {
  std::string family;
  int vehicle_i = -1;
  int vehicle_j = -1;
  int t = 0;
  double magnitude = 0.0;
};

/// Integer and binary assignment certifying the disjunctive constraints.
struct BinaryWitness {
  // Indexed [t * n + i].
  std::vector<int> row, col, bx, by;
  // Indexed [t * pairs + p] with pairs enumerated (i < j) in ascending order.
  std::vector<int> cx, cy, dx, dy;
};

struct CheckReport {
  std::vector<Violation> violations;
  std::optional<BinaryWitness> witness;

  bool ok() const { return violations.empty(); }
};

/// Box, dynamics, endpoint, 2-norm pair separation and corridor membership
/// checks of a trajectory against the scenario.
CheckReport check_geometric(const TrajectoryTable& traj, const Scenario& scenario,
                            const EnvConfig& config);

/// Builds binaries for the coordinate-disjunction and corridor-disjunction
/// families and verifies them against every big-M row.
CheckReport assign_binaries(const TrajectoryTable& traj, const Scenario& scenario,
                            const EnvConfig& config, double big_m);

/// `family,vehicle_i,vehicle_j,t,magnitude` with -1 for an absent vehicle.
std::string format_report_csv(const std::vector<Violation>& violations);

}  // namespace gridflow
