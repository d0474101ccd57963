#include "gridflow/miqp.hpp"

#include "gridflow/errors.hpp"

#include <cmath>
#include <limits>

namespace gridflow {

namespace {

constexpr double kCheckTolerance = 1e-9;

std::string var_name(std::string_view prefix, int i, int t) {
  return std::string(prefix) + '_' + std::to_string(i) + '_' + std::to_string(t);
}

std::string pair_name(std::string_view prefix, int i, int j, int t) {
  return std::string(prefix) + '_' + std::to_string(i) + '_' + std::to_string(j) + '_' +
         std::to_string(t);
}

class ModelBuilder {
 public:
  explicit ModelBuilder(MiqpModel& model) : model_(model) {}

  int add(std::string name, VarKind kind, double lo, double hi) {
    model_.variables.push_back({std::move(name), kind, lo, hi});
    return static_cast<int>(model_.variables.size()) - 1;
  }

  void constrain(std::string name, std::vector<LinearTerm> terms, Sense sense, double rhs) {
    model_.constraints.push_back({std::move(name), std::move(terms), sense, rhs});
  }

 private:
  MiqpModel& model_;
};

// Index of the street centerline nearest to v; ties go to the smaller index.
int nearest_index(double v, double spacing, int max_index) {
  int best = -max_index;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int k = -max_index; k <= max_index; ++k) {
    const double d = std::abs(v - k * spacing);
    if (d < best_dist) {
      best_dist = d;
      best = k;
    }
  }
  return best;
}

void check_shape(const TrajectoryTable& traj, const Scenario& scenario) {
  if (traj.vehicles != scenario.num_vehicles()) {
    throw FormatError("trajectory has " + std::to_string(traj.vehicles) +
                      " vehicles, scenario has " + std::to_string(scenario.num_vehicles()));
  }
  if (traj.steps < 1 ||
      traj.rows.size() != static_cast<std::size_t>(traj.steps) * static_cast<std::size_t>(traj.vehicles) ||
      traj.events.size() != traj.rows.size()) {
    throw FormatError("trajectory table is not rectangular");
  }
}

}  // namespace

int MiqpModel::find(std::string_view name) const {
  for (std::size_t k = 0; k < variables.size(); ++k) {
    if (variables[k].name == name) return static_cast<int>(k);
  }
  return -1;
}

int MiqpModel::count(VarKind kind) const {
  int n = 0;
  for (const auto& v : variables) n += v.kind == kind ? 1 : 0;
  return n;
}

int MiqpModel::count_prefixed(std::initializer_list<std::string_view> prefixes) const {
  int n = 0;
  for (const auto& v : variables) {
    for (auto p : prefixes) {
      if (v.name.size() > p.size() && v.name.compare(0, p.size(), p) == 0 &&
          v.name[p.size()] == '_') {
        ++n;
        break;
      }
    }
  }
  return n;
}

double big_m_lower_bound(const GridLayout& layout, double safe_radius) {
  return (layout.x_max - layout.x_min) + (layout.y_max - layout.y_min) + 4.0 * safe_radius +
         layout.street_width;
}

double default_big_m(const GridLayout& layout, double safe_radius) {
  return 10.0 * big_m_lower_bound(layout, safe_radius);
}

MiqpModel build_miqp(const Scenario& scenario, const EnvConfig& config, int horizon,
                     double big_m, ObjectiveSense sense) {
  scenario.validate();
  config.validate();
  if (horizon < 2) throw InvalidArgument("MIQP horizon must be >= 2");
  const GridLayout& g = scenario.layout;
  const double bound = big_m_lower_bound(g, config.safe_radius);
  if (!(big_m >= bound)) {
    throw InvalidArgument("big-M " + std::to_string(big_m) + " is below big_m_lower_bound " +
                          std::to_string(bound));
  }

  MiqpModel m;
  m.sense = sense;
  m.n_vehicles = scenario.num_vehicles();
  m.horizon = horizon;
  m.big_m = big_m;
  ModelBuilder b(m);
  const int n = m.n_vehicles;
  const int T = horizon;
  const double vm = config.v_max;
  const double am = config.a_max;

  // Variable index tables, [i][t].
  const auto table = [&] {
    return std::vector<std::vector<int>>(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(T), -1));
  };
  auto x = table(), y = table(), vx = table(), vy = table(), ax = table(), ay = table();
  auto rr = table(), cc = table(), bx = table(), by = table();
  for (int i = 0; i < n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    for (int t = 0; t < T; ++t) {
      const auto st = static_cast<std::size_t>(t);
      x[si][st] = b.add(var_name("x", i, t), VarKind::continuous, g.x_min, g.x_max);
      y[si][st] = b.add(var_name("y", i, t), VarKind::continuous, g.y_min, g.y_max);
      vx[si][st] = b.add(var_name("vx", i, t), VarKind::continuous, -vm, vm);
      vy[si][st] = b.add(var_name("vy", i, t), VarKind::continuous, -vm, vm);
    }
    for (int t = 0; t + 1 < T; ++t) {
      const auto st = static_cast<std::size_t>(t);
      ax[si][st] = b.add(var_name("ax", i, t), VarKind::continuous, -am, am);
      ay[si][st] = b.add(var_name("ay", i, t), VarKind::continuous, -am, am);
    }
    for (int t = 0; t < T; ++t) {
      const auto st = static_cast<std::size_t>(t);
      rr[si][st] = b.add(var_name("r", i, t), VarKind::integer, -g.max_row(), g.max_row());
      cc[si][st] = b.add(var_name("c", i, t), VarKind::integer, -g.max_col(), g.max_col());
    }
    for (int t = 0; t < T; ++t) {
      const auto st = static_cast<std::size_t>(t);
      bx[si][st] = b.add(var_name("bx", i, t), VarKind::binary, 0, 1);
      by[si][st] = b.add(var_name("by", i, t), VarKind::binary, 0, 1);
    }
  }
  struct PairVars {
    int i, j;
    std::vector<int> cx, cy, dx, dy;
  };
  std::vector<PairVars> pairs;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      PairVars p{i, j, {}, {}, {}, {}};
      for (int t = 0; t < T; ++t) {
        p.cx.push_back(b.add(pair_name("cx", i, j, t), VarKind::binary, 0, 1));
        p.cy.push_back(b.add(pair_name("cy", i, j, t), VarKind::binary, 0, 1));
        p.dx.push_back(b.add(pair_name("dx", i, j, t), VarKind::binary, 0, 1));
        p.dy.push_back(b.add(pair_name("dy", i, j, t), VarKind::binary, 0, 1));
      }
      pairs.push_back(std::move(p));
    }
  }

  // Sum over t, i of (x - dx)^2 + (y - dy)^2, expanded.
  for (int i = 0; i < n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    const Vec2 d = scenario.destination(i);
    for (int t = 0; t < T; ++t) {
      const auto st = static_cast<std::size_t>(t);
      m.quadratic_objective.push_back({x[si][st], x[si][st], 1.0});
      m.quadratic_objective.push_back({y[si][st], y[si][st], 1.0});
      if (d.x() != 0.0) m.linear_objective.push_back({x[si][st], -2.0 * d.x()});
      if (d.y() != 0.0) m.linear_objective.push_back({y[si][st], -2.0 * d.y()});
      m.objective_constant += d.squaredNorm();
    }
  }

  for (int i = 0; i < n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    const auto last = static_cast<std::size_t>(T - 1);
    const Vec2 s = scenario.source(i);
    const Vec2 d = scenario.destination(i);
    b.constrain("start_x_" + std::to_string(i), {{x[si][0], 1.0}}, Sense::eq, s.x());
    b.constrain("start_y_" + std::to_string(i), {{y[si][0], 1.0}}, Sense::eq, s.y());
    b.constrain("end_x_" + std::to_string(i), {{x[si][last], 1.0}}, Sense::eq, d.x());
    b.constrain("end_y_" + std::to_string(i), {{y[si][last], 1.0}}, Sense::eq, d.y());
    b.constrain("start_vx_" + std::to_string(i), {{vx[si][0], 1.0}}, Sense::eq, 0.0);
    b.constrain("start_vy_" + std::to_string(i), {{vy[si][0], 1.0}}, Sense::eq, 0.0);
  }

  const double h = config.dt;
  for (int i = 0; i < n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    for (int t = 0; t + 1 < T; ++t) {
      const auto st = static_cast<std::size_t>(t);
      b.constrain(var_name("dyn_x", i, t), {{x[si][st + 1], 1.0}, {x[si][st], -1.0}, {vx[si][st], -h}},
                  Sense::eq, 0.0);
      b.constrain(var_name("dyn_y", i, t), {{y[si][st + 1], 1.0}, {y[si][st], -1.0}, {vy[si][st], -h}},
                  Sense::eq, 0.0);
      b.constrain(var_name("dyn_vx", i, t),
                  {{vx[si][st + 1], 1.0}, {vx[si][st], -1.0}, {ax[si][st], -h}}, Sense::eq, 0.0);
      b.constrain(var_name("dyn_vy", i, t),
                  {{vy[si][st + 1], 1.0}, {vy[si][st], -1.0}, {ay[si][st], -h}}, Sense::eq, 0.0);
    }
  }

  // x - c*bw <= half*bx + M(1 - bx)  ->  x - bw*c + (M - half) bx <= M, etc.
  const double half = g.street_width / 2.0 - config.safe_radius;
  const double M = big_m;
  for (int i = 0; i < n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    for (int t = 0; t < T; ++t) {
      const auto st = static_cast<std::size_t>(t);
      b.constrain(var_name("corr_xu", i, t),
                  {{x[si][st], 1.0}, {cc[si][st], -g.block_width}, {bx[si][st], M - half}},
                  Sense::le, M);
      b.constrain(var_name("corr_xl", i, t),
                  {{x[si][st], 1.0}, {cc[si][st], -g.block_width}, {bx[si][st], half - M}},
                  Sense::ge, -M);
      b.constrain(var_name("corr_yu", i, t),
                  {{y[si][st], 1.0}, {rr[si][st], -g.block_height}, {by[si][st], M - half}},
                  Sense::le, M);
      b.constrain(var_name("corr_yl", i, t),
                  {{y[si][st], 1.0}, {rr[si][st], -g.block_height}, {by[si][st], half - M}},
                  Sense::ge, -M);
      b.constrain(var_name("corr_or", i, t), {{bx[si][st], 1.0}, {by[si][st], 1.0}}, Sense::ge,
                  1.0);
    }
  }

  // x_i - x_j >= 2R cx - M(1 - cx)  ->  x_i - x_j - (2R + M) cx >= -M, etc.
  const double sep = 2.0 * config.safe_radius;
  for (const auto& p : pairs) {
    const auto si = static_cast<std::size_t>(p.i);
    const auto sj = static_cast<std::size_t>(p.j);
    for (int t = 0; t < T; ++t) {
      const auto st = static_cast<std::size_t>(t);
      b.constrain(pair_name("pair_or", p.i, p.j, t),
                  {{p.cx[st], 1.0}, {p.cy[st], 1.0}, {p.dx[st], 1.0}, {p.dy[st], 1.0}}, Sense::ge,
                  1.0);
      b.constrain(pair_name("pair_cx", p.i, p.j, t),
                  {{x[si][st], 1.0}, {x[sj][st], -1.0}, {p.cx[st], -(sep + M)}}, Sense::ge, -M);
      b.constrain(pair_name("pair_dx", p.i, p.j, t),
                  {{x[si][st], 1.0}, {x[sj][st], -1.0}, {p.dx[st], sep + M}}, Sense::le, M);
      b.constrain(pair_name("pair_cy", p.i, p.j, t),
                  {{y[si][st], 1.0}, {y[sj][st], -1.0}, {p.cy[st], -(sep + M)}}, Sense::ge, -M);
      b.constrain(pair_name("pair_dy", p.i, p.j, t),
                  {{y[si][st], 1.0}, {y[sj][st], -1.0}, {p.dy[st], sep + M}}, Sense::le, M);
    }
  }
  return m;
}

CheckReport check_geometric(const TrajectoryTable& traj, const Scenario& scenario,
                            const EnvConfig& config) {
  check_shape(traj, scenario);
  const GridLayout& g = scenario.layout;
  const int n = traj.vehicles;
  const int T = traj.steps;
  const double h = config.dt;
  CheckReport report;
  const auto flag = [&](const char* family, int i, int j, int t, double magnitude) {
    report.violations.push_back({family, i, j, t, magnitude});
  };
  const auto excess = [](double v, double lo, double hi) {
    return std::max(lo - v, v - hi);
  };

  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < n; ++i) {
      const auto& r = traj.at(t, i);
      double worst = std::max({excess(r(0), g.x_min, g.x_max), excess(r(1), g.y_min, g.y_max),
                               excess(r(2), -config.v_max, config.v_max),
                               excess(r(3), -config.v_max, config.v_max)});
      if (t + 1 < T) {
        worst = std::max({worst, excess(r(4), -config.a_max, config.a_max),
                          excess(r(5), -config.a_max, config.a_max)});
      }
      if (worst > kCheckTolerance) flag("box", i, -1, t, worst);

      if (t + 1 < T) {
        const auto& next = traj.at(t + 1, i);
        const double residual = std::max({std::abs(next(0) - r(0) - h * r(2)),
                                          std::abs(next(1) - r(1) - h * r(3)),
                                          std::abs(next(2) - r(2) - h * r(4)),
                                          std::abs(next(3) - r(3) - h * r(5))});
        if (residual > kCheckTolerance) flag("dynamics", i, -1, t, residual);
      }
    }
  }

  for (int i = 0; i < n; ++i) {
    const auto& first = traj.at(0, i);
    const Vec2 s = scenario.source(i);
    const double start = std::max({std::abs(first(0) - s.x()), std::abs(first(1) - s.y()),
                                   std::abs(first(2)), std::abs(first(3))});
    if (start > kCheckTolerance) flag("endpoint", i, -1, 0, start);
    const double miss = (traj.position(T - 1, i) - scenario.destination(i)).norm();
    if (!(miss < config.eta)) flag("endpoint", i, -1, T - 1, miss - config.eta);
  }

  const double sep_sq = 4.0 * config.safe_radius * config.safe_radius;
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const double d_sq = (traj.position(t, i) - traj.position(t, j)).squaredNorm();
        if (sep_sq - d_sq > kCheckTolerance * config.safe_radius) {
          flag("pair", i, j, t, sep_sq - d_sq);
        }
      }
    }
  }

  const double half = g.street_width / 2.0 - config.safe_radius;
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < n; ++i) {
      const Vec2 p = traj.position(t, i);
      const int c = nearest_index(p.x(), g.block_width, g.max_col());
      const int r = nearest_index(p.y(), g.block_height, g.max_row());
      const double gap = std::min(std::abs(p.x() - c * g.block_width),
                                  std::abs(p.y() - r * g.block_height)) - half;
      if (gap > kCheckTolerance) flag("corridor", i, -1, t, gap);
    }
  }
  return report;
}

CheckReport assign_binaries(const TrajectoryTable& traj, const Scenario& scenario,
                            const EnvConfig& config, double big_m) {
  check_shape(traj, scenario);
  const GridLayout& g = scenario.layout;
  const int n = traj.vehicles;
  const int T = traj.steps;
  const int n_pairs = n * (n - 1) / 2;
  const double R2 = 2.0 * config.safe_radius;
  const double half = g.street_width / 2.0 - config.safe_radius;
  const double M = big_m;

  CheckReport report;
  BinaryWitness w;
  const auto cells = static_cast<std::size_t>(T) * static_cast<std::size_t>(n);
  const auto pair_cells = static_cast<std::size_t>(T) * static_cast<std::size_t>(n_pairs);
  w.row.assign(cells, 0);
  w.col.assign(cells, 0);
  w.bx.assign(cells, 0);
  w.by.assign(cells, 0);
  w.cx.assign(pair_cells, 0);
  w.cy.assign(pair_cells, 0);
  w.dx.assign(pair_cells, 0);
  w.dy.assign(pair_cells, 0);

  // Literal big-M rows with tolerance; a failure means the witness is wrong.
  const auto verify = [&](bool holds, const char* what, int i, int j, int t) {
    if (!holds) report.violations.push_back({std::string("big_m_") + what, i, j, t, 0.0});
  };
  const double tol = kCheckTolerance;

  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(t) * static_cast<std::size_t>(n) + static_cast<std::size_t>(i);
      const Vec2 p = traj.position(t, i);
      const int c = nearest_index(p.x(), g.block_width, g.max_col());
      const int r = nearest_index(p.y(), g.block_height, g.max_row());
      const double ex = p.x() - c * g.block_width;
      const double ey = p.y() - r * g.block_height;
      w.col[k] = c;
      w.row[k] = r;
      // Same slack as the literal row check below, so boundary cases agree.
      w.bx[k] = std::abs(ex) <= half + tol ? 1 : 0;
      w.by[k] = std::abs(ey) <= half + tol ? 1 : 0;
      if (w.bx[k] + w.by[k] < 1) {
        report.violations.push_back(
            {"corridor_disjunction", i, -1, t, std::min(std::abs(ex), std::abs(ey)) - half});
        continue;
      }
      const double bxv = w.bx[k];
      const double byv = w.by[k];
      verify(ex <= half * bxv + M * (1 - bxv) + tol, "corridor", i, -1, t);
      verify(ex >= -half * bxv - M * (1 - bxv) - tol, "corridor", i, -1, t);
      verify(ey <= half * byv + M * (1 - byv) + tol, "corridor", i, -1, t);
      verify(ey >= -half * byv - M * (1 - byv) - tol, "corridor", i, -1, t);
    }

    int p_idx = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j, ++p_idx) {
        const auto k = static_cast<std::size_t>(t) * static_cast<std::size_t>(n_pairs) + static_cast<std::size_t>(p_idx);
        const double dx = traj.position(t, i).x() - traj.position(t, j).x();
        const double dy = traj.position(t, i).y() - traj.position(t, j).y();
        w.cx[k] = dx >= R2 - tol ? 1 : 0;
        w.dx[k] = dx <= -R2 + tol ? 1 : 0;
        w.cy[k] = dy >= R2 - tol ? 1 : 0;
        w.dy[k] = dy <= -R2 + tol ? 1 : 0;
        if (w.cx[k] + w.dx[k] + w.cy[k] + w.dy[k] < 1) {
          report.violations.push_back(
              {"pair_disjunction", i, j, t, R2 - std::max(std::abs(dx), std::abs(dy))});
          continue;
        }
        const double cxv = w.cx[k], dxv = w.dx[k], cyv = w.cy[k], dyv = w.dy[k];
        verify(dx >= R2 * cxv - M * (1 - cxv) - tol, "pair", i, j, t);
        verify(dx <= -R2 * dxv + M * (1 - dxv) + tol, "pair", i, j, t);
        verify(dy >= R2 * cyv - M * (1 - cyv) - tol, "pair", i, j, t);
        verify(dy <= -R2 * dyv + M * (1 - dyv) + tol, "pair", i, j, t);
      }
    }
  }
  if (report.violations.empty()) report.witness = std::move(w);
  return report;
}

std::string format_report_csv(const std::vector<Violation>& violations) {
  std::string out = "family,vehicle_i,vehicle_j,t,magnitude\n";
  for (const auto& v : violations) {
    out += v.family + ',' + std::to_string(v.vehicle_i) + ',' + std::to_string(v.vehicle_j) +
           ',' + std::to_string(v.t) + ',' + format_real(v.magnitude) + '\n';
  }
  return out;
}

}  // namespace gridflow
