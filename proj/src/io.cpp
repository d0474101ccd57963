#include "gridflow/io.hpp"

#include "gridflow/errors.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace gridflow {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double to_real(std::string_view text, std::size_t line, std::string_view what) {
  const auto s = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
    throw FormatError("line " + std::to_string(line) + ": " + std::string(what) +
                          " is not a number: '" + std::string(s) + "'",
                      0, line);
  }
  return v;
}

long long to_integer(std::string_view text, std::size_t line, std::string_view what) {
  const auto s = trim(text);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
    throw FormatError("line " + std::to_string(line) + ": " + std::string(what) +
                          " is not an integer: '" + std::string(s) + "'",
                      0, line);
  }
  return v;
}

int to_int(std::string_view text, std::size_t line, std::string_view what) {
  return static_cast<int>(to_integer(text, line, what));
}

bool to_bool(std::string_view text, std::size_t line, std::string_view what) {
  const auto s = trim(text);
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw FormatError("line " + std::to_string(line) + ": " + std::string(what) +
                        " must be true or false",
                    0, line);
}

[[noreturn]] void unknown_key(const KeyValue& kv) {
  throw FormatError("line " + std::to_string(kv.line) + ": unknown key '" + kv.key + "'", 0,
                    kv.line);
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileNotFound("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<KeyValue> parse_key_values(std::string_view text) {
  std::vector<KeyValue> out;
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    const auto hash = raw.find('#');
    const auto line = trim(raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError("line " + std::to_string(line_no) + ": expected 'key = value'", 0,
                        line_no);
    }
    KeyValue kv{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))),
                line_no};
    if (kv.key.empty() || kv.value.empty()) {
      throw FormatError("line " + std::to_string(line_no) + ": empty key or value", 0, line_no);
    }
    out.push_back(std::move(kv));
  }
  return out;
}

Scenario parse_scenario(std::string_view text) {
  Scenario sc;
  GridLayout& g = sc.layout;
  std::map<std::string, double> limits;
  std::size_t last_line = 0;
  for (const auto& kv : parse_key_values(text)) {
    last_line = kv.line;
    if (kv.key == "rows") {
      g.rows = to_int(kv.value, kv.line, kv.key);
    } else if (kv.key == "cols") {
      g.cols = to_int(kv.value, kv.line, kv.key);
    } else if (kv.key == "block_width") {
      g.block_width = to_real(kv.value, kv.line, kv.key);
    } else if (kv.key == "block_height") {
      g.block_height = to_real(kv.value, kv.line, kv.key);
    } else if (kv.key == "street_width") {
      g.street_width = to_real(kv.value, kv.line, kv.key);
    } else if (kv.key == "x_min" || kv.key == "x_max" || kv.key == "y_min" || kv.key == "y_max") {
      limits[kv.key] = to_real(kv.value, kv.line, kv.key);
    } else if (kv.key == "vehicle") {
      const auto parts = split(kv.value, ',');
      if (parts.size() != 4) {
        throw FormatError("line " + std::to_string(kv.line) +
                              ": vehicle needs source_row,source_col,dest_row,dest_col",
                          0, kv.line);
      }
      sc.vehicles.push_back({to_int(parts[0], kv.line, "source_row"),
                             to_int(parts[1], kv.line, "source_col"),
                             to_int(parts[2], kv.line, "dest_row"),
                             to_int(parts[3], kv.line, "dest_col")});
    } else {
      unknown_key(kv);
    }
  }
  const GridLayout defaults = GridLayout::with_default_limits(g.rows, g.cols, g.block_width,
                                                              g.block_height, g.street_width);
  const auto pick = [&](const char* key, double fallback) {
    const auto it = limits.find(key);
    return it == limits.end() ? fallback : it->second;
  };
  g.x_min = pick("x_min", defaults.x_min);
  g.x_max = pick("x_max", defaults.x_max);
  g.y_min = pick("y_min", defaults.y_min);
  g.y_max = pick("y_max", defaults.y_max);
  try {
    sc.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid scenario: ") + e.what(), 0, last_line);
  }
  return sc;
}

EnvConfig parse_env_config(std::string_view text) {
  EnvConfig c;
  bool margin_given = false;
  std::size_t last_line = 0;
  for (const auto& kv : parse_key_values(text)) {
    last_line = kv.line;
    if (kv.key == "gamma") {
      c.gamma = to_real(kv.value, kv.line, kv.key);
    } else if (kv.key == "alpha") {
      c.alpha = to_real(kv.value, kv.line, kv.key);
    } else if (kv.key == "eta") {
      c.eta = to_real(kv.value, kv.line, kv.key);
    } else if (kv.key == "v_max") {
      c.v_max = to_real(kv.value, kv.line, kv.key);
    } else if (kv.key == "a_max") {
      c.a_max = to_real(kv.value, kv.line, kv.key);
    } else if (kv.key == "dt") {
      c.dt = to_real(kv.value, kv.line, kv.key);
    } else if (kv.key == "max_episode_len") {
      c.max_episode_len = to_int(kv.value, kv.line, kv.key);
    } else if (kv.key == "safe_radius") {
      c.safe_radius = to_real(kv.value, kv.line, kv.key);
    } else if (kv.key == "boundary_margin") {
      c.boundary_margin = to_real(kv.value, kv.line, kv.key);
      margin_given = true;
    } else if (kv.key == "resolve_iters") {
      c.resolve_iters = to_int(kv.value, kv.line, kv.key);
    } else {
      unknown_key(kv);
    }
  }
  if (!margin_given) c.boundary_margin = 0.25 * c.safe_radius;
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid config: ") + e.what(), 0, last_line);
  }
  return c;
}

TrainConfig parse_train_config(std::string_view text) {
  TrainConfig c;
  std::size_t last_line = 0;
  for (const auto& kv : parse_key_values(text)) {
    last_line = kv.line;
    if (kv.key == "batch_steps") {
      c.batch_steps = to_int(kv.value, kv.line, kv.key);
    } else if (kv.key == "iterations" || kv.key == "n_iterations") {
      c.n_iterations = to_int(kv.value, kv.line, kv.key);
    } else if (kv.key == "kl_step") {
      c.kl_step = to_real(kv.value, kv.line, kv.key);
    } else if (kv.key == "cg_iters") {
      c.cg_iters = to_int(kv.value, kv.line, kv.key);
    } else if (kv.key == "cg_damping") {
      c.cg_damping = to_real(kv.value, kv.line, kv.key);
    } else if (kv.key == "backtracks") {
      c.backtracks = to_int(kv.value, kv.line, kv.key);
    } else if (kv.key == "backtrack_ratio") {
      c.backtrack_ratio = to_real(kv.value, kv.line, kv.key);
    } else if (kv.key == "advantage_normalization") {
      c.normalize_advantages = to_bool(kv.value, kv.line, kv.key);
    } else if (kv.key == "baseline") {
      if (kv.value == "linear") {
        c.baseline = BaselineKind::linear;
      } else if (kv.value == "none") {
        c.baseline = BaselineKind::none;
      } else {
        throw FormatError("line " + std::to_string(kv.line) + ": baseline must be linear or none",
                          0, kv.line);
      }
    } else if (kv.key == "learn_std") {
      c.learn_std = to_bool(kv.value, kv.line, kv.key);
    } else if (kv.key == "init_std") {
      c.init_std = to_real(kv.value, kv.line, kv.key);
    } else if (kv.key == "hidden") {
      c.hidden.clear();
      if (trim(kv.value) != "none") {
        for (auto part : split(kv.value, ',')) c.hidden.push_back(to_int(part, kv.line, kv.key));
      }
    } else if (kv.key == "seed") {
      c.seed = static_cast<std::uint64_t>(to_integer(kv.value, kv.line, kv.key));
    } else if (kv.key == "checkpoint_every") {
      c.checkpoint_every = to_int(kv.value, kv.line, kv.key);
    } else if (kv.key == "workers") {
      c.workers = to_int(kv.value, kv.line, kv.key);
    } else {
      unknown_key(kv);
    }
  }
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid train config: ") + e.what(), 0, last_line);
  }
  return c;
}

std::string format_scenario(const Scenario& sc) {
  const GridLayout& g = sc.layout;
  std::ostringstream out;
  out << "rows = " << g.rows << "\ncols = " << g.cols
      << "\nblock_width = " << format_real(g.block_width)
      << "\nblock_height = " << format_real(g.block_height)
      << "\nstreet_width = " << format_real(g.street_width) << "\nx_min = " << format_real(g.x_min)
      << "\nx_max = " << format_real(g.x_max) << "\ny_min = " << format_real(g.y_min)
      << "\ny_max = " << format_real(g.y_max) << '\n';
  for (const auto& v : sc.vehicles) {
    out << "vehicle = " << v.source_row << ',' << v.source_col << ',' << v.dest_row << ','
        << v.dest_col << '\n';
  }
  return out.str();
}

std::string format_env_config(const EnvConfig& c) {
  std::ostringstream out;
  out << "gamma = " << format_real(c.gamma) << "\nalpha = " << format_real(c.alpha)
      << "\neta = " << format_real(c.eta) << "\nv_max = " << format_real(c.v_max)
      << "\na_max = " << format_real(c.a_max) << "\ndt = " << format_real(c.dt)
      << "\nmax_episode_len = " << c.max_episode_len
      << "\nsafe_radius = " << format_real(c.safe_radius)
      << "\nboundary_margin = " << format_real(c.boundary_margin)
      << "\nresolve_iters = " << c.resolve_iters << '\n';
  return out.str();
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream out;
  out << "batch_steps = " << c.batch_steps << "\niterations = " << c.n_iterations
      << "\nkl_step = " << format_real(c.kl_step) << "\ncg_iters = " << c.cg_iters
      << "\ncg_damping = " << format_real(c.cg_damping) << "\nbacktracks = " << c.backtracks
      << "\nbacktrack_ratio = " << format_real(c.backtrack_ratio)
      << "\nadvantage_normalization = " << bool_text(c.normalize_advantages)
      << "\nbaseline = " << (c.baseline == BaselineKind::linear ? "linear" : "none")
      << "\nlearn_std = " << bool_text(c.learn_std);
  if (c.init_std) out << "\ninit_std = " << format_real(*c.init_std);
  out << "\nhidden = ";
  if (c.hidden.empty()) out << "none";
  for (std::size_t k = 0; k < c.hidden.size(); ++k) out << (k ? "," : "") << c.hidden[k];
  out << "\nseed = " << c.seed << "\ncheckpoint_every = " << c.checkpoint_every
      << "\nworkers = " << c.workers << '\n';
  return out.str();
}

Scenario load_scenario(const std::filesystem::path& path) {
  return parse_scenario(read_text_file(path));
}

EnvConfig load_env_config(const std::filesystem::path& path) {
  return parse_env_config(read_text_file(path));
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  return parse_train_config(read_text_file(path));
}

TrajectoryTable::TrajectoryTable(int n_vehicles, int n_steps)
    : vehicles(n_vehicles),
      steps(n_steps),
      rows(static_cast<std::size_t>(n_vehicles) * static_cast<std::size_t>(n_steps), Row::Zero()),
      events(rows.size(), VehicleEvent::none) {}

TrajectoryTable table_from_trajectory(const Trajectory& traj, const EnvConfig& config) {
  const int n = traj.states.front().num_vehicles();
  const int steps = static_cast<int>(traj.states.size());
  TrajectoryTable table(n, steps);
  for (int t = 0; t < steps; ++t) {
    const EnvState& s = traj.states[static_cast<std::size_t>(t)];
    for (int i = 0; i < n; ++i) {
      auto& row = table.at(t, i);
      row.head<4>() = s.values.segment<4>(4 * i);
      if (t + 1 < steps) {
        const EnvState& next = traj.states[static_cast<std::size_t>(t) + 1];
        row.tail<2>() = (next.velocity(i) - s.velocity(i)) / config.dt;
      }
      if (t > 0) {
        table.event(t, i) =
            traj.events[static_cast<std::size_t>(t) - 1].per_vehicle[static_cast<std::size_t>(i)];
      }
    }
  }
  return table;
}

std::string format_trajectory_csv(const TrajectoryTable& table) {
  std::string out = "t,vehicle,x,y,vx,vy,ax,ay,event\n";
  for (int t = 0; t < table.steps; ++t) {
    for (int i = 0; i < table.vehicles; ++i) {
      out += std::to_string(t) + ',' + std::to_string(i);
      for (int k = 0; k < 6; ++k) out += ',' + format_real(table.at(t, i)(k));
      out += ',';
      out += to_string(table.event(t, i));
      out += '\n';
    }
  }
  return out;
}

TrajectoryTable parse_trajectory_csv(std::string_view text) {
  auto lines = split(text, '\n');
  if (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty() || trim(lines[0]) != "t,vehicle,x,y,vx,vy,ax,ay,event") {
    throw FormatError("line 1: expected header t,vehicle,x,y,vx,vy,ax,ay,event", 0, 1);
  }
  struct Parsed {
    int t;
    int vehicle;
    TrajectoryTable::Row row;
    VehicleEvent event;
  };
  std::vector<Parsed> parsed;
  int max_t = -1;
  int max_vehicle = -1;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const std::size_t line = k + 1;
    const auto fields = split(trim(lines[k]), ',');
    if (fields.size() != 9) {
      throw FormatError("line " + std::to_string(line) + ": expected 9 fields, found " +
                            std::to_string(fields.size()),
                        0, line);
    }
    Parsed p{to_int(fields[0], line, "t"), to_int(fields[1], line, "vehicle"),
             TrajectoryTable::Row::Zero(), VehicleEvent::none};
    for (int c = 0; c < 6; ++c) {
      p.row(c) = to_real(fields[static_cast<std::size_t>(c) + 2], line, "trajectory value");
    }
    const auto ev = trim(fields[8]);
    if (ev == "boundary") {
      p.event = VehicleEvent::boundary;
    } else if (ev == "pair") {
      p.event = VehicleEvent::pair;
    } else if (ev != "none") {
      throw FormatError("line " + std::to_string(line) + ": unknown event '" + std::string(ev) +
                            "'",
                        0, line);
    }
    if (p.t < 0 || p.vehicle < 0) {
      throw FormatError("line " + std::to_string(line) + ": negative index", 0, line);
    }
    max_t = std::max(max_t, p.t);
    max_vehicle = std::max(max_vehicle, p.vehicle);
    parsed.push_back(p);
  }
  if (parsed.empty()) throw FormatError("trajectory has no rows", 0, 1);
  TrajectoryTable table(max_vehicle + 1, max_t + 1);
  if (parsed.size() != table.rows.size()) {
    throw FormatError("trajectory is not rectangular: " + std::to_string(parsed.size()) +
                          " rows for " + std::to_string(table.vehicles) + " vehicles x " +
                          std::to_string(table.steps) + " steps",
                      0, lines.size());
  }
  std::vector<char> seen(table.rows.size(), 0);
  for (std::size_t k = 0; k < parsed.size(); ++k) {
    const auto& p = parsed[k];
    const auto idx = static_cast<std::size_t>(p.t) * static_cast<std::size_t>(table.vehicles) +
                     static_cast<std::size_t>(p.vehicle);
    if (seen[idx]) {
      throw FormatError("line " + std::to_string(k + 2) + ": duplicate (t, vehicle) row", 0, k + 2);
    }
    seen[idx] = 1;
    table.rows[idx] = p.row;
    table.events[idx] = p.event;
  }
  return table;
}

}  // namespace gridflow
