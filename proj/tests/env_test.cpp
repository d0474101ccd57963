#include "support.hpp"

#include "gridflow/errors.hpp"

#include "doctest.h"

#include <cmath>

using namespace gridflow;
using gridflow::test::Rng;

namespace {

Scenario one_vehicle(const Route& r, GridLayout g = test::unit_layout()) {
  Scenario s;
  s.layout = g;
  s.vehicles = {r};
  return s;
}

EnvState make_state(std::initializer_list<double> v, int step = 0) {
  EnvState s;
  s.values = Eigen::Map<const Eigen::VectorXd>(v.begin(), static_cast<Eigen::Index>(v.size()));
  s.step = step;
  return s;
}

// Exhaustive search over a fine grid of a box around `p` for the nearest
// point with the required corridor slack.
Vec2 brute_force_projection(const GridLayout& g, double R, double eps, const Vec2& p,
                            double radius, double grid) {
  const double half = g.street_width / 2.0 - R - eps;
  Vec2 best = p;
  double best_d = 1e300;
  const int steps = static_cast<int>(std::lround(2 * radius / grid));
  for (int a = 0; a <= steps; ++a) {
    for (int b = 0; b <= steps; ++b) {
      const Vec2 q = p + Vec2(-radius + a * grid, -radius + b * grid);
      bool ok = false;
      for (int c = -g.max_col(); c <= g.max_col() && !ok; ++c) {
        ok = std::abs(q.x() - c * g.block_width) <= half + 1e-12;
      }
      for (int r = -g.max_row(); r <= g.max_row() && !ok; ++r) {
        ok = std::abs(q.y() - r * g.block_height) <= half + 1e-12;
      }
      const double d = (q - p).norm();
      if (ok && d < best_d - 1e-12) {
        best_d = d;
        best = q;
      }
    }
  }
  return best;
}

}  // namespace

TEST_SUITE("env") {

TEST_CASE("saturate clamps and rejects inverted bounds") {
  CHECK(saturate(5, -1, 1) == 1);
  CHECK(saturate(-3, -1, 1) == -1);
  CHECK(saturate(0.5, -1, 1) == 0.5);
  CHECK_THROWS_AS(saturate(0, 1, -1), InvalidArgument);

  Rng rng(7);
  for (int k = 0; k < 1000; ++k) {
    const double lo = test::uniform(rng, -2, 0), hi = test::uniform(rng, 0, 2);
    const double a = test::uniform(rng, -5, 5), b = test::uniform(rng, -5, 5);
    const double s = saturate(a, lo, hi);
    CHECK(saturate(s, lo, hi) == s);
    if (a <= b) CHECK(saturate(a, lo, hi) <= saturate(b, lo, hi));
  }
}

TEST_CASE("intersection positions") {
  const GridLayout g = test::unit_layout(5, 5);
  CHECK(intersection_position(g, 0, 0) == Vec2(0, 0));
  GridLayout tall = GridLayout::with_default_limits(3, 3, 1.0, 2.0, 0.2);
  CHECK(intersection_position(tall, 1, -1) == Vec2(-1, 2));
  GridLayout narrow = GridLayout::with_default_limits(1, 5, 0.5, 0.5, 0.2);
  CHECK(intersection_position(narrow, 0, 2) == Vec2(1.0, 0));
  CHECK_THROWS_AS(intersection_position(g, 3, 0), InvalidArgument);
}

TEST_CASE("corridor legality") {
  const GridLayout g = test::unit_layout();
  CHECK(is_legal_position(g, 0.02, {0.05, 0.5}));
  CHECK_FALSE(is_legal_position(g, 0.02, {0.09, 0.5}));
  CHECK(is_legal_position(g, 0.02, {0, 0}));
}

TEST_CASE("projection onto the corridor") {
  const GridLayout g = test::unit_layout();
  const double R = 0.02, eps = 0.005;

  const Vec2 p = project_to_corridor(g, R, eps, {0.09, 0.5});
  CHECK(p.x() == doctest::Approx(0.075).epsilon(1e-15));
  CHECK(p.y() == 0.5);
  const Vec2 oracle = brute_force_projection(g, R, eps, {0.09, 0.5}, 0.03, 1e-4);
  CHECK((p - oracle).norm() < 2e-4);

  CHECK(project_to_corridor(g, R, eps, {0.02, 0.5}) == Vec2(0.02, 0.5));

  // Block centre: all four corridors equally far; vertical with the smaller
  // index wins.
  const Vec2 tie = project_to_corridor(g, R, eps, {0.5, 0.5});
  CHECK(tie.x() == doctest::Approx(0.075).epsilon(1e-15));
  CHECK(tie.y() == 0.5);

  const Vec2 neg = project_to_corridor(g, R, eps, {-0.5, 0.5});
  CHECK(neg.x() == doctest::Approx(-0.925).epsilon(1e-15));  // c = -1 edge
  CHECK(neg.y() == 0.5);

  // Closer to the horizontal street r = 0.
  const Vec2 low = project_to_corridor(g, R, eps, {-0.5, 0.3});
  CHECK(low.x() == -0.5);
  CHECK(low.y() == doctest::Approx(0.075).epsilon(1e-15));

  GridLayout bad = g;
  bad.street_width = 0.04;
  CHECK_THROWS_AS(project_to_corridor(bad, R, eps, {0.5, 0.5}), InvalidLayout);
}

TEST_CASE("projection agrees with a brute-force search") {
  const GridLayout g = test::unit_layout();
  const double R = 0.02, eps = 0.005;
  Rng rng(11);
  for (int k = 0; k < 200; ++k) {
    // Points just outside a corridor, as produced by one integration step.
    Vec2 q = test::random_street_point(rng, g, 0.08);
    q += Vec2(test::uniform(rng, -0.012, 0.012), test::uniform(rng, -0.012, 0.012));
    const Vec2 p = project_to_corridor(g, R, eps, q);
    const Vec2 oracle = brute_force_projection(g, R, eps, q, 0.03, 5e-4);
    CHECK((p - q).norm() <= (oracle - q).norm() + 1e-9);
    CHECK(is_legal_position(g, R, p));
  }
}

TEST_CASE("reset places vehicles at rest on their sources") {
  Scenario s;
  s.layout = test::unit_layout();
  s.vehicles = {{0, 0, 1, 1}, {1, 1, 0, 0}};
  const EnvConfig cfg;
  const EnvState st = reset(s, cfg);
  CHECK(st.values == (Eigen::VectorXd(8) << 0, 0, 0, 0, 1, 1, 0, 0).finished());
  CHECK(st.step == 0);
  CHECK(reset(s, cfg) == st);

  s.vehicles.push_back({0, 0, 1, 0});
  CHECK_THROWS_AS(reset(s, cfg), InvalidArgument);
}

TEST_CASE("reward and termination") {
  Scenario s;
  s.layout = test::unit_layout();
  s.vehicles = {{0, 0, 0, 0}, {1, 1, 1, 1}};
  EnvConfig cfg;
  CHECK(reward(make_state({0, 0, 0, 0, 1, 1, 0, 0}), s, cfg) == 1.0);
  CHECK(is_terminal(make_state({0, 0, 0, 0, 1, 1, 0, 0}), s, cfg));

  // Distances 1.0 and 2.0.
  CHECK(reward(make_state({1, 0, 0, 0, 1, -1, 0, 0}), s, cfg) == doctest::Approx(-0.3));

  const double off = cfg.eta + 0.01;
  CHECK(reward(make_state({0, 0, 0, 0, 1 + off, 1, 0, 0}), s, cfg) ==
        doctest::Approx(-cfg.alpha * off));

  // Exactly eta away is not arrived.
  CHECK_FALSE(is_terminal(make_state({0, 0, 0, 0, 1 + cfg.eta, 1, 0, 0}), s, cfg));

  Scenario empty;
  empty.layout = s.layout;
  CHECK(is_terminal(EnvState{Eigen::VectorXd(0), 0}, empty, cfg));
}

TEST_CASE("single full-throttle step uses the old velocity for position") {
  const Scenario s = one_vehicle({0, 0, 0, 1});
  const EnvConfig cfg;
  const StepResult r = step(make_state({0, 0, 0, 0}), (ActionVec(2) << 30, 0).finished(), s, cfg);
  CHECK(r.next_state.position(0) == Vec2(0, 0));
  CHECK(r.next_state.velocity(0).x() == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(r.next_state.velocity(0).y() == 0);
  CHECK(r.next_state.step == 1);
  CHECK(r.events.near_collisions() == 0);

  CHECK_THROWS_AS(step(make_state({0, 0, 0, 0}), (ActionVec(2) << NAN, 0).finished(), s, cfg),
                  InvalidArgument);
}

TEST_CASE("pair push-back restores exactly 2R") {
  Scenario s;
  s.layout = test::unit_layout();
  s.vehicles = {{0, 0, 1, 1}, {1, 0, -1, -1}};
  EnvConfig cfg;
  // At rest 0.03 apart, so the integrated positions are (0,0) and (0.03,0).
  const EnvState st = make_state({0, 0, 0, 0, 0.03, 0, 0, 0});
  const StepResult r = step(st, ActionVec::Zero(4), s, cfg);
  CHECK(r.next_state.position(0).x() == doctest::Approx(-0.005).epsilon(1e-14));
  CHECK(r.next_state.position(1).x() == doctest::Approx(0.035).epsilon(1e-14));
  CHECK((r.next_state.position(1) - r.next_state.position(0)).norm() ==
        doctest::Approx(0.04).epsilon(1e-14));
  CHECK(r.next_state.velocity(0) == Vec2::Zero());
  CHECK(r.next_state.velocity(1) == Vec2::Zero());
  CHECK(r.events.pair == 1);
  CHECK(r.events.per_vehicle[0] == VehicleEvent::pair);

  // Coincident centres split along x, lower index toward -x.
  const StepResult c = step(make_state({0.5, 0, 0, 0, 0.5, 0, 0, 0}), ActionVec::Zero(4), s, cfg);
  CHECK(c.next_state.position(0).x() == doctest::Approx(0.48).epsilon(1e-15));
  CHECK(c.next_state.position(1).x() == doctest::Approx(0.52).epsilon(1e-15));
  CHECK(c.next_state.position(0).y() == 0);
}

TEST_CASE("boundary stop projects with the margin") {
  const Scenario s = one_vehicle({0, 0, 1, 1});
  const EnvConfig cfg;
  // From x = 0.08 at 0.8 per second the step lands on 0.088, outside 0.08.
  const StepResult r = step(make_state({0.08, 0.5, 0.8, 0}), ActionVec::Zero(2), s, cfg);
  CHECK(r.next_state.position(0).x() == doctest::Approx(0.075).epsilon(1e-15));
  CHECK(r.next_state.position(0).y() == 0.5);
  CHECK(r.next_state.velocity(0) == Vec2::Zero());
  CHECK(r.events.boundary == 1);
  CHECK(r.events.per_vehicle[0] == VehicleEvent::boundary);
}

TEST_CASE("truncation at the episode cap") {
  const Scenario s = one_vehicle({0, 0, 1, 1});
  EnvConfig cfg;
  const StepResult r = step(make_state({0, 0, 0, 0}, cfg.max_episode_len - 1),
                            ActionVec::Zero(2), s, cfg);
  CHECK(r.truncated);
  CHECK_FALSE(r.done);
}

TEST_CASE("step equals the reference transition") {
  Rng rng(2024);
  EnvConfig cfg;
  for (int k = 0; k < 1000; ++k) {
    const Scenario s = test::random_scenario(rng, test::uniform_int(rng, 1, 4));
    const EnvState st = test::random_state(rng, s, cfg);
    const ActionVec a = test::random_action(rng, s.num_vehicles(), 60.0);
    const StepResult got = step(st, a, s, cfg);
    const test::RefOutcome want = test::reference_step(st, a, s, cfg);
    for (int i = 0; i < s.num_vehicles(); ++i) {
      const auto u = static_cast<std::size_t>(i);
      REQUIRE(got.next_state.position(i).x() == want.x[u]);
      REQUIRE(got.next_state.position(i).y() == want.y[u]);
      REQUIRE(got.next_state.velocity(i).x() == want.vx[u]);
      REQUIRE(got.next_state.velocity(i).y() == want.vy[u]);
      REQUIRE(static_cast<int>(got.events.per_vehicle[u]) == want.event[u]);
    }
    REQUIRE(got.events.boundary == want.boundary);
    REQUIRE(got.events.pair == want.pair);
    REQUIRE(got.events.unresolved == want.unresolved);
    REQUIRE(got.reward == want.reward);
    REQUIRE(got.done == want.done);
    REQUIRE(got.truncated == want.truncated);
  }
}

TEST_CASE("post-step invariants over long random rollouts") {
  Rng rng(99);
  EnvConfig cfg;
  long steps = 0;
  while (steps < 100000) {
    const Scenario s = test::random_scenario(rng, test::uniform_int(rng, 2, 4));
    EnvState st = reset(s, cfg);
    const double scale = test::uniform(rng, 5, 80);
    for (int t = 0; t < 500; ++t, ++steps) {
      const StepResult r = step(st, test::random_action(rng, s.num_vehicles(), scale), s, cfg);
      st = r.next_state;
      REQUIRE_FALSE(r.events.unresolved);
      for (int i = 0; i < s.num_vehicles(); ++i) {
        REQUIRE(std::abs(st.velocity(i).x()) <= cfg.v_max);
        REQUIRE(std::abs(st.velocity(i).y()) <= cfg.v_max);
        const Vec2 p = st.position(i);
        REQUIRE(p.x() >= s.layout.x_min);
        REQUIRE(p.x() <= s.layout.x_max);
        REQUIRE(p.y() >= s.layout.y_min);
        REQUIRE(p.y() <= s.layout.y_max);
        REQUIRE(is_legal_position(s.layout, cfg.safe_radius, p));
        for (int j = i + 1; j < s.num_vehicles(); ++j) {
          REQUIRE((st.position(j) - p).norm() >= 2 * cfg.safe_radius - 1e-9);
        }
      }
      REQUIRE((r.reward == 1.0) == r.done);
      if (!r.done) REQUIRE(r.reward < 0.0);
    }
  }
}

TEST_CASE("zero action from rest keeps positions") {
  Rng rng(5);
  EnvConfig cfg;
  for (int k = 0; k < 50; ++k) {
    const Scenario s = test::random_scenario(rng, 3);
    const EnvState st = reset(s, cfg);
    const StepResult r = step(st, ActionVec::Zero(6), s, cfg);
    CHECK(r.next_state.values == st.values);
  }
}

TEST_CASE("identical inputs give bitwise identical trajectories") {
  Rng rng(3);
  const Scenario s = test::random_scenario(rng, 3);
  const EnvConfig cfg;
  std::vector<ActionVec> actions;
  for (int t = 0; t < 300; ++t) actions.push_back(test::random_action(rng, 3, 40));
  const auto run = [&] {
    std::size_t t = 0;
    return run_episode(s, cfg, [&](const EnvState&) { return actions[t++ % actions.size()]; }, 300);
  };
  const Trajectory a = run(), b = run();
  REQUIRE(a.states.size() == b.states.size());
  for (std::size_t k = 0; k < a.states.size(); ++k) CHECK(a.states[k] == b.states[k]);
}

TEST_CASE("run_episode basics") {
  EnvConfig cfg;
  const auto zero = [](const EnvState& st) { return ActionVec(ActionVec::Zero(2 * st.num_vehicles())); };

  const Trajectory at_dest = run_episode(one_vehicle({0, 0, 0, 0}), cfg, zero, 50);
  CHECK(at_dest.length() == 1);
  CHECK(at_dest.rewards[0] == 1.0);
  CHECK(at_dest.done);
  CHECK(at_dest.travel_times[0] == 0.0);

  const Trajectory far = run_episode(one_vehicle({0, 0, 0, 1}), cfg, zero, 10);
  CHECK(far.length() == 10);
  for (double r : far.rewards) CHECK(r == doctest::Approx(-cfg.alpha * 1.0));
  CHECK(far.travel_times[0] == doctest::Approx(cfg.dt * 10));
}

TEST_CASE("full-throttle arrival matches saturated kinematics") {
  // Destination 0.1 away along the street would be off-grid, so use a layout
  // with 0.1-wide blocks.
  GridLayout g = GridLayout::with_default_limits(1, 3, 0.1, 0.1, 0.1);
  EnvConfig cfg;
  cfg.safe_radius = 0.02;
  cfg.boundary_margin = 0.005;
  const Scenario s = one_vehicle({0, 0, 0, 1}, g);
  const auto throttle = [&](const EnvState&) { return ActionVec((ActionVec(2) << cfg.a_max, 0).finished()); };
  const Trajectory tr = run_episode(s, cfg, throttle, 100);

  // Closed form: v_k = min(k h a, v_m); x_k = sum_{j<k} h v_j; first k with
  // 0.1 - x_k < eta.
  int arrival = -1;
  for (int k = 0; k < 100 && arrival < 0; ++k) {
    double x = 0.0;
    for (int j = 0; j < k; ++j) x += cfg.dt * std::min(j * cfg.dt * cfg.a_max, cfg.v_max);
    if (0.1 - x < cfg.eta) arrival = k;
  }
  REQUIRE(arrival > 0);
  CHECK(arrival == 9);
  CHECK(tr.done);
  CHECK(tr.length() == arrival);
}

}  // TEST_SUITE
