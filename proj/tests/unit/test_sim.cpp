/*
 * Copyright (c) 2026 The lcp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cmath>
#include <vector>

#include "doctest.h"
#include "lcp/benchmark.hpp"
#include "lcp/errors.hpp"
#include "lcp/random.hpp"
#include "lcp/rrt_star.hpp"
#include "lcp/sim.hpp"

using namespace lcp;
using namespace lcp::sim;

namespace {

Environment box_world(double w, double h) {
  Environment env;
  env.bounds = {{0, 0}, {w, h}};
  env.start = {1, h / 2};
  env.goal = {w - 1, h / 2};
  return env;
}

MarginFn constant(double m) {
  return [m](Vec2) { return m; };
}

}  // namespace

TEST_CASE("environment generation is deterministic and respects preset constraints") {
  for (Preset p : kPresets) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto a = generate_environment(p, s), b = generate_environment(p, s);
      CHECK(a.obstacles == b.obstacles);
      CHECK(a.start == b.start);
      CHECK(a.goal == b.goal);
      CHECK(a.clearance(a.start) >= kRobotRadius);
      CHECK(a.clearance(a.goal) >= kRobotRadius);
      CHECK(has_feasible_path(a));
    }
  }
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto c = generate_environment(Preset::corridor, s);
    bool narrow = false;
    for (const auto& pass : c.passages) narrow = narrow || pass.width <= 1.0;
    CHECK(narrow);
    CHECK(obstacle_area_fraction(generate_environment(Preset::open, s)) <= 0.10);
  }
  CHECK_THROWS_AS(parse_preset("maze"), ConfigError);
  CHECK(parse_preset("corridor") == Preset::corridor);
}

TEST_CASE("perception noise models") {
  const auto env = generate_environment(Preset::office, 3);
  const auto none = perceive(env, NoiseKind::none, {}, 1);
  CHECK(none.obstacles == env.obstacles);
  CHECK(perceive(env, NoiseKind::combined, {}, 9).obstacles == perceive(env, NoiseKind::combined, {}, 9).obstacles);

  Environment glass = box_world(20, 20);
  for (int i = 0; i < 10; ++i) glass.obstacles.push_back(geom::Obstacle::circle({2.0 + 1.6 * i, 15}, 0.3, true));
  std::size_t dropped = 0;
  for (std::uint64_t s = 0; s < 10000; ++s)
    dropped += perceive(glass, NoiseKind::transparency, {}, s).dropped_transparent.size();
  CHECK(std::abs(static_cast<double>(dropped) / 100000.0 - 0.188) < 0.01);

  double mag = 0.0;
  for (std::uint64_t s = 0; s < 10000; ++s) mag += geom::norm(perceive(env, NoiseKind::localization, {}, s).offset);
  const double rayleigh = 0.5 / std::sqrt(2.0) * std::sqrt(M_PI / 2.0);
  CHECK(std::abs(mag / 10000.0 - rayleigh) < 0.01);

  const auto moved = perceive(env, NoiseKind::localization, {}, 4);
  REQUIRE(moved.obstacles.size() == env.obstacles.size());
  for (std::size_t i = 0; i < env.obstacles.size(); ++i)
    CHECK(moved.obstacles[i] == geom::translated(env.obstacles[i], moved.offset));

  // Occlusion hides ceil(hide_frac * candidates) obstacles, never the visible ones.
  Environment row = box_world(20, 6);
  for (int i = 0; i < 6; ++i) row.obstacles.push_back(geom::Obstacle::circle({4.0 + 2.5 * i, 3}, 0.5));
  const auto occ = perceive(row, NoiseKind::occlusion, {}, 2);
  CHECK(occ.dropped_occluded.size() == 3);  // 5 blocked behind the first, ceil(0.575 * 5)
  for (std::size_t k : occ.dropped_occluded) CHECK(k != 0);
}

TEST_CASE("trial evaluation") {
  Environment env = box_world(30, 10);
  env.obstacles.push_back(geom::Obstacle::rect({0, 0}, {30, 4}));
  const std::vector<Vec2> straight{{10, 5}, {20, 5}};
  const auto r = evaluate_trial(env, straight);
  CHECK(r.success);
  CHECK(std::abs(r.d0 - 1.0) < 1e-9);
  CHECK(std::abs(r.d_avg - 1.0) < 1e-9);
  CHECK(r.p0 == 0.0);
  CHECK(std::abs(r.path_length - 10.0) < 1e-12);

  const std::vector<Vec2> through{{10, 5}, {10, 3}};
  CHECK_FALSE(evaluate_trial(env, through).success);

  Environment graze = box_world(30, 10);
  graze.obstacles.push_back(geom::Obstacle::rect({14, 0}, {16, 4.85}));
  const auto g = evaluate_trial(graze, straight);
  CHECK_FALSE(g.success);
  CHECK(g.d0 == doctest::Approx(0.15));
  CHECK(g.p0 > 0.0);
}

TEST_CASE("rrt star geometry") {
  const Environment open = box_world(12, 6);
  const auto p = rrt_star(open, open.start, open.goal, constant(0.17), {}, 1);
  REQUIRE(p.success);
  CHECK(path_length(p.waypoints) <= 1.05 * geom::dist(open.start, open.goal));
  CHECK(p.waypoints.front() == open.start);
  CHECK(p.waypoints.back() == open.goal);
  for (std::size_t i = 1; i < p.waypoints.size(); ++i) CHECK(geom::dist(p.waypoints[i - 1], p.waypoints[i]) <= 0.5 + 1e-9);

  Environment boxed = box_world(12, 6);
  boxed.obstacles.push_back(geom::Obstacle::rect({9, 1}, {9.4, 5}));
  boxed.obstacles.push_back(geom::Obstacle::rect({9, 4.6}, {12, 5}));
  boxed.obstacles.push_back(geom::Obstacle::rect({9, 1}, {12, 1.4}));
  RrtParams few;
  few.max_iterations = 800;
  CHECK_FALSE(rrt_star(boxed, boxed.start, boxed.goal, constant(0.17), few, 2).success);

  // A 0.6 m gap needs 0.8 m of width at margin 0.4.
  Environment corridor = box_world(12, 6);
  corridor.obstacles.push_back(geom::Obstacle::rect({5.8, 0}, {6.2, 2.7}));
  corridor.obstacles.push_back(geom::Obstacle::rect({5.8, 3.3}, {6.2, 6}));
  RrtParams many;
  many.max_iterations = 4000;
  CHECK(rrt_star(corridor, corridor.start, corridor.goal, constant(0.17), many, 3).success);
  CHECK_FALSE(rrt_star(corridor, corridor.start, corridor.goal, constant(0.40), many, 3).success);

  Environment blocked_start = box_world(12, 6);
  blocked_start.obstacles.push_back(geom::Obstacle::circle({1.3, 3}, 0.2));
  const auto f = rrt_star(blocked_start, blocked_start.start, blocked_start.goal, constant(0.17), {}, 4);
  CHECK_FALSE(f.success);
  CHECK(f.iterations == 0);
}

TEST_CASE("monte carlo harness") {
  bench::MonteCarloConfig cfg;
  cfg.methods = {bench::Method::naive};
  cfg.presets = {Preset::room};
  cfg.noises = {NoiseKind::occlusion};
  cfg.trials = 0;
  const auto empty = bench::monte_carlo(cfg);
  CHECK(empty.trials.empty());

  cfg.methods = {bench::Method::naive, bench::Method::standard};
  cfg.trials = 6;
  CHECK_THROWS_AS(bench::monte_carlo(cfg), ConfigError);
  cfg.standard_margin = 0.45;
  cfg.workers = 1;
  const auto a = bench::monte_carlo(cfg);
  cfg.workers = 3;
  const auto b = bench::monte_carlo(cfg);
  CHECK(bench::cells_csv(a.cells) == bench::cells_csv(b.cells));
  CHECK(bench::trials_csv(a.trials) == bench::trials_csv(b.trials));
  CHECK(a.trials.size() == 12);
  for (const auto& t : a.trials) {
    if (!t.result.planned) continue;
    CHECK(t.result.d0 <= t.result.d_avg + 1e-12);
    CHECK(t.result.p0 >= 0.0);
    CHECK(t.result.p0 <= 1.0);
    if (t.result.d0 >= kDangerRadius) CHECK(t.result.p0 == 0.0);
    if (t.result.success) CHECK(t.result.d0 >= kRobotRadius);
    CHECK(t.min_margin >= kRobotRadius);
  }
  const std::vector<double> v{1.0, 2.0, 3.0};
  CHECK(bench::summarize(v).mean == 2.0);
  CHECK(bench::summarize(v).std == doctest::Approx(1.0));
  CHECK(std::isnan(bench::summarize(std::vector<double>{1.0}).std));
}
