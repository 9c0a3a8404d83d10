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
#include "lcp/errors.hpp"
#include "lcp/plan.hpp"
#include "lcp/random.hpp"

using namespace lcp;
using namespace lcp::plan;

namespace {

sim::Environment empty_world(double w = 40, double h = 40) {
  sim::Environment env;
  env.bounds = {{0, 0}, {w, h}};
  env.start = {1, h / 2};
  env.goal = {w - 1, h / 2};
  return env;
}

// Samples whose required margin falls with passage width.
std::vector<PathSample> passage_samples(std::size_t paths, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PathSample> out;
  for (std::size_t p = 0; p < paths; ++p) {
    PathSample s;
    s.preset = sim::Preset::corridor;
    const double base = uniform(rng, 0.6, 6.0);
    for (std::size_t i = 0; i < 20; ++i) {
      Feature f{};
      const double width = std::clamp(base + 0.2 * normal(rng), 0.5, 6.0);
      f[kPassageWidth] = width;
      f[kMinClearance] = width / 2.0;
      f[kProgress] = static_cast<double>(i) / 20.0;
      f[kSpeed] = 0.5;
      for (std::size_t k = 0; k < 8; ++k) f[kRay0 + k] = std::min(width / 2.0, kRayCap);
      s.features.push_back(f);
      const double need = std::min(1.0, kRobotRadius + 0.4 / width + 0.02 * normal(rng));
      s.required.push_back(std::max(kRobotRadius, need));
      s.deficit.push_back(s.required.back() - kRobotRadius);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("waypoint features on an empty map") {
  const auto env = empty_world();
  const std::vector<Vec2> path{{10, 20}, {11, 20}, {12, 20}, {13, 20}};
  const auto f = extract_waypoint_features(env, path, 1);
  CHECK(f.values[kCurvature] == 0.0);
  CHECK(f.values[kHeadingChange] == 0.0);
  CHECK(f.values[kMinClearance] == kClearanceCap);
  CHECK_FALSE(f.short_path);
  CHECK(extract_waypoint_features(env, path, 0).values[kProgress] == 0.0);
  CHECK(extract_waypoint_features(env, path, 3).values[kProgress] == doctest::Approx(3.0 / 4.0));
  for (double v : f.values) CHECK(std::isfinite(v));
  const std::vector<Vec2> two{{10, 20}, {12, 20}};
  CHECK(extract_waypoint_features(env, two, 0).short_path);
  CHECK_THROWS_AS(extract_waypoint_features(env, std::vector<Vec2>{}, 0), InputError);
  CHECK_THROWS_AS(extract_waypoint_features(env, two, 2), InputError);
}

TEST_CASE("clearance to a circular obstacle") {
  auto env = empty_world();
  env.obstacles.push_back(geom::Obstacle::circle({23, 20}, 1.0));
  const std::vector<Vec2> path{{18, 20}, {20, 20}, {20, 22}};
  const auto f = extract_waypoint_features(env, path, 1);
  CHECK(std::abs(f.values[kMinClearance] - 2.0) < 1e-12);
  CHECK(f.values[kCurvature] > 0.0);
  CHECK(std::abs(f.values[kHeadingChange] - M_PI / 2.0) < 1e-12);
  CHECK(f.values[kNearbyCount] == 0.0);
  CHECK(f.values[kRay0] == doctest::Approx(kRayCap));
}

TEST_CASE("features are translation invariant") {
  auto env = empty_world(20, 10);
  env.obstacles.push_back(geom::Obstacle::circle({8, 5}, 1.0));
  env.obstacles.push_back(geom::Obstacle::rect({12, 2}, {13, 6}));
  const std::vector<Vec2> path{{2, 5}, {5, 3}, {9, 2.5}, {14, 8}, {19, 5}};
  const Vec2 d{3.25, -7.5};
  const auto moved = env.translated(d);
  std::vector<Vec2> moved_path;
  for (Vec2 p : path) moved_path.push_back(p + d);
  for (std::size_t i = 0; i < path.size(); ++i) {
    const auto a = extract_waypoint_features(env, path, i).values;
    const auto b = extract_waypoint_features(moved, moved_path, i).values;
    for (std::size_t k = 0; k < kFeatureDim; ++k) CHECK(std::abs(a[k] - b[k]) < 1e-9);
  }
}

TEST_CASE("final margin and clamp") {
  CHECK(final_margin(0.05, 0.05) == kRobotRadius);
  CHECK(std::abs(final_margin(0.2, 0.1) - 0.3) < 1e-12);
  CHECK(final_margin(0.1, 0.07) == doctest::Approx(0.17));
  CHECK(final_margin(0.0, -5.0) == kRobotRadius);
  CHECK(clamp_margin(5.0) == 1.0);
  CHECK(clamp_margin(-2.0) == 0.0);
  CHECK(clamp_margin(0.4) == 0.4);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) CHECK(final_margin(uniform(rng, -2, 2), uniform(rng, -2, 2)) >= kRobotRadius);
}

TEST_CASE("asymmetric safety loss") {
  CHECK(safety_loss(0.4, 0.4) == 0.0);
  CHECK(std::abs(safety_loss(0.6, 0.5) - 0.0025) < 1e-9);
  CHECK(std::abs(safety_loss(0.4, 0.5) - 0.01) < 1e-9);
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const double d = uniform(rng, 0.0, 1.0), e = uniform(rng, 0.0, 3.0);
    CHECK(std::abs(safety_loss(d - e, d) - 4.0 * safety_loss(d + e, d)) < 1e-12);
  }
  // Linear branch beyond the Huber delta.
  CHECK(std::abs(safety_loss(3.0, 1.0) - 0.5 * (2.0 - 0.5)) < 1e-12);
  // Analytic derivative against a central difference.
  for (double x : {-1.7, -0.3, 0.2, 1.4}) {
    const double h = 1e-6;
    const double fd = (safety_loss(x + h, 0.0) - safety_loss(x - h, 0.0)) / (2 * h);
    CHECK(std::abs(safety_loss_grad(x, 0.0) - fd) < 1e-6);
  }
}

TEST_CASE("path loss terms") {
  const std::vector<double> flat{0.3, 0.3, 0.3};
  const auto a = path_loss(flat, flat, 0.85, 0.1);
  CHECK(a.safety == 0.0);
  CHECK(a.efficiency < 1e-18);
  CHECK(a.smoothness == 0.0);
  CHECK(std::abs(a.coverage - 0.0025) < 1e-9);
  CHECK(std::abs(a.total - 0.0025) < 1e-9);

  const std::vector<double> t{0.3, 0.5};
  const auto b = path_loss(t, t, 0.9, 0.1);
  CHECK(std::abs(b.smoothness - 0.008) < 1e-9);
  CHECK(std::abs(b.efficiency - 0.03) < 1e-9);
  const std::vector<double> t2{0.3, 0.7};
  CHECK(std::abs(path_loss(t2, t2, 0.9, 0.1).smoothness - 4.0 * b.smoothness) < 1e-9);

  CHECK_THROWS_AS(path_loss(std::vector<double>{0.3}, std::vector<double>{0.3}, 0.9, 0.1), InputError);
  CHECK_THROWS_AS(path_loss(t, flat, 0.9, 0.1), InputError);

  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> v(6);
    for (double& x : v) x = uniform01(rng);
    CHECK(path_loss(v, v, 0.9, 0.1).smoothness > 0.0);
  }
}

TEST_CASE("required margin and deficit") {
  CHECK(clearance_deficit(1.0, 1.5) == 0.0);
  CHECK(std::abs(clearance_deficit(1.5, 1.0) - 0.5) < 1e-12);
  CHECK(clearance_deficit(10.0, -1.0) == kClearanceCap);
  CHECK(required_margin(1.0, 1.5) == kRobotRadius);
  CHECK(std::abs(required_margin(1.2, 1.0) - 0.37) < 1e-12);
  CHECK(required_margin(5.0, 0.0) == kMarginCap);
}

TEST_CASE("additive offset calibration") {
  std::vector<double> r;
  for (int i = 10; i >= 1; --i) r.push_back(-0.1 * i);
  CHECK(std::abs(offset_quantile(r, 0.1) - (-0.1)) < 1e-12);
  const std::vector<double> same{0.2, 0.4, 0.6};
  CHECK(calibrate_offset(same, same, 0.5) == 0.0);
  auto more = r;
  more.push_back(2.0);
  CHECK(offset_quantile(more, 0.1) >= offset_quantile(r, 0.1));
  CHECK_THROWS_AS(offset_quantile(std::vector<double>{}, 0.1), InputError);

  // Held-out violation rate stays near alpha.
  Rng rng(4);
  const std::size_t n = 1000;
  std::vector<double> pred(n), need(n);
  for (std::size_t i = 0; i < n; ++i) {
    pred[i] = uniform01(rng);
    need[i] = pred[i] + 0.1 * normal(rng);
  }
  const double q = calibrate_offset(pred, need, 0.1);
  std::size_t miss = 0;
  const std::size_t m = 20000;
  for (std::size_t i = 0; i < m; ++i) {
    const double p = uniform01(rng);
    miss += p + q >= p + 0.1 * normal(rng) ? 0 : 1;
  }
  const double rate = static_cast<double>(miss) / static_cast<double>(m);
  CHECK(rate <= 0.1 + 1.0 / (n + 1.0) + 3.0 * std::sqrt(0.09 / m) + 0.02);
}

TEST_CASE("margin model requires statistics for the preset") {
  MarginModel model;
  model.net = build_margin_net(1);
  Feature f{};
  CHECK_THROWS_AS(model.predict(sim::Preset::office, f), StateError);
}

TEST_CASE("trained margins grow in narrow passages") {
  const auto train = passage_samples(300, 1);
  const auto cal = passage_samples(100, 2);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.seed = 3;
  const auto t = train_margin_net(train, cal, cfg);
  CHECK(t.history.size() == 15);
  Feature narrow = train[0].features[0], open = narrow;
  narrow[kPassageWidth] = 0.6;
  narrow[kMinClearance] = 0.3;
  open[kPassageWidth] = 5.5;
  open[kMinClearance] = 2.75;
  for (std::size_t k = 0; k < 8; ++k) {
    narrow[kRay0 + k] = 0.3;
    open[kRay0 + k] = kRayCap;
  }
  const double tn = t.model.predict(sim::Preset::corridor, narrow);
  const double to = t.model.predict(sim::Preset::corridor, open);
  CHECK(tn > to);
  CHECK(tn >= 0.0);
  CHECK(tn <= kMarginCap);
  // Evaluation is deterministic.
  CHECK(t.model.predict(sim::Preset::corridor, narrow) == tn);
  // Calibrated offset yields the target coverage on the calibration split.
  CHECK(margin_coverage(t.model, cal) >= 0.9 - 1e-12);

  const auto rec = to_calibration(t.model, 0.8);
  MarginModel back;
  back.net = t.model.net;
  apply_calibration(rec, back);
  CHECK(back.q_star == t.model.q_star);
  CHECK(back.predict(sim::Preset::corridor, narrow) == tn);
}

TEST_CASE("margin field stays above the robot radius") {
  auto env = empty_world(10, 6);
  env.obstacles.push_back(geom::Obstacle::circle({5, 3}, 1.0));
  const auto train = passage_samples(40, 5);
  TrainConfig cfg;
  cfg.epochs = 2;
  auto t = train_margin_net(train, train, cfg);
  t.model.stats[std::string(sim::preset_name(sim::Preset::open))] =
      t.model.stats.at(std::string(sim::preset_name(sim::Preset::corridor)));
  env.preset = sim::Preset::open;
  const MarginField field(t.model, env);
  CHECK(field.min_value() >= kRobotRadius);
  Rng rng(6);
  for (int i = 0; i < 500; ++i) CHECK(field({uniform(rng, 0, 10), uniform(rng, 0, 6)}) >= kRobotRadius);
  CHECK(field.evaluated_cells() > 0);
}
