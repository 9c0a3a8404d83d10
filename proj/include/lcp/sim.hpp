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

#pragma once

// Procedural 2D planning worlds, sensing degradations, trial metrics and
// the Monte Carlo benchmark harness.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lcp/geometry.hpp"

namespace lcp::sim {

using geom::Bounds;
using geom::Obstacle;
using geom::Vec2;

inline constexpr double kRobotRadius = 0.17;
inline constexpr double kDangerRadius = 0.20;
inline constexpr double kSampleSpacing = 0.05;
inline constexpr double kNominalSpeed = 0.5;  // m/s

enum class Preset { office = 0, room = 1, corridor = 2, open = 3 };
inline constexpr std::array<Preset, 4> kPresets = {Preset::office, Preset::room, Preset::corridor,
                                                   Preset::open};
std::string_view preset_name(Preset p);
Preset parse_preset(std::string_view name);  // ConfigError when unknown

struct Passage {
  Vec2 center;
  double width = 0.0;
};

struct Environment {
  Bounds bounds;
  std::vector<Obstacle> obstacles;
  Vec2 start, goal;
  Preset preset = Preset::open;
  std::vector<Passage> passages;  // deliberate gaps placed by the generator

  /// Signed distance to the nearest obstacle (+inf when none).
  double obstacle_clearance(Vec2 p) const;
  /// Minimum of obstacle and boundary clearance.
  double clearance(Vec2 p) const;
  Environment translated(Vec2 d) const;
};

/// Deterministic per (preset, seed). Start and goal keep at least
/// kStartClearance from every obstacle and a path with robot-radius
/// clearance is verified on a 0.1 m grid. Infeasible draws are resampled up
/// to 100 times before an InputError is raised.
Environment generate_environment(Preset preset, std::uint64_t seed);
inline constexpr double kStartClearance = 1.2;

/// Grid search for a start-goal connection with the given clearance.
bool has_feasible_path(const Environment& env, double clearance = kRobotRadius, double cell = 0.1);
double obstacle_area_fraction(const Environment& env);

enum class NoiseKind { none = 0, transparency = 1, occlusion = 2, localization = 3, combined = 4 };
inline constexpr std::array<NoiseKind, 4> kNoiseKinds = {NoiseKind::transparency, NoiseKind::occlusion,
                                                         NoiseKind::localization, NoiseKind::combined};
std::string_view noise_name(NoiseKind k);
NoiseKind parse_noise(std::string_view name);

struct NoiseParams {
  double p_miss = 0.188;      // glass obstacles dropped independently
  double hide_frac = 0.575;   // share of occluded obstacles hidden
  double drift_sigma = 0.5;   // offset magnitude scale, per axis sigma / sqrt(2)
  bool random_walk = false;   // per-obstacle random walk instead of one rigid offset
};

struct PerceivedMap {
  std::vector<Obstacle> obstacles;
  std::vector<std::size_t> source;  // index of each perceived obstacle in the true map
  std::vector<std::size_t> dropped_transparent;
  std::vector<std::size_t> dropped_occluded;
  Vec2 offset;  // rigid drift (zero for the random-walk variant)
};

/// Transparency drops each glass obstacle with probability p_miss.
/// Occlusion hides ceil(hide_frac * m) of the m obstacles whose centre is
/// ray-blocked from the start by another obstacle. Localization translates
/// every perceived obstacle by one Gaussian offset. Combined applies the
/// three in that order.
PerceivedMap perceive(const Environment& env, NoiseKind kind, const NoiseParams& params,
                      std::uint64_t seed);

/// The environment as the robot senses it: same bounds, start and goal.
Environment perceived_environment(const Environment& env, const PerceivedMap& map);

struct TrialResult {
  bool planned = false;
  bool success = false;
  double path_length = 0.0;
  double waypoints = 0.0;
  double d0 = 0.0;
  double d_avg = 0.0;
  double p0 = 0.0;
  double time = 0.0;  // traversal time at the nominal speed
  double min_margin = 0.0;
};

/// Clearances are measured on the true map at kSampleSpacing along the path.
TrialResult evaluate_trial(const Environment& truth, std::span<const Vec2> path,
                           double robot_radius = kRobotRadius);

/// Points every `spacing` metres along the polyline, endpoints included.
std::vector<Vec2> densify(std::span<const Vec2> path, double spacing);
double path_length(std::span<const Vec2> path);

}  // namespace lcp::sim
