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

// RRT* over a perceived map with position-dependent obstacle inflation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "lcp/sim.hpp"

namespace lcp::sim {

/// Inflation radius applied to obstacles around a candidate point.
using MarginFn = std::function<double(Vec2)>;

struct RrtParams {
  double step = 0.5;
  double goal_bias = 0.05;
  std::size_t max_iterations = 5000;
  double gamma = 8.0;        // rewiring radius min(gamma sqrt(log n / n), max_radius)
  double max_radius = 1.0;
  double check_spacing = 0.05;
  bool shortcut = true;      // greedy line-of-sight smoothing of the result
  double resample = 0.25;    // waypoint spacing of the returned path
};

struct PlannedPath {
  bool success = false;
  std::vector<Vec2> waypoints;
  std::vector<double> margins;  // margin used at each waypoint
  std::size_t iterations = 0;
  std::size_t tree_size = 0;
  double min_margin = geom::kInf;  // smallest margin the planner applied
  double seconds = 0.0;
};

/// A point is free when its obstacle clearance is at least margin(point)
/// and its boundary clearance at least the robot radius.
PlannedPath rrt_star(const Environment& perceived, Vec2 start, Vec2 goal, const MarginFn& margin,
                     const RrtParams& params, std::uint64_t seed);

}  // namespace lcp::sim
