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

// Planar primitives: points, circular and axis-aligned rectangular
// obstacles, signed distances and ray casts.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>

namespace lcp::geom {

struct Vec2 {
  double x = 0.0, y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
  friend Vec2 operator*(double s, Vec2 a) { return {a.x * s, a.y * s}; }
  friend bool operator==(Vec2, Vec2) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double dist(Vec2 a, Vec2 b) { return norm(a - b); }

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Shape : std::uint8_t { circle = 0, rect = 1 };

/// Circle (center, radius) or axis-aligned rectangle (center, half extents).
struct Obstacle {
  Shape shape = Shape::circle;
  Vec2 center;
  double radius = 0.0;
  Vec2 half;
  bool glass = false;

  static Obstacle circle(Vec2 c, double r, bool glass = false) {
    return {Shape::circle, c, r, {}, glass};
  }
  static Obstacle rect(Vec2 lo, Vec2 hi, bool glass = false) {
    return {Shape::rect, (lo + hi) * 0.5, 0.0, (hi - lo) * 0.5, glass};
  }
  friend bool operator==(const Obstacle&, const Obstacle&) = default;
};

/// Negative inside the obstacle.
double signed_distance(const Obstacle& o, Vec2 p);
double area(const Obstacle& o);
Obstacle translated(const Obstacle& o, Vec2 d);

/// Distance along the unit direction `dir` from `origin` to the obstacle
/// surface; 0 when the origin is inside, +inf when the ray misses.
double ray_cast(const Obstacle& o, Vec2 origin, Vec2 dir);

/// Minimum signed distance over a set of obstacles (+inf when empty).
double clearance(std::span<const Obstacle> obstacles, Vec2 p);

struct Bounds {
  Vec2 lo, hi;
  double width() const { return hi.x - lo.x; }
  double height() const { return hi.y - lo.y; }
  friend bool operator==(const Bounds&, const Bounds&) = default;
};

/// Distance to the nearest wall of the bounds; negative outside.
double boundary_clearance(const Bounds& b, Vec2 p);
/// Ray length from an interior point to the bounds.
double boundary_ray(const Bounds& b, Vec2 origin, Vec2 dir);

}  // namespace lcp::geom
