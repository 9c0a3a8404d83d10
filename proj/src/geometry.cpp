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

#include "lcp/geometry.hpp"

#include <algorithm>

namespace lcp::geom {

double signed_distance(const Obstacle& o, Vec2 p) {
  if (o.shape == Shape::circle) return dist(p, o.center) - o.radius;
  const double qx = std::abs(p.x - o.center.x) - o.half.x;
  const double qy = std::abs(p.y - o.center.y) - o.half.y;
  const double outside = std::hypot(std::max(qx, 0.0), std::max(qy, 0.0));
  return outside + std::min(std::max(qx, qy), 0.0);
}

double area(const Obstacle& o) {
  if (o.shape == Shape::circle) return M_PI * o.radius * o.radius;
  return 4.0 * o.half.x * o.half.y;
}

Obstacle translated(const Obstacle& o, Vec2 d) {
  Obstacle t = o;
  t.center = o.center + d;
  return t;
}

double ray_cast(const Obstacle& o, Vec2 origin, Vec2 dir) {
  if (signed_distance(o, origin) <= 0.0) return 0.0;
  if (o.shape == Shape::circle) {
    const Vec2 m = origin - o.center;
    const double b = dot(m, dir);
    const double c = dot(m, m) - o.radius * o.radius;
    const double disc = b * b - c;
    if (disc < 0.0) return kInf;
    const double t = -b - std::sqrt(disc);
    return t >= 0.0 ? t : kInf;
  }
  double t_near = -kInf, t_far = kInf;
  const double o_axis[2] = {origin.x, origin.y};
  const double d_axis[2] = {dir.x, dir.y};
  const double lo[2] = {o.center.x - o.half.x, o.center.y - o.half.y};
  const double hi[2] = {o.center.x + o.half.x, o.center.y + o.half.y};
  for (int a = 0; a < 2; ++a) {
    if (std::abs(d_axis[a]) < 1e-15) {
      if (o_axis[a] < lo[a] || o_axis[a] > hi[a]) return kInf;
      continue;
    }
    double t1 = (lo[a] - o_axis[a]) / d_axis[a];
    double t2 = (hi[a] - o_axis[a]) / d_axis[a];
    if (t1 > t2) std::swap(t1, t2);
    t_near = std::max(t_near, t1);
    t_far = std::min(t_far, t2);
    if (t_near > t_far) return kInf;
  }
  return t_near >= 0.0 ? t_near : kInf;
}

double clearance(std::span<const Obstacle> obstacles, Vec2 p) {
  double best = kInf;
  for (const auto& o : obstacles) best = std::min(best, signed_distance(o, p));
  return best;
}

double boundary_clearance(const Bounds& b, Vec2 p) {
  return std::min({p.x - b.lo.x, b.hi.x - p.x, p.y - b.lo.y, b.hi.y - p.y});
}

double boundary_ray(const Bounds& b, Vec2 origin, Vec2 dir) {
  double t = kInf;
  if (dir.x > 1e-15) t = std::min(t, (b.hi.x - origin.x) / dir.x);
  if (dir.x < -1e-15) t = std::min(t, (b.lo.x - origin.x) / dir.x);
  if (dir.y > 1e-15) t = std::min(t, (b.hi.y - origin.y) / dir.y);
  if (dir.y < -1e-15) t = std::min(t, (b.lo.y - origin.y) / dir.y);
  return std::max(0.0, t);
}

}  // namespace lcp::geom
