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

#include "lcp/rrt_star.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "lcp/random.hpp"

namespace lcp::sim {

namespace {

class Checker {
 public:
  Checker(const Environment& env, const MarginFn& margin, double spacing)
      : env_(env), margin_(margin), spacing_(spacing) {}

  bool point(Vec2 p) {
    if (geom::boundary_clearance(env_.bounds, p) < kRobotRadius) return false;
    const double m = margin_(p);
    min_margin_ = std::min(min_margin_, m);
    return env_.obstacle_clearance(p) >= m;
  }

  // Endpoint `a` is assumed already checked.
  bool edge(Vec2 a, Vec2 b) {
    const double len = geom::dist(a, b);
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(len / spacing_ - 1e-9)));
    for (std::size_t k = 1; k <= n; ++k)
      if (!point(a + (b - a) * (static_cast<double>(k) / static_cast<double>(n)))) return false;
    return true;
  }

  double min_margin() const { return min_margin_; }

 private:
  const Environment& env_;
  const MarginFn& margin_;
  double spacing_;
  double min_margin_ = geom::kInf;
};

// Uniform bucket grid over the bounds for nearest and radius queries.
class NodeGrid {
 public:
  NodeGrid(const Bounds& b, double cell) : lo_(b.lo), cell_(cell) {
    nx_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(b.width() / cell)));
    ny_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(b.height() / cell)));
    cells_.resize(nx_ * ny_);
  }

  void insert(std::size_t id, Vec2 p) { cells_[index(p)].push_back(id); }

  std::size_t nearest(Vec2 q, const std::vector<Vec2>& pos) const {
    const auto [cx, cy] = coords(q);
    double best = geom::kInf;
    std::size_t best_id = 0;
    const std::size_t max_ring = std::max(nx_, ny_);
    for (std::size_t ring = 0; ring <= max_ring; ++ring) {
      // Every point outside the current ring is at least ring * cell away.
      if (ring > 0 && best <= sq((static_cast<double>(ring) - 1.0) * cell_)) break;
      visit_ring(cx, cy, ring, [&](std::size_t c) {
        for (std::size_t id : cells_[c]) {
          const Vec2 d = pos[id] - q;
          const double d2 = d.x * d.x + d.y * d.y;
          if (d2 < best || (d2 == best && id < best_id)) {
            best = d2;
            best_id = id;
          }
        }
      });
    }
    return best_id;
  }

  void within(Vec2 q, double radius, const std::vector<Vec2>& pos, std::vector<std::size_t>& out) const {
    out.clear();
    const auto span = static_cast<std::ptrdiff_t>(std::ceil(radius / cell_));
    const auto [cx, cy] = coords(q);
    for (std::ptrdiff_t y = cy - span; y <= cy + span; ++y) {
      if (y < 0 || y >= static_cast<std::ptrdiff_t>(ny_)) continue;
      for (std::ptrdiff_t x = cx - span; x <= cx + span; ++x) {
        if (x < 0 || x >= static_cast<std::ptrdiff_t>(nx_)) continue;
        for (std::size_t id : cells_[static_cast<std::size_t>(y) * nx_ + static_cast<std::size_t>(x)])
          if (geom::dist(pos[id], q) <= radius) out.push_back(id);
      }
    }
    std::sort(out.begin(), out.end());
  }

 private:
  static double sq(double v) { return v * v; }

  std::pair<std::ptrdiff_t, std::ptrdiff_t> coords(Vec2 p) const {
    auto clampi = [](double v, std::size_t n) {
      return std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(std::floor(v)), 0,
                                        static_cast<std::ptrdiff_t>(n) - 1);
    };
    return {clampi((p.x - lo_.x) / cell_, nx_), clampi((p.y - lo_.y) / cell_, ny_)};
  }

  std::size_t index(Vec2 p) const {
    const auto [x, y] = coords(p);
    return static_cast<std::size_t>(y) * nx_ + static_cast<std::size_t>(x);
  }

  template <typename F>
  void visit_ring(std::ptrdiff_t cx, std::ptrdiff_t cy, std::size_t ring, F f) const {
    const auto r = static_cast<std::ptrdiff_t>(ring);
    for (std::ptrdiff_t y = cy - r; y <= cy + r; ++y) {
      if (y < 0 || y >= static_cast<std::ptrdiff_t>(ny_)) continue;
      const bool edge_row = y == cy - r || y == cy + r;
      for (std::ptrdiff_t x = cx - r; x <= cx + r; x += (edge_row || r == 0) ? 1 : 2 * r) {
        if (x < 0 || x >= static_cast<std::ptrdiff_t>(nx_)) continue;
        f(static_cast<std::size_t>(y) * nx_ + static_cast<std::size_t>(x));
      }
    }
  }

  Vec2 lo_;
  double cell_;
  std::size_t nx_ = 1, ny_ = 1;
  std::vector<std::vector<std::size_t>> cells_;
};

std::vector<Vec2> shortcut(const std::vector<Vec2>& path, Checker& check) {
  if (path.size() < 3) return path;
  std::vector<Vec2> out{path.front()};
  std::size_t i = 0;
  while (i + 1 < path.size()) {
    std::size_t j = path.size() - 1;
    while (j > i + 1 && !check.edge(path[i], path[j])) --j;
    out.push_back(path[j]);
    i = j;
  }
  return out;
}

}  // namespace

PlannedPath rrt_star(const Environment& perceived, Vec2 start, Vec2 goal, const MarginFn& margin,
                     const RrtParams& params, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  PlannedPath out;
  Checker check(perceived, margin, params.check_spacing);
  auto finish = [&] {
    out.min_margin = check.min_margin();
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  };
  if (!check.point(start) || !check.point(goal)) return finish();

  Rng rng(derive_seed(seed, 0x7277));
  std::vector<Vec2> pos{start};
  std::vector<std::ptrdiff_t> parent{-1};
  std::vector<double> cost{0.0};
  std::vector<std::vector<std::size_t>> children(1);
  std::vector<std::size_t> goal_links;  // nodes with a free edge to the goal

  auto propagate = [&](std::size_t root) {
    std::vector<std::size_t> stack{root};
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      for (std::size_t c : children[u]) {
        cost[c] = cost[u] + geom::dist(pos[u], pos[c]);
        stack.push_back(c);
      }
    }
  };

  const Bounds& bb = perceived.bounds;
  NodeGrid grid(bb, 0.5);
  grid.insert(0, start);
  std::vector<std::size_t> near;
  std::vector<std::pair<double, std::size_t>> ranked;
  std::vector<std::int8_t> edge_ok;  // per near node: -1 unknown, 0 blocked, 1 free
  for (std::size_t it = 0; it < params.max_iterations; ++it) {
    ++out.iterations;
    Vec2 sample = goal;
    if (uniform01(rng) >= params.goal_bias)
      sample = {uniform(rng, bb.lo.x, bb.hi.x), uniform(rng, bb.lo.y, bb.hi.y)};
    const std::size_t nearest = grid.nearest(sample, pos);
    const double dn = geom::dist(pos[nearest], sample);
    if (dn < 1e-9) continue;
    const Vec2 node = dn <= params.step ? sample : pos[nearest] + (sample - pos[nearest]) * (params.step / dn);
    if (!check.edge(pos[nearest], node)) continue;

    const double n = static_cast<double>(pos.size() + 1);
    const double radius = std::min(params.gamma * std::sqrt(std::log(n) / n), params.max_radius);
    grid.within(node, radius, pos, near);

    // Cheapest collision-free parent: test candidates in cost order.
    ranked.clear();
    for (std::size_t j = 0; j < near.size(); ++j)
      ranked.emplace_back(cost[near[j]] + geom::dist(pos[near[j]], node), j);
    std::sort(ranked.begin(), ranked.end());
    edge_ok.assign(near.size(), -1);
    std::size_t best_parent = nearest;
    double best_cost = cost[nearest] + geom::dist(pos[nearest], node);
    for (const auto& [c, j] : ranked) {
      if (c >= best_cost) break;
      const bool ok = check.edge(pos[near[j]], node);
      edge_ok[j] = ok ? 1 : 0;
      if (ok) {
        best_cost = c;
        best_parent = near[j];
        break;
      }
    }
    const std::size_t id = pos.size();
    pos.push_back(node);
    parent.push_back(static_cast<std::ptrdiff_t>(best_parent));
    cost.push_back(best_cost);
    children.emplace_back();
    children[best_parent].push_back(id);
    grid.insert(id, node);

    for (std::size_t j = 0; j < near.size(); ++j) {
      const std::size_t k = near[j];
      if (k == best_parent) continue;
      const double c = best_cost + geom::dist(node, pos[k]);
      if (!(c + 1e-12 < cost[k])) continue;
      if (edge_ok[j] == -1) edge_ok[j] = check.edge(pos[k], node) ? 1 : 0;
      if (edge_ok[j] == 0) continue;
      auto& siblings = children[static_cast<std::size_t>(parent[k])];
      siblings.erase(std::find(siblings.begin(), siblings.end(), k));
      parent[k] = static_cast<std::ptrdiff_t>(id);
      children[id].push_back(k);
      cost[k] = c;
      propagate(k);
    }
    if (geom::dist(node, goal) <= params.step && check.edge(node, goal)) goal_links.push_back(id);
  }
  out.tree_size = pos.size();
  if (goal_links.empty()) return finish();

  std::size_t best_link = goal_links.front();
  double best_total = geom::kInf;
  for (std::size_t k : goal_links) {
    const double c = cost[k] + geom::dist(pos[k], goal);
    if (c < best_total) {
      best_total = c;
      best_link = k;
    }
  }
  std::vector<Vec2> path{goal};
  for (std::ptrdiff_t k = static_cast<std::ptrdiff_t>(best_link); k >= 0; k = parent[static_cast<std::size_t>(k)])
    path.push_back(pos[static_cast<std::size_t>(k)]);
  std::reverse(path.begin(), path.end());
  if (params.shortcut) path = shortcut(path, check);
  out.waypoints = params.resample > 0.0 ? densify(path, params.resample) : path;
  out.margins.reserve(out.waypoints.size());
  for (const Vec2& p : out.waypoints) out.margins.push_back(margin(p));
  out.success = true;
  finish();
  for (double m : out.margins) out.min_margin = std::min(out.min_margin, m);
  return out;
}

}  // namespace lcp::sim
