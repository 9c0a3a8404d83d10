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

#include "lcp/sim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "lcp/errors.hpp"
#include "lcp/random.hpp"

namespace lcp::sim {

using geom::kInf;

std::string_view preset_name(Preset p) {
  switch (p) {
    case Preset::office: return "office";
    case Preset::room: return "room";
    case Preset::corridor: return "corridor";
    case Preset::open: return "open";
  }
  return "?";
}

Preset parse_preset(std::string_view name) {
  for (Preset p : kPresets)
    if (preset_name(p) == name) return p;
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

std::string_view noise_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::none: return "none";
    case NoiseKind::transparency: return "transparency";
    case NoiseKind::occlusion: return "occlusion";
    case NoiseKind::localization: return "localization";
    case NoiseKind::combined: return "combined";
  }
  return "?";
}

NoiseKind parse_noise(std::string_view name) {
  for (NoiseKind k : {NoiseKind::none, NoiseKind::transparency, NoiseKind::occlusion,
                      NoiseKind::localization, NoiseKind::combined})
    if (noise_name(k) == name) return k;
  throw ConfigError("unknown noise kind '" + std::string(name) + "'");
}

double Environment::obstacle_clearance(Vec2 p) const { return geom::clearance(obstacles, p); }

double Environment::clearance(Vec2 p) const {
  return std::min(obstacle_clearance(p), geom::boundary_clearance(bounds, p));
}

Environment Environment::translated(Vec2 d) const {
  Environment e = *this;
  e.bounds = {bounds.lo + d, bounds.hi + d};
  for (auto& o : e.obstacles) o = geom::translated(o, d);
  e.start = start + d;
  e.goal = goal + d;
  for (auto& p : e.passages) p.center = p.center + d;
  return e;
}

namespace {

struct Builder {
  Environment env;
  Rng& rng;

  bool keeps_endpoints_clear(const Obstacle& o) const {
    return geom::signed_distance(o, env.start) >= kStartClearance &&
           geom::signed_distance(o, env.goal) >= kStartClearance;
  }

  // Random placement with rejection near start and goal.
  template <typename Make>
  void scatter(std::size_t count, Make make) {
    for (std::size_t i = 0; i < count; ++i) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        Obstacle o = make();
        if (keeps_endpoints_clear(o)) {
          env.obstacles.push_back(o);
          break;
        }
      }
    }
  }

  Vec2 random_point(double pad) {
    return {uniform(rng, env.bounds.lo.x + pad, env.bounds.hi.x - pad),
            uniform(rng, env.bounds.lo.y + pad, env.bounds.hi.y - pad)};
  }

  // Wall from y0 to y1 at x (thickness t), leaving the listed gaps open.
  // Segments adjacent to a gap become glass with probability p_glass.
  void wall_with_gaps(double x, double t, std::vector<std::pair<double, double>> gaps,
                      double p_glass) {
    std::sort(gaps.begin(), gaps.end());
    double y = env.bounds.lo.y;
    for (const auto& [g0, g1] : gaps) {
      if (g0 - y > 1e-9) {
        env.obstacles.push_back(Obstacle::rect({x - t / 2, y}, {x + t / 2, g0}, uniform01(rng) < p_glass));
      }
      env.passages.push_back({{x, 0.5 * (g0 + g1)}, g1 - g0});
      y = g1;
    }
    if (env.bounds.hi.y - y > 1e-9)
      env.obstacles.push_back(
          Obstacle::rect({x - t / 2, y}, {x + t / 2, env.bounds.hi.y}, uniform01(rng) < p_glass));
  }
};

Obstacle random_blob(Rng& rng, Vec2 c, double r_lo, double r_hi, double p_rect, bool glass) {
  if (uniform01(rng) < p_rect) {
    const Vec2 h{uniform(rng, r_lo, r_hi), uniform(rng, r_lo, r_hi)};
    return Obstacle::rect(c - h, c + h, glass);
  }
  return Obstacle::circle(c, uniform(rng, r_lo, r_hi), glass);
}

Environment build_open(Rng& rng) {
  Builder b{{}, rng};
  b.env.bounds = {{0, 0}, {12, 8}};
  b.env.start = {1.0, uniform(rng, 1.5, 6.5)};
  b.env.goal = {11.0, uniform(rng, 1.5, 6.5)};
  const std::size_t n = 10 + uniform_index(rng, 7);
  b.scatter(n, [&] {
    return random_blob(rng, b.random_point(0.5), 0.2, 0.45, 0.3, uniform01(rng) < 0.2);
  });
  return b.env;
}

Environment build_room(Rng& rng) {
  Builder b{{}, rng};
  b.env.bounds = {{0, 0}, {10, 8}};
  b.env.start = {0.8, uniform(rng, 1.5, 6.5)};
  b.env.goal = {9.2, uniform(rng, 1.5, 6.5)};
  const std::size_t tables = 3 + uniform_index(rng, 3);
  for (std::size_t t = 0; t < tables; ++t) {
    Vec2 h{uniform(rng, 0.4, 0.8), uniform(rng, 0.25, 0.5)};
    if (uniform01(rng) < 0.5) std::swap(h.x, h.y);
    const Vec2 c{uniform(rng, 2.0, 8.0), uniform(rng, 1.0, 7.0)};
    const Obstacle table = Obstacle::rect(c - h, c + h);
    if (!b.keeps_endpoints_clear(table)) continue;
    b.env.obstacles.push_back(table);
    const std::size_t chairs = 1 + uniform_index(rng, 3);
    for (std::size_t k = 0; k < chairs; ++k) {
      const std::size_t side = uniform_index(rng, 4);
      const double r = uniform(rng, 0.18, 0.28);
      Vec2 p = c;
      if (side == 0) p.x = c.x - h.x - 0.3 - r;
      if (side == 1) p.x = c.x + h.x + 0.3 + r;
      if (side == 2) p.y = c.y - h.y - 0.3 - r;
      if (side == 3) p.y = c.y + h.y + 0.3 + r;
      const Obstacle chair = Obstacle::circle(p, r);
      if (b.keeps_endpoints_clear(chair)) b.env.obstacles.push_back(chair);
    }
  }
  const std::size_t partitions = 1 + uniform_index(rng, 2);
  b.scatter(partitions, [&] {
    const Vec2 c = b.random_point(1.5);
    Vec2 h{0.04, uniform(rng, 0.5, 1.0)};
    if (uniform01(rng) < 0.5) std::swap(h.x, h.y);
    return Obstacle::rect(c - h, c + h, true);
  });
  b.scatter(2 + uniform_index(rng, 3),
            [&] { return Obstacle::circle(b.random_point(0.5), uniform(rng, 0.2, 0.35)); });
  return b.env;
}

Environment build_office(Rng& rng) {
  Builder b{{}, rng};
  b.env.bounds = {{0, 0}, {14, 8}};
  b.env.start = {1.0, uniform(rng, 1.5, 6.5)};
  b.env.goal = {13.0, uniform(rng, 1.5, 6.5)};
  std::vector<Vec2> doors;
  for (double x : {4.6, 9.4}) {
    const double w = uniform(rng, 1.1, 1.6);
    const double y = uniform(rng, 1.6, 6.4);
    // Glass panels flank the doorway.
    b.wall_with_gaps(x, 0.16, {{y - w / 2, y + w / 2}}, 0.0);
    std::vector<Obstacle> panels;
    for (auto& o : b.env.obstacles) {
      if (o.shape != geom::Shape::rect || std::abs(o.center.x - x) > 1e-9) continue;
      const bool below = o.center.y < y;
      const double edge = below ? o.center.y + o.half.y : o.center.y - o.half.y;
      const double len = 2.0 * o.half.y;
      if (len <= 1.4 || uniform01(rng) < 0.5) continue;
      // Split off a 1.2 m glass panel next to the doorway.
      const double lo = o.center.y - o.half.y, hi = o.center.y + o.half.y;
      if (below) {
        o = Obstacle::rect({x - 0.08, lo}, {x + 0.08, edge - 1.2});
        panels.push_back(Obstacle::rect({x - 0.08, edge - 1.2}, {x + 0.08, edge}, true));
      } else {
        o = Obstacle::rect({x - 0.08, edge + 1.2}, {x + 0.08, hi});
        panels.push_back(Obstacle::rect({x - 0.08, edge}, {x + 0.08, edge + 1.2}, true));
      }
    }
    b.env.obstacles.insert(b.env.obstacles.end(), panels.begin(), panels.end());
    doors.push_back({x, y});
  }
  auto clear_of_doors = [&](const Obstacle& o) {
    for (const Vec2& d : doors)
      if (geom::signed_distance(o, d) < 1.2) return false;
    return true;
  };
  const double rooms[3][2] = {{0.3, 4.3}, {4.9, 9.1}, {9.7, 13.7}};
  for (const auto& room : rooms) {
    const std::size_t desks = 1 + uniform_index(rng, 3);
    for (std::size_t k = 0; k < desks; ++k) {
      for (int attempt = 0; attempt < 30; ++attempt) {
        Vec2 h{0.6, 0.3};
        if (uniform01(rng) < 0.5) std::swap(h.x, h.y);
        const Vec2 c{uniform(rng, room[0] + h.x + 0.2, room[1] - h.x - 0.2), uniform(rng, 0.8, 7.2)};
        const Obstacle desk = Obstacle::rect(c - h, c + h);
        if (!b.keeps_endpoints_clear(desk) || !clear_of_doors(desk)) continue;
        b.env.obstacles.push_back(desk);
        const Obstacle chair = Obstacle::circle({c.x, c.y + (c.y < 4 ? 1 : -1) * (h.y + 0.45)}, 0.22);
        if (b.keeps_endpoints_clear(chair) && clear_of_doors(chair)) b.env.obstacles.push_back(chair);
        break;
      }
    }
  }
  return b.env;
}

Environment build_corridor(Rng& rng) {
  // A 4 m corridor crossed by gates; each gate leaves one narrow and one
  // wide opening.
  Builder b{{}, rng};
  b.env.bounds = {{0, 0}, {16, 4}};
  b.env.start = {1.0, 2.0};
  b.env.goal = {15.0, 2.0};
  for (double x : {4.0, 7.0, 10.0, 13.0}) {
    const double narrow = uniform(rng, 0.8, 1.0);
    const double wide = uniform(rng, 1.5, 1.9);
    const double solid = 4.0 - narrow - wide;
    // Split the solid span into three blocks; the outer two touch the walls.
    const double a = uniform(rng, 0.2, 0.4) * solid;
    const double c = uniform(rng, 0.2, 0.4) * solid;
    const bool narrow_first = uniform01(rng) < 0.5;
    const double w1 = narrow_first ? narrow : wide;
    std::vector<std::pair<double, double>> gaps = {{a, a + w1}, {4.0 - c - (narrow + wide - w1), 4.0 - c}};
    const double t = uniform(rng, 0.3, 0.5);
    b.wall_with_gaps(x, t, gaps, 0.25);
  }
  b.scatter(2 + uniform_index(rng, 3), [&] {
    return Obstacle::circle({uniform(rng, 2.0, 14.0), uniform(rng, 0.5, 3.5)}, uniform(rng, 0.15, 0.25),
                            uniform01(rng) < 0.3);
  });
  return b.env;
}

bool endpoints_clear(const Environment& env) {
  return env.obstacle_clearance(env.start) >= kStartClearance &&
         env.obstacle_clearance(env.goal) >= kStartClearance &&
         geom::boundary_clearance(env.bounds, env.start) >= 0.5 &&
         geom::boundary_clearance(env.bounds, env.goal) >= 0.5;
}

}  // namespace

double obstacle_area_fraction(const Environment& env) {
  // Grid estimate so overlapping obstacles are not double counted.
  const double cell = 0.05;
  std::size_t inside = 0, total = 0;
  for (double y = env.bounds.lo.y + cell / 2; y < env.bounds.hi.y; y += cell)
    for (double x = env.bounds.lo.x + cell / 2; x < env.bounds.hi.x; x += cell) {
      ++total;
      if (env.obstacle_clearance({x, y}) <= 0.0) ++inside;
    }
  return total ? static_cast<double>(inside) / static_cast<double>(total) : 0.0;
}

bool has_feasible_path(const Environment& env, double clearance, double cell) {
  const auto nx = static_cast<std::size_t>(std::ceil(env.bounds.width() / cell));
  const auto ny = static_cast<std::size_t>(std::ceil(env.bounds.height() / cell));
  auto center = [&](std::size_t ix, std::size_t iy) {
    return Vec2{env.bounds.lo.x + (static_cast<double>(ix) + 0.5) * cell,
                env.bounds.lo.y + (static_cast<double>(iy) + 0.5) * cell};
  };
  auto index_of = [&](Vec2 p) {
    const auto ix = std::min(nx - 1, static_cast<std::size_t>((p.x - env.bounds.lo.x) / cell));
    const auto iy = std::min(ny - 1, static_cast<std::size_t>((p.y - env.bounds.lo.y) / cell));
    return iy * nx + ix;
  };
  std::vector<std::uint8_t> seen(nx * ny, 0);
  std::deque<std::size_t> queue;
  const std::size_t s = index_of(env.start), g = index_of(env.goal);
  queue.push_back(s);
  seen[s] = 1;
  while (!queue.empty()) {
    const std::size_t cur = queue.front();
    queue.pop_front();
    if (cur == g) return true;
    const std::size_t ix = cur % nx, iy = cur / nx;
    const std::ptrdiff_t dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const std::ptrdiff_t jx = static_cast<std::ptrdiff_t>(ix) + dx[k];
      const std::ptrdiff_t jy = static_cast<std::ptrdiff_t>(iy) + dy[k];
      if (jx < 0 || jy < 0 || jx >= static_cast<std::ptrdiff_t>(nx) || jy >= static_cast<std::ptrdiff_t>(ny))
        continue;
      const std::size_t next = static_cast<std::size_t>(jy) * nx + static_cast<std::size_t>(jx);
      if (seen[next]) continue;
      seen[next] = 1;
      if (next != g && env.clearance(center(static_cast<std::size_t>(jx), static_cast<std::size_t>(jy))) < clearance)
        continue;
      queue.push_back(next);
    }
  }
  return false;
}

Environment generate_environment(Preset preset, std::uint64_t seed) {
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    Rng rng(derive_seed(seed, attempt));
    Environment env;
    switch (preset) {
      case Preset::open: env = build_open(rng); break;
      case Preset::room: env = build_room(rng); break;
      case Preset::office: env = build_office(rng); break;
      case Preset::corridor: env = build_corridor(rng); break;
    }
    env.preset = preset;
    if (!endpoints_clear(env)) continue;
    if (preset == Preset::open && obstacle_area_fraction(env) > 0.10) continue;
    if (!has_feasible_path(env)) continue;
    return env;
  }
  throw InputError("no feasible " + std::string(preset_name(preset)) + " environment after 100 draws");
}

PerceivedMap perceive(const Environment& env, NoiseKind kind, const NoiseParams& params,
                      std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5e45e));
  PerceivedMap map;
  std::vector<std::size_t> alive(env.obstacles.size());
  std::iota(alive.begin(), alive.end(), 0);
  const bool transparency = kind == NoiseKind::transparency || kind == NoiseKind::combined;
  const bool occlusion = kind == NoiseKind::occlusion || kind == NoiseKind::combined;
  const bool localization = kind == NoiseKind::localization || kind == NoiseKind::combined;

  if (transparency) {
    std::vector<std::size_t> kept;
    for (std::size_t i : alive) {
      // One draw per obstacle, glass or not, keeps the stream aligned.
      const double u = uniform01(rng);
      if (env.obstacles[i].glass && u < params.p_miss)
        map.dropped_transparent.push_back(i);
      else
        kept.push_back(i);
    }
    alive = std::move(kept);
  }
  if (occlusion) {
    std::vector<std::size_t> candidates;
    for (std::size_t i : alive) {
      const Vec2 to = env.obstacles[i].center - env.start;
      const double len = geom::norm(to);
      if (len <= 0.0) continue;
      const Vec2 dir = to * (1.0 / len);
      for (std::size_t j : alive) {
        if (j == i) continue;
        if (geom::ray_cast(env.obstacles[j], env.start, dir) < len) {
          candidates.push_back(i);
          break;
        }
      }
    }
    shuffle(candidates, rng);
    const double want = params.hide_frac * static_cast<double>(candidates.size());
    const auto hide = static_cast<std::size_t>(std::ceil(want - 1e-9));
    candidates.resize(std::min(hide, candidates.size()));
    std::sort(candidates.begin(), candidates.end());
    map.dropped_occluded = candidates;
    std::vector<std::size_t> kept;
    for (std::size_t i : alive)
      if (!std::binary_search(candidates.begin(), candidates.end(), i)) kept.push_back(i);
    alive = std::move(kept);
  }
  std::vector<Vec2> offsets(alive.size());
  if (localization) {
    const double sigma = params.drift_sigma / std::sqrt(2.0);
    if (!params.random_walk) {
      map.offset = {sigma * normal(rng), sigma * normal(rng)};
      std::fill(offsets.begin(), offsets.end(), map.offset);
    } else {
      // Offsets accumulate with distance from the start; the farthest
      // obstacle carries the full variance.
      std::vector<std::size_t> by_dist(alive.size());
      std::iota(by_dist.begin(), by_dist.end(), 0);
      std::stable_sort(by_dist.begin(), by_dist.end(), [&](std::size_t a, std::size_t b) {
        return geom::dist(env.obstacles[alive[a]].center, env.start) <
               geom::dist(env.obstacles[alive[b]].center, env.start);
      });
      const double step = alive.empty() ? 0.0 : sigma / std::sqrt(static_cast<double>(alive.size()));
      Vec2 walk;
      for (std::size_t k : by_dist) {
        walk = walk + Vec2{step * normal(rng), step * normal(rng)};
        offsets[k] = walk;
      }
    }
  }
  for (std::size_t k = 0; k < alive.size(); ++k) {
    map.obstacles.push_back(geom::translated(env.obstacles[alive[k]], offsets[k]));
    map.source.push_back(alive[k]);
  }
  return map;
}

Environment perceived_environment(const Environment& env, const PerceivedMap& map) {
  Environment e = env;
  e.obstacles = map.obstacles;
  return e;
}

double path_length(std::span<const Vec2> path) {
  double len = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) len += geom::dist(path[i - 1], path[i]);
  return len;
}

std::vector<Vec2> densify(std::span<const Vec2> path, double spacing) {
  std::vector<Vec2> out;
  if (path.empty()) return out;
  out.push_back(path.front());
  for (std::size_t i = 1; i < path.size(); ++i) {
    const double len = geom::dist(path[i - 1], path[i]);
    const auto steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(len / spacing - 1e-9)));
    for (std::size_t k = 1; k <= steps; ++k)
      out.push_back(path[i - 1] + (path[i] - path[i - 1]) * (static_cast<double>(k) / static_cast<double>(steps)));
  }
  return out;
}

TrialResult evaluate_trial(const Environment& truth, std::span<const Vec2> path, double robot_radius) {
  TrialResult r;
  if (path.empty()) return r;
  r.planned = true;
  const auto pts = densify(path, kSampleSpacing);
  double sum = 0.0, d0 = kInf;
  std::size_t danger = 0;
  for (const Vec2& p : pts) {
    const double c = truth.clearance(p);
    d0 = std::min(d0, c);
    sum += c;
    if (c < kDangerRadius) ++danger;
  }
  r.d0 = d0;
  r.d_avg = sum / static_cast<double>(pts.size());
  r.p0 = static_cast<double>(danger) / static_cast<double>(pts.size());
  r.success = d0 >= robot_radius;
  r.path_length = path_length(path);
  r.waypoints = static_cast<double>(path.size());
  r.time = r.path_length / kNominalSpeed;
  return r;
}

}  // namespace lcp::sim
