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

#include "lcp/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>

#include "lcp/errors.hpp"
#include "lcp/io.hpp"
#include "lcp/parallel.hpp"
#include "lcp/random.hpp"

namespace lcp::bench {

std::string_view method_name(Method m) {
  switch (m) {
    case Method::naive: return "naive";
    case Method::standard: return "standard";
    case Method::learnable: return "learnable";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : kMethods)
    if (method_name(m) == name) return m;
  throw ConfigError("unknown method '" + std::string(name) + "' (expected naive, standard or learnable)");
}

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return s;
}

BenchmarkResult monte_carlo(const MonteCarloConfig& cfg) {
  for (Method m : cfg.methods) {
    if (m == Method::standard && !(std::isfinite(cfg.standard_margin) && cfg.standard_margin >= plan::kRobotRadius))
      throw ConfigError("standard method needs a calibrated margin of at least the robot radius");
    if (m == Method::learnable && cfg.learnable == nullptr)
      throw ConfigError("learnable method needs a trained margin checkpoint");
  }
  const std::size_t per_unit = cfg.methods.size();
  const std::size_t units = cfg.presets.size() * cfg.noises.size() * cfg.trials;
  BenchmarkResult out;
  out.trials.resize(units * per_unit);
  parallel_for(units, cfg.workers, [&](std::size_t u) {
    const std::size_t t = u % cfg.trials;
    const std::size_t cell = u / cfg.trials;
    const sim::Preset preset = cfg.presets[cell / cfg.noises.size()];
    const sim::NoiseKind noise = cfg.noises[cell % cfg.noises.size()];
    const std::uint64_t env_seed =
        derive_seed(derive_seed(derive_seed(cfg.seed, 0xbe4c4), static_cast<std::uint64_t>(preset)), t);
    const sim::Environment truth = sim::generate_environment(preset, env_seed);
    const auto map = sim::perceive(truth, noise, cfg.noise_params,
                                   derive_seed(env_seed, 0x100 + static_cast<std::uint64_t>(noise)));
    const sim::Environment perceived = sim::perceived_environment(truth, map);
    const std::uint64_t plan_seed = derive_seed(env_seed, 0x200);
    for (std::size_t k = 0; k < per_unit; ++k) {
      const Method method = cfg.methods[k];
      sim::PlannedPath path;
      double floor = 0.0;
      if (method == Method::learnable) {
        const plan::MarginField field(*cfg.learnable, perceived, cfg.field_cell);
        floor = field.min_value();
        path = sim::rrt_star(perceived, truth.start, truth.goal, [&field](geom::Vec2 p) { return field(p); },
                             cfg.rrt, plan_seed);
      } else {
        const double m = method == Method::naive ? plan::kRobotRadius : cfg.standard_margin;
        floor = m;
        path = sim::rrt_star(perceived, truth.start, truth.goal, [m](geom::Vec2) { return m; }, cfg.rrt,
                             plan_seed);
      }
      TrialRecord& rec = out.trials[u * per_unit + k];
      rec.method = method;
      rec.preset = preset;
      rec.noise = noise;
      rec.trial = t;
      rec.min_margin = std::min(floor, path.min_margin);
      rec.iterations = path.iterations;
      rec.plan_seconds = path.seconds;
      if (path.success) {
        rec.result = sim::evaluate_trial(truth, path.waypoints);
      }
    }
  });
  out.cells = aggregate(out.trials);
  return out;
}

std::vector<CellMetrics> aggregate(std::span<const TrialRecord> trials) {
  using Key = std::tuple<int, int, int>;
  std::map<Key, std::vector<const TrialRecord*>> groups;
  std::map<std::tuple<int, int, std::size_t>, double> naive_length;
  for (const auto& r : trials) {
    groups[{static_cast<int>(r.method), static_cast<int>(r.preset), static_cast<int>(r.noise)}].push_back(&r);
    if (r.method == Method::naive && r.result.planned)
      naive_length[{static_cast<int>(r.preset), static_cast<int>(r.noise), r.trial}] = r.result.path_length;
  }
  std::vector<CellMetrics> cells;
  for (const auto& [key, recs] : groups) {
    CellMetrics c;
    c.method = static_cast<Method>(std::get<0>(key));
    c.preset = static_cast<sim::Preset>(std::get<1>(key));
    c.noise = static_cast<sim::NoiseKind>(std::get<2>(key));
    c.trials = recs.size();
    std::vector<double> len, wp, d0, davg, p0, time;
    double sum_m = 0.0, sum_n = 0.0;
    for (const TrialRecord* r : recs) {
      c.min_margin = std::min(c.min_margin, r->min_margin);
      if (!r->result.planned) continue;
      ++c.planned;
      if (r->result.success) ++c.successes;
      len.push_back(r->result.path_length);
      wp.push_back(r->result.waypoints);
      d0.push_back(r->result.d0);
      davg.push_back(r->result.d_avg);
      p0.push_back(r->result.p0);
      time.push_back(r->result.time);
      const auto it = naive_length.find({std::get<1>(key), std::get<2>(key), r->trial});
      if (it != naive_length.end()) {
        sum_m += r->result.path_length;
        sum_n += it->second;
        ++c.inflation_pairs;
      }
    }
    c.success_rate = c.trials == 0 ? 0.0 : static_cast<double>(c.successes) / static_cast<double>(c.trials);
    c.path_length = summarize(len);
    c.waypoints = summarize(wp);
    c.d0 = summarize(d0);
    c.d_avg = summarize(davg);
    c.p0 = summarize(p0);
    c.time = summarize(time);
    if (c.inflation_pairs > 0 && sum_n > 0.0) c.inflation = sum_m / sum_n - 1.0;
    cells.push_back(c);
  }
  return cells;
}

namespace {

std::string num(double v) { return std::isfinite(v) ? fmt_num(v) : "n/a"; }

}  // namespace

std::string cells_csv(std::span<const CellMetrics> cells) {
  CsvWriter csv({"method", "preset", "noise", "trials", "planned", "success_rate", "path_len_mean",
                 "path_len_std", "waypoints_mean", "waypoints_std", "d0_mean", "d0_std", "d_avg_mean",
                 "d_avg_std", "p0_mean", "p0_std", "time_mean", "time_std", "inflation", "min_margin"});
  for (const auto& c : cells) {
    csv.row({std::string(method_name(c.method)), std::string(sim::preset_name(c.preset)),
             std::string(sim::noise_name(c.noise)), std::to_string(c.trials), std::to_string(c.planned),
             num(c.success_rate), num(c.path_length.mean), num(c.path_length.std), num(c.waypoints.mean),
             num(c.waypoints.std), num(c.d0.mean), num(c.d0.std), num(c.d_avg.mean), num(c.d_avg.std),
             num(c.p0.mean), num(c.p0.std), num(c.time.mean), num(c.time.std), num(c.inflation),
             num(c.min_margin)});
  }
  return csv.text();
}

std::string trials_csv(std::span<const TrialRecord> trials) {
  CsvWriter csv({"method", "preset", "noise", "trial", "planned", "success", "path_len", "waypoints", "d0",
                 "d_avg", "p0", "time", "min_margin"});
  for (const auto& r : trials) {
    csv.row({std::string(method_name(r.method)), std::string(sim::preset_name(r.preset)),
             std::string(sim::noise_name(r.noise)), std::to_string(r.trial), r.result.planned ? "1" : "0",
             r.result.success ? "1" : "0", num(r.result.path_length), num(r.result.waypoints), num(r.result.d0),
             num(r.result.d_avg), num(r.result.p0), num(r.result.time), num(r.min_margin)});
  }
  return csv.text();
}

}  // namespace lcp::bench
