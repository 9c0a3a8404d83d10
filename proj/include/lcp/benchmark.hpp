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

// Monte Carlo planning benchmark comparing a bare robot-radius margin, one
// global conformal margin and the learned per-point margin field.

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lcp/plan.hpp"
#include "lcp/rrt_star.hpp"
#include "lcp/sim.hpp"

namespace lcp::bench {

enum class Method { naive = 0, standard = 1, learnable = 2 };
inline constexpr std::array<Method, 3> kMethods = {Method::naive, Method::standard, Method::learnable};
std::string_view method_name(Method m);
Method parse_method(std::string_view name);  // ConfigError when unknown

struct MonteCarloConfig {
  std::vector<Method> methods{kMethods.begin(), kMethods.end()};
  std::vector<sim::Preset> presets{sim::kPresets.begin(), sim::kPresets.end()};
  std::vector<sim::NoiseKind> noises{sim::kNoiseKinds.begin(), sim::kNoiseKinds.end()};
  std::size_t trials = 200;  // per (preset, noise)
  std::uint64_t seed = 0;
  sim::NoiseParams noise_params;
  sim::RrtParams rrt;
  unsigned workers = 1;
  double standard_margin = std::numeric_limits<double>::quiet_NaN();  // needed for standard rows
  const plan::MarginModel* learnable = nullptr;                      // needed for learnable rows
  double field_cell = 0.1;
};

struct TrialRecord {
  Method method = Method::naive;
  sim::Preset preset = sim::Preset::open;
  sim::NoiseKind noise = sim::NoiseKind::none;
  std::size_t trial = 0;
  sim::TrialResult result;
  double min_margin = 0.0;  // smallest margin the planner could apply
  std::size_t iterations = 0;
  double plan_seconds = 0.0;  // wall clock, excluded from deterministic outputs
};

struct Summary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();  // sample std, NaN below two values
};
Summary summarize(std::span<const double> values);

struct CellMetrics {
  Method method = Method::naive;
  sim::Preset preset = sim::Preset::open;
  sim::NoiseKind noise = sim::NoiseKind::none;
  std::size_t trials = 0, planned = 0, successes = 0;
  double success_rate = 0.0;
  // Path statistics over planned trials.
  Summary path_length, waypoints, d0, d_avg, p0, time;
  // sum(L_method) / sum(L_naive) - 1 over trials where both planned; NaN
  // without naive rows or pairs.
  double inflation = std::numeric_limits<double>::quiet_NaN();
  std::size_t inflation_pairs = 0;
  double min_margin = std::numeric_limits<double>::infinity();
};

struct BenchmarkResult {
  std::vector<TrialRecord> trials;  // (preset, noise, trial, method) order
  std::vector<CellMetrics> cells;   // (method, preset, noise) order
};

/// Trial seeds derive from (seed, preset, trial), so every method and noise
/// kind sees the same world and planner stream, and results do not depend
/// on the worker count. ConfigError when a requested method lacks its
/// margin source.
BenchmarkResult monte_carlo(const MonteCarloConfig& cfg);

std::vector<CellMetrics> aggregate(std::span<const TrialRecord> trials);

std::string cells_csv(std::span<const CellMetrics> cells);
std::string trials_csv(std::span<const TrialRecord> trials);

}  // namespace lcp::bench
