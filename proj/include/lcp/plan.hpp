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

// Learnable per-waypoint safety margins: waypoint features, the margin
// network, its losses, conformal offset calibration and the margin field
// handed to the planner.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lcp/conformal.hpp"
#include "lcp/matrix.hpp"
#include "lcp/nn.hpp"
#include "lcp/rrt_star.hpp"
#include "lcp/sim.hpp"

namespace lcp::plan {

using geom::Vec2;

inline constexpr std::size_t kFeatureDim = 20;
inline constexpr double kRobotRadius = sim::kRobotRadius;
inline constexpr double kMarginCap = 1.0;        // raw margins are clamped to [0, cap]
inline constexpr double kHuberDelta = 1.0;
inline constexpr double kClearanceCap = 3.0;     // d_min, ring clearances, deficits
inline constexpr double kPassageCap = 6.0;
inline constexpr double kRayCap = 1.5;
inline constexpr double kNearGoal = 1.0;
inline constexpr double kEfficiencyTarget = 0.3;

using Feature = std::array<double, kFeatureDim>;

// Feature layout.
enum FeatureIndex : std::size_t {
  kMinClearance = 0,
  kRingClearance1 = 1,
  kRingClearance2 = 2,
  kPassageWidth = 3,
  kDensity = 4,
  kProgress = 5,
  kGoalDistance = 6,
  kCurvature = 7,
  kSpeed = 8,
  kHeadingChange = 9,
  kRay0 = 10,  // 8 sector rays, counter-clockwise from +x
  kNearbyCount = 18,
  kNearGoalFlag = 19,
};

struct WaypointFeatures {
  Feature values{};
  bool short_path = false;  // fewer than 3 waypoints: curvature and heading are 0
};

/// Path-aware features of waypoint i on the perceived map. Throws
/// InputError when the path is empty or i is out of range.
WaypointFeatures extract_waypoint_features(const sim::Environment& perceived,
                                           std::span<const Vec2> path, std::size_t i);

/// Planning-time features of a point before any path exists: progress is
/// |p-s| / (|p-s| + |p-g|), curvature and heading change are 0 and speed is
/// nominal. Geometric entries equal those of extract_waypoint_features.
Feature point_features(const sim::Environment& perceived, Vec2 p);

double huber(double x, double delta = kHuberDelta);
/// Asymmetric Huber: 0.5 Huber(tau - d) when tau >= d, else 2.0 Huber(tau - d).
double safety_loss(double tau, double d);
double safety_loss_grad(double tau, double d);

struct PathLoss {
  double safety = 0.0;      // mean asymmetric Huber
  double efficiency = 0.0;  // 0.3 mean |tau - 0.3|
  double smoothness = 0.0;  // 0.2 sum (tau_{i+1} - tau_i)^2
  double coverage = 0.0;    // (coverage_hat - (1 - alpha))^2
  double total = 0.0;
};
/// Throws InputError unless |taus| == |d| >= 2.
PathLoss path_loss(std::span<const double> taus, std::span<const double> d, double coverage_hat,
                   double alpha);

double clamp_margin(double raw);
/// max(r, tau + q_star).
double final_margin(double tau, double q_star);

/// Margin that would have kept the robot radius on the true map:
/// r + max(0, perceived clearance - true clearance), clamped to the cap.
double required_margin(double perceived_clearance, double true_clearance);
/// Unclamped clearance deficit max(0, perceived - true), capped at kClearanceCap.
double clearance_deficit(double perceived_clearance, double true_clearance);

/// Conformal (1 - alpha) quantile of offset residuals. InputError when empty.
double offset_quantile(std::span<const double> residuals, double alpha);
/// q* from held-out waypoints, residual = required - predicted, so that
/// tau_pred + q* >= d_required holds with probability at least 1 - alpha.
double calibrate_offset(std::span<const double> predicted, std::span<const double> required,
                        double alpha);

// Training data harvested from margin-free (robot radius) plans.
struct PathSample {
  sim::Preset preset = sim::Preset::open;
  sim::NoiseKind noise = sim::NoiseKind::none;
  std::vector<Feature> features;   // planning-time features per waypoint
  std::vector<double> required;    // required_margin per waypoint
  std::vector<double> deficit;     // clearance_deficit per waypoint
};

struct CollectConfig {
  std::vector<sim::Preset> presets{sim::kPresets.begin(), sim::kPresets.end()};
  std::vector<sim::NoiseKind> noises{sim::kNoiseKinds.begin(), sim::kNoiseKinds.end()};
  std::size_t trials = 60;  // per (preset, noise)
  std::uint64_t seed = 0;
  sim::NoiseParams noise_params;
  sim::RrtParams rrt;
  unsigned workers = 1;
};

/// Plans with the bare robot radius on perceived maps and labels every
/// waypoint against the true map. Failed plans contribute nothing. Output
/// order is (preset, noise, trial) regardless of worker count.
std::vector<PathSample> collect_paths(const CollectConfig& cfg);

/// r + (1 - alpha) quantile of pooled clearance deficits: one global margin.
double standard_margin(std::span<const PathSample> cal, double alpha);

struct TrainConfig {
  double alpha = 0.1;
  int epochs = 50;
  std::size_t batch_size = 1024;  // waypoints; batches hold whole paths
  double lr = 1e-3;
  double clip = 0.5;
  double weight_decay = 1e-5;
  double temperature = 0.05;  // soft coverage sigmoid scale, metres
  double efficiency_weight = 0.3;
  double smoothness_weight = 0.2;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double safety = 0.0;
  double efficiency = 0.0;
  double smoothness = 0.0;
  double coverage_term = 0.0;
  double coverage = 0.0;   // hard coverage of tau + running offset
  double threshold = 0.0;  // running offset estimate
  double w_c = 0.0, w_s = 0.0;
};

struct MarginModel {
  nn::Mlp net;
  std::map<std::string, conformal::RunningStats> stats;  // keyed by preset name
  double q_star = 0.0;
  double alpha = 0.1;

  /// Clamped raw margins for feature rows of one preset. StateError when
  /// the preset has no normalization statistics.
  std::vector<double> predict(sim::Preset preset, const Matrix& features) const;
  double predict(sim::Preset preset, const Feature& features) const;
};

nn::Mlp build_margin_net(std::uint64_t seed);

struct TrainedMargin {
  MarginModel model;
  std::vector<EpochRecord> history;
};

/// Trains on `train`, then sets q* from `cal`. Normalization statistics
/// come from the training split, per preset.
TrainedMargin train_margin_net(std::span<const PathSample> train, std::span<const PathSample> cal,
                               const TrainConfig& cfg);

/// Waypoint-level coverage of final margins on labelled paths.
double margin_coverage(const MarginModel& model, std::span<const PathSample> data);

conformal::CalibrationRecord to_calibration(const MarginModel& model, double standard);
/// Restores normalization and q* into `model` (net loaded separately).
void apply_calibration(const conformal::CalibrationRecord& rec, MarginModel& model);

/// Final margins sampled on a regular grid over the perceived map with
/// bilinear lookup. Cells whose perceived clearance exceeds the largest
/// possible margin by more than 2 cells are not evaluated, since no margin
/// can bind there.
class MarginField {
 public:
  MarginField() = default;
  MarginField(const MarginModel& model, const sim::Environment& perceived, double cell = 0.1);

  double operator()(Vec2 p) const;
  double min_value() const noexcept { return min_value_; }
  std::size_t evaluated_cells() const noexcept { return evaluated_; }

 private:
  Vec2 lo_;
  double cell_ = 0.1;
  std::size_t nx_ = 0, ny_ = 0;
  std::vector<double> values_;
  double min_value_ = 0.0;
  std::size_t evaluated_ = 0;
};

}  // namespace lcp::plan
