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

// Learnable per-coordinate intervals for bounding boxes.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lcp/conformal.hpp"
#include "lcp/matrix.hpp"
#include "lcp/nn.hpp"

namespace lcp::detect {

inline constexpr std::size_t kFeatureDim = 13;
inline constexpr double kWidthFloor = 1e-3;  // pixels

struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double width() const noexcept { return x1 - x0; }
  double height() const noexcept { return y1 - y0; }
  double area() const noexcept { return width() * height(); }
  std::array<double, 4> coords() const noexcept { return {x0, y0, x1, y1}; }
  friend bool operator==(const Box&, const Box&) = default;
};

struct DetRecord {
  double img_w = 0, img_h = 0;
  Box pred, gt;
  double conf = 0;
  friend bool operator==(const DetRecord&, const DetRecord&) = default;
};

using Widths = std::array<double, 4>;
using BoxFeature = std::array<double, kFeatureDim>;

/// Throws InputError for non-positive image size, degenerate boxes, boxes
/// outside the image by more than 5% of its size, or confidence outside
/// [0,1].
void validate(const DetRecord& rec);

/// Normalized corners (4), confidence, ln(area px), aspect w/h, centroid
/// offset from image centre (x, y; divided by image size), normalized
/// distances to the left, top, right and bottom image edges.
BoxFeature extract_box_features(const DetRecord& rec);

enum class SizeCategory { small = 0, medium = 1, large = 2 };
inline constexpr std::array<SizeCategory, 3> kCategories = {SizeCategory::small, SizeCategory::medium,
                                                            SizeCategory::large};

/// small: sqrt(area) < 32, medium: < 96, large otherwise (ground-truth box).
SizeCategory size_category(const Box& box);
double category_target(SizeCategory c);
const char* category_name(SizeCategory c);

/// 13-256-128-64-4, ELU, softplus head.
nn::Mlp build_width_net(std::uint64_t seed);

/// n x 4 half-widths (pixels): softplus output plus kWidthFloor.
Matrix predict_widths(const nn::Mlp& net, const conformal::RunningStats& stats,
                      std::span<const DetRecord> data, unsigned workers = 1);

/// Mean interval width 1/4 * sum_j 2 w_j tau.
double mpiw(const Widths& w, double tau);
/// mpiw divided by the mean box side (box_w + box_h) / 2.
double mpiw_loss(const Widths& w, double tau, double box_w, double box_h);

/// 5(c-0.89)^2 above 0.905, 10(0.89-c)^2 below 0.88, zero between.
double coverage_penalty(double coverage_hat);
/// The same dead-zone shape recentred on `target` (band target-0.01 to
/// target+0.015).
double coverage_penalty(double coverage_hat, double target);

/// max_j |gt_j - pred_j| / w_j: the smallest scale that covers the record.
double max_error_ratio(const DetRecord& rec, const Widths& w);
double max_abs_error(const DetRecord& rec);

/// Conformal quantile of max_error_ratio over the calibration split.
double calibrate_tau(std::span<const DetRecord> cal, const Matrix& widths, double alpha);

bool interval_covered(const DetRecord& rec, const Widths& w, double tau);

struct CategoryMetrics {
  std::size_t n = 0;
  double coverage = 0.0;
  double mpiw = 0.0;  // pixels
};

struct StratifiedMetrics {
  CategoryMetrics overall;
  std::array<CategoryMetrics, 3> by_category;
};

StratifiedMetrics size_stratified_metrics(std::span<const DetRecord> data, const Matrix& widths,
                                          double tau);

/// Fixed additive margin: conformal quantile of the infinity-norm error.
double standard_cp_margin(std::span<const DetRecord> cal, double alpha);
StratifiedMetrics standard_cp_metrics(std::span<const DetRecord> data, double margin);

struct StandardCp {
  double margin = 0.0;
  StratifiedMetrics metrics;
};
StandardCp standard_cp_detection(std::span<const DetRecord> cal, std::span<const DetRecord> test,
                                 double alpha);

struct TrainConfig {
  double alpha = 0.1;
  int epochs = 30;
  std::size_t batch_size = 512;
  double lr = 1e-3;
  double clip_norm = 0.5;
  double weight_decay = 1e-5;
  double temperature = 0.1;  // soft coverage sharpness, relative to tau
  std::uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double coverage_term = 0.0;
  double mpiw_term = 0.0;
  double coverage = 0.0;  // hard coverage at the running threshold
  double threshold = 0.0;
  std::array<double, 3> category_coverage{};
  double w_c = 0.0, w_s = 0.0;
};

struct TrainedWidthNet {
  nn::Mlp net;
  conformal::RunningStats stats;
  double tau = 0.0;        // calibrated scale
  double threshold = 0.0;  // final running threshold
  std::vector<EpochRecord> history;
};

TrainedWidthNet train_width_net(std::span<const DetRecord> train, std::span<const DetRecord> cal,
                                const TrainConfig& cfg);

struct SynthConfig {
  std::size_t n = 10000;
  std::uint64_t seed = 0;
  double img_w = 640, img_h = 480;
  double noise_scale = 0.05;    // error sigma per sqrt(area) pixel
  bool heteroscedastic = true;  // false: one sigma for every box
};

/// Ground-truth boxes with log-uniform side 10-300 px; predictions perturb
/// each coordinate with sigma = noise_scale * sqrt(area) * (0.5 + 1 - conf).
std::vector<DetRecord> generate(const SynthConfig& cfg);

std::vector<DetRecord> read_jsonl(const std::string& path);
std::string to_jsonl(std::span<const DetRecord> data);

}  // namespace lcp::detect
