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

// Task-agnostic split-conformal machinery.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace lcp::conformal {

struct QuantileResult {
  double q_hat = 0.0;     // +inf when the rank overflows the sample
  std::size_t rank = 0;   // ceil((n+1)(1-alpha)), 1-based
  std::size_t n = 0;

  bool is_infinite() const noexcept { return rank > n; }
  double level() const noexcept { return static_cast<double>(rank) / static_cast<double>(n); }
};

/// ceil((n+1)(1-alpha)) with a relative guard against round-up from the
/// binary representation of alpha.
std::size_t quantile_rank(std::size_t n, double alpha);

/// Order statistic of rank ceil((n+1)(1-alpha)) over the sorted multiset.
/// Throws InputError for an empty sample, alpha outside (0,1) or non-finite
/// scores.
QuantileResult conformal_quantile(std::span<const double> scores, double alpha);

struct SmoothedQuantile {
  double q_hat = 0.0;
  std::size_t k = 0;      // window centre after clamping, 1-based
  bool fallback = false;  // n < 5: plain conformal quantile was used
};

/// Weighted mean of the sorted scores s_{k-3}..s_{k+1} (1-based, inclusive)
/// with weights 1.5 - 0.1|i-k|, where k is the conformal rank clamped into
/// [4, n-1]. Input must be sorted ascending.
SmoothedQuantile smoothed_quantile(std::span<const double> sorted_scores, double alpha);

/// Exponential moving average of per-batch quantiles:
/// tau <- beta * tau + (1 - beta) * q.
class EmaThreshold {
 public:
  explicit EmaThreshold(double initial_tau = 0.0, double beta = 0.95)
      : tau_(initial_tau), beta_(beta) {}

  /// Returns false (and leaves tau untouched) for a non-finite q.
  bool update(double q_hat);

  double tau() const noexcept { return tau_; }
  double beta() const noexcept { return beta_; }
  std::size_t skipped() const noexcept { return skipped_; }

 private:
  double tau_;
  double beta_;
  std::size_t skipped_ = 0;
};

double empirical_coverage(const std::vector<bool>& indicators);
double empirical_coverage(std::size_t hits, std::size_t total);

struct LossWeights {
  double coverage = 1.0;
  double size = 1.5;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// (2.0, 1.0) when coverage_hat < 1 - alpha - epsilon, else (1.0, 1.5).
LossWeights dynamic_weights(double coverage_hat, double alpha, double epsilon = 0.02);

/// Per-dimension running mean and sample standard deviation (Welford).
class RunningStats {
 public:
  RunningStats() = default;
  explicit RunningStats(std::size_t dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}

  void push(std::span<const double> x);
  std::size_t dim() const noexcept { return mean_.size(); }
  std::uint64_t count() const noexcept { return count_; }
  const std::vector<double>& mean() const noexcept { return mean_; }
  std::vector<double> stddev() const;

  /// (x - mu) / max(sigma, 1e-6). Requires at least two samples.
  std::vector<double> standardize(std::span<const double> x) const;
  std::vector<double> destandardize(std::span<const double> z) const;
  /// Row-wise standardization into `out` (same length as x).
  void standardize_into(std::span<const double> x, std::span<double> out) const;

  // Raw state access for serialization.
  const std::vector<double>& m2() const noexcept { return m2_; }
  static RunningStats from_state(std::vector<double> mean, std::vector<double> m2,
                                 std::uint64_t count);

  friend bool operator==(const RunningStats&, const RunningStats&) = default;

 private:
  std::vector<double> mean_;
  std::vector<double> m2_;
  std::uint64_t count_ = 0;
};

inline constexpr double kStdFloor = 1e-6;

/// Calibration sidecar written next to a trained scorer.
struct CalibrationRecord {
  std::string task;
  double alpha = 0.1;
  double q_hat = 0.0;                 // +inf allowed
  std::map<std::string, double> values;  // task-specific thresholds (tau, q_star, ...)
  std::map<std::string, RunningStats> stats;
  std::map<std::string, std::string> notes;

  friend bool operator==(const CalibrationRecord&, const CalibrationRecord&) = default;
};

std::string to_json(const CalibrationRecord& rec);
CalibrationRecord calibration_from_json(const std::string& text);
void save_calibration(const CalibrationRecord& rec, const std::string& path);
CalibrationRecord load_calibration(const std::string& path);

}  // namespace lcp::conformal
