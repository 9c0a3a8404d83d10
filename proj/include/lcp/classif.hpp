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

// Learnable nonconformity scores for classification sets.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lcp/conformal.hpp"
#include "lcp/matrix.hpp"
#include "lcp/nn.hpp"

namespace lcp::classif {

inline constexpr std::size_t kFeatureDim = 8;
inline constexpr double kMarginDelta = 0.8;
inline constexpr double kLambdaEmpty = 1.0;

struct Example {
  std::vector<double> probs;
  int label = 0;
};

using ClassFeature = std::array<double, kFeatureDim>;

/// Throws InputError unless entries are finite, non-negative and sum to 1
/// within 1e-6.
void validate_probs(std::span<const double> p);

/// (p_c, rank/K, p_max - p_c, top1, top3, top5, -p_c ln p_c, p_max). Rank is
/// the 1-based position in descending probability, ties broken by ascending
/// class index.
ClassFeature extract_class_features(std::span<const double> p, std::size_t c);

/// Features for every class of one example, written to K consecutive rows of
/// `out` starting at `row0`.
void extract_all_features(std::span<const double> p, Matrix& out, std::size_t row0);

struct Arch {
  std::size_t h1 = 0, h2 = 0;
  friend bool operator==(const Arch&, const Arch&) = default;
};

Arch select_arch(std::size_t num_classes);
nn::Mlp build_scorer(std::size_t num_classes, std::uint64_t seed);

double margin_loss(double s_true, double s_false_mean);
double coverage_loss(double coverage_hat, double alpha);
/// Mean of |C|/K plus lambda_empty times the fraction of empty sets.
double size_loss(std::span<const std::size_t> set_sizes, std::size_t num_classes,
                 double lambda_empty = kLambdaEmpty);

struct PredictionSet {
  std::vector<std::size_t> labels;
  double q_hat = 0.0;
};

/// Classes whose score is <= q_hat; every class when q_hat is +inf.
PredictionSet build_prediction_set(std::span<const double> scores, double q_hat);

double score_1p(std::span<const double> p, std::size_t c);
/// Total mass of classes with probability >= p_c (c included).
double score_aps(std::span<const double> p, std::size_t c);
void scores_1p_all(std::span<const double> p, std::span<double> out);
void scores_aps_all(std::span<const double> p, std::span<double> out);

/// 1 for epochs 1-10 (margin), 2 for 11-20 (+coverage), 3 from 21 (+size).
int phase_for_epoch(int epoch);

struct TrainConfig {
  double alpha = 0.1;
  int epochs = 30;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  double clip_norm = 0.5;
  double weight_decay = 1e-5;
  double temperature = 0.1;  // soft set-membership sharpness
  double lambda_empty = kLambdaEmpty;
  bool smoothed_calibration = false;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  int phase = 1;
  double lr = 0.0;
  double loss = 0.0;
  double margin = 0.0;
  double coverage_term = 0.0;
  double size_term = 0.0;
  double coverage = 0.0;  // hard batch coverage at the running threshold
  double threshold = 0.0;
  double w_c = 0.0, w_s = 0.0;
};

struct TrainedScorer {
  nn::Mlp net;
  conformal::RunningStats stats;
  std::size_t num_classes = 0;
  Arch arch;
  double q_hat = 0.0;
  double threshold = 0.0;  // final running threshold
  std::vector<EpochRecord> history;
};

TrainedScorer train_classifier_scorer(std::span<const Example> train,
                                      std::span<const Example> cal, const TrainConfig& cfg);

/// n x K learned scores.
Matrix score_examples(const nn::Mlp& net, const conformal::RunningStats& stats,
                      std::span<const Example> data, unsigned workers = 1);

enum class Baseline { one_minus_p, aps };
Matrix baseline_scores(std::span<const Example> data, Baseline kind);

std::vector<double> true_label_scores(const Matrix& scores, std::span<const Example> data);

struct Metrics {
  double coverage = 0.0;
  double mean_size = 0.0;
  double auroc = 0.0;
  double ece = 0.0;
  std::size_t n = 0;
};

/// Coverage and size of the sets {c : s_c <= q_hat}; AUROC of -score with
/// true-label pairs as positives; ECE over 10 equal-width bins of
/// confidence 1 - s(argmin) against top-1 correctness.
Metrics classif_metrics(const Matrix& scores, std::span<const Example> data, double q_hat);
double auroc(const Matrix& scores, std::span<const Example> data);
double expected_calibration_error(const Matrix& scores, std::span<const Example> data,
                                  std::size_t bins = 10);

struct SynthConfig {
  std::size_t num_classes = 100;
  std::size_t n = 10000;
  std::uint64_t seed = 0;
};

/// Heteroscedastic probability vectors: the reported probabilities are
/// sharpened or flattened relative to the label distribution depending on
/// the example's top probability.
std::vector<Example> generate(const SynthConfig& cfg);

std::vector<Example> read_jsonl(const std::string& path);
std::string to_jsonl(std::span<const Example> data);

}  // namespace lcp::classif
