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

// Batch entry points behind the command-line tool: configuration parsing,
// dataset synthesis, training, evaluation, the planning benchmark and
// reports. Every output is a pure function of the configuration and seed.

#include <array>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lcp/sim.hpp"

namespace lcp::cli {

/// Configuration grammar: one `key = value` per line, `#` starts a comment,
/// blank lines are ignored, lists are comma separated. Unknown or repeated
/// keys are errors.
struct RunConfig {
  std::string task = "classif";  // classif | detect | plan | simulate (same as plan)
  double alpha = 0.1;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::string out = "out";
  std::string input;  // dataset file; empty draws synthetic data from the seed
  std::string model;  // artifact directory; empty means `out`
  std::array<double, 3> split{0.6, 0.2, 0.2};  // train, cal, test
  std::size_t batch_size = 0;                  // 0: task default
  int epochs = 0;                              // 0: task default
  double lr = 1e-3;
  std::size_t n = 10000;  // synthetic dataset size
  std::size_t num_classes = 100;
  double noise_scale = 0.05;
  bool heteroscedastic = true;
  bool smoothed_calibration = false;
  std::size_t seeds = 1;      // evaluation repetitions
  std::size_t eval_cal = 0;   // per-repetition calibration size; 0 uses the split fractions
  std::size_t eval_test = 0;  // per-repetition test size
  std::vector<std::string> methods;  // empty: every method of the task
  std::vector<sim::Preset> presets{sim::kPresets.begin(), sim::kPresets.end()};
  std::vector<sim::NoiseKind> noises{sim::kNoiseKinds.begin(), sim::kNoiseKinds.end()};
  std::size_t trials = 200;         // benchmark trials per (preset, noise)
  std::size_t collect_trials = 30;  // margin-training plans per (preset, noise)
  sim::NoiseParams noise;

  std::map<std::string, std::string> entries;  // every explicitly set key, for the manifest

  std::string model_dir() const { return model.empty() ? out : model; }
};

/// Applies one setting. ConfigError names the key and the problem.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);
/// Parses configuration text; errors are prefixed with origin:line.
void apply_config_text(RunConfig& cfg, std::string_view text, std::string_view origin);
void load_config_file(RunConfig& cfg, const std::string& path);
/// Cross-field checks: split fractions sum to 1, alpha in (0, 1), ...
void validate(const RunConfig& cfg);

inline constexpr std::array<std::string_view, 5> kCommands = {"synth", "train", "eval", "simulate",
                                                             "report"};

/// Runs a subcommand and returns the files it wrote (relative names).
/// Throws the library error hierarchy.
std::vector<std::string> run_command(std::string_view command, const RunConfig& cfg);

/// Process exit code for an error kind: 2 configuration, 3 data or input,
/// 4 missing artifact, 1 anything else.
int exit_code_for(const std::exception& e);

inline constexpr std::string_view kVersion = "1.0.0";

}  // namespace lcp::cli
