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

// Minimal deterministic MLP engine: dense layers, batch normalization,
// inverted dropout, ReLU/ELU/softplus, manual backpropagation, AdamW,
// cosine learning-rate schedules and global gradient-norm clipping.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lcp/matrix.hpp"
#include "lcp/random.hpp"

namespace lcp::nn {

enum class Mode { training, evaluation };

enum class Activation : std::uint8_t { relu = 0, elu = 1, softplus = 2 };

struct DenseLayer {
  Matrix weights;  // in x out
  std::vector<double> bias;
  Matrix weight_grad;
  std::vector<double> bias_grad;
  Matrix input;  // cached by training-mode forward

  std::size_t in_dim() const { return weights.rows(); }
  std::size_t out_dim() const { return weights.cols(); }
};

struct BatchNormLayer {
  std::vector<double> gamma, beta;
  std::vector<double> running_mean, running_var;
  std::vector<double> gamma_grad, beta_grad;
  double momentum = 0.1;
  double epsilon = 1e-5;
  Matrix xhat;
  std::vector<double> inv_std;

  std::size_t dim() const { return gamma.size(); }
};

struct DropoutLayer {
  double rate = 0.0;
  std::vector<std::uint8_t> mask;  // training only
};

struct ActivationLayer {
  Activation kind = Activation::relu;
  double alpha = 1.0;  // ELU only
  Matrix input;
};

// Skip connection markers: the activation entering ResidualBegin is added
// to the activation leaving ResidualEnd. Only valid around shape-preserving
// blocks.
struct ResidualBegin {};
struct ResidualEnd {};

using Layer = std::variant<DenseLayer, BatchNormLayer, DropoutLayer, ActivationLayer,
                           ResidualBegin, ResidualEnd>;

struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 1;
  Activation activation = Activation::relu;
  bool batch_norm = false;
  double dropout = 0.0;
  // Wrap hidden blocks whose input and output widths agree in a skip
  // connection. Blocks that change width are left plain.
  bool residual = false;
  std::optional<Activation> output_activation;
};

struct ParamView {
  std::string name;
  std::span<double> value;
  std::span<double> grad;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t input_dim, std::uint64_t seed);

  static Mlp build(const MlpSpec& spec, std::uint64_t seed);
  // Assembles a net from already-populated layers (checkpoint loading).
  // Throws ConfigError when consecutive shapes disagree.
  static Mlp from_layers(std::size_t input_dim, std::vector<Layer> layers,
                         std::uint64_t seed = 0);

  // Kaiming-uniform fan-in init, zero bias.
  Mlp& add_dense(std::size_t out_dim);
  Mlp& add_batch_norm(double momentum = 0.1, double epsilon = 1e-5);
  Mlp& add_dropout(double rate);
  Mlp& add_activation(Activation kind, double alpha = 1.0);
  Mlp& add_residual_begin();
  Mlp& add_residual_end();

  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t output_dim() const noexcept { return output_dim_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }

  Matrix forward(const Matrix& batch, Mode mode);
  // Evaluation-mode forward. Touches no member state, so a trained net can
  // serve concurrent callers.
  Matrix infer(const Matrix& batch) const;
  // Returns the gradient with respect to the last forward input and
  // accumulates parameter gradients.
  Matrix backward(const Matrix& upstream);

  void zero_grad();
  std::vector<ParamView> parameters();
  std::size_t parameter_count() const;

  // Keep the current dropout masks on subsequent training forwards. Used by
  // finite-difference checks.
  void freeze_dropout_masks(bool freeze) noexcept { freeze_masks_ = freeze; }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }
  // Rows carrying the same group id share one dropout mask on training
  // forwards. Ignored when the size differs from the batch; empty disables.
  void set_dropout_groups(std::vector<std::size_t> groups) { dropout_groups_ = std::move(groups); }

  // Round every stored value (weights, affine and running statistics) to the
  // nearest float so the net serializes losslessly at single precision.
  void round_to_float32();

  friend bool operator==(const Mlp& a, const Mlp& b);

 private:
  void check_input(const Matrix& batch) const;

  std::size_t input_dim_ = 0;
  std::size_t output_dim_ = 0;
  std::vector<Layer> layers_;
  Rng rng_;
  bool has_forward_cache_ = false;
  bool freeze_masks_ = false;
  std::vector<std::size_t> dropout_groups_;
  int open_residuals_ = 0;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-5;
};

/// One AdamW update for a single tensor. The Adam step is applied first,
/// then the decoupled decay param <- param * (1 - lr * weight_decay).
/// `step` is the 1-based step count used for bias correction.
void adamw_update(std::span<double> param, std::span<const double> grad,
                  std::span<double> first_moment, std::span<double> second_moment,
                  std::uint64_t step, double lr, const AdamWConfig& cfg,
                  std::string_view name);

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(Mlp& net, double lr);
  std::uint64_t step_count() const noexcept { return step_; }
  const AdamWConfig& config() const noexcept { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t step_ = 0;
};

/// Scales all gradients in place so their global L2 norm is at most
/// max_norm. Returns the norm before clipping.
double clip_grad_norm(std::span<const std::span<double>> grads, double max_norm);
double clip_grad_norm(Mlp& net, double max_norm);

struct LrSchedule {
  enum class Kind { cosine, cosine_warm_restarts };
  Kind kind = Kind::cosine_warm_restarts;
  double t0 = 5.0;  // cycle length in epochs (total span for plain cosine)
  double eta_min = 1e-5;
};

double lr_at(const LrSchedule& schedule, double epoch, double base_lr);

// Binary checkpoint. Values are written as float32 when every stored value
// is exactly representable at single precision, otherwise as float64, so the
// round trip is always bit-exact.
std::vector<std::uint8_t> serialize(const Mlp& net);
Mlp deserialize(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Mlp& net, const std::string& path);
Mlp load_checkpoint(const std::string& path);

}  // namespace lcp::nn
