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

#include "lcp/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

#include "lcp/errors.hpp"

namespace lcp::nn {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Matrix dense_apply(const DenseLayer& d, const Matrix& x) {
  Matrix out;
  matmul(x, d.weights, out);
  const std::size_t m = d.out_dim();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < m; ++j) row[j] += d.bias[j];
  }
  return out;
}

double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix activation_apply(const ActivationLayer& a, const Matrix& x) {
  Matrix out = x;
  auto v = out.values();
  switch (a.kind) {
    case Activation::relu:
      for (double& e : v) e = e > 0.0 ? e : 0.0;
      break;
    case Activation::elu:
      for (double& e : v) e = e > 0.0 ? e : a.alpha * std::expm1(e);
      break;
    case Activation::softplus:
      for (double& e : v) e = softplus(e);
      break;
  }
  return out;
}

double activation_grad(const ActivationLayer& a, double x) {
  switch (a.kind) {
    case Activation::relu:
      return x > 0.0 ? 1.0 : 0.0;
    case Activation::elu:
      return x > 0.0 ? 1.0 : a.alpha * std::exp(x);
    case Activation::softplus:
      return sigmoid(x);
  }
  return 0.0;
}

Matrix batch_norm_eval(const BatchNormLayer& bn, const Matrix& x) {
  Matrix out = x;
  const std::size_t d = bn.dim();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      const double inv = 1.0 / std::sqrt(bn.running_var[j] + bn.epsilon);
      row[j] = bn.gamma[j] * (row[j] - bn.running_mean[j]) * inv + bn.beta[j];
    }
  }
  return out;
}

Matrix batch_norm_train(BatchNormLayer& bn, const Matrix& x) {
  const std::size_t n = x.rows(), d = bn.dim();
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = x.row(r);
    for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = x.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean[j];
      var[j] += c * c;
    }
  }
  for (double& v : var) v /= static_cast<double>(n);

  bn.inv_std.resize(d);
  for (std::size_t j = 0; j < d; ++j) bn.inv_std[j] = 1.0 / std::sqrt(var[j] + bn.epsilon);
  bn.xhat.resize(n, d);
  Matrix out(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    auto in = x.row(r);
    auto xh = bn.xhat.row(r);
    auto o = out.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (in[j] - mean[j]) * bn.inv_std[j];
      o[j] = bn.gamma[j] * xh[j] + bn.beta[j];
    }
  }
  const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
  for (std::size_t j = 0; j < d; ++j) {
    bn.running_mean[j] = (1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * mean[j];
    bn.running_var[j] =
        (1.0 - bn.momentum) * bn.running_var[j] + bn.momentum * var[j] * unbias;
  }
  return out;
}

Matrix batch_norm_backward(BatchNormLayer& bn, const Matrix& g) {
  const std::size_t n = g.rows(), d = bn.dim();
  std::vector<double> sum_dxhat(d, 0.0), sum_dxhat_xhat(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    auto gr = g.row(r);
    auto xh = bn.xhat.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      bn.gamma_grad[j] += gr[j] * xh[j];
      bn.beta_grad[j] += gr[j];
      const double dxhat = gr[j] * bn.gamma[j];
      sum_dxhat[j] += dxhat;
      sum_dxhat_xhat[j] += dxhat * xh[j];
    }
  }
  Matrix dx(n, d);
  const double nn = static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto gr = g.row(r);
    auto xh = bn.xhat.row(r);
    auto o = dx.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      const double dxhat = gr[j] * bn.gamma[j];
      o[j] = bn.inv_std[j] / nn * (nn * dxhat - sum_dxhat[j] - xh[j] * sum_dxhat_xhat[j]);
    }
  }
  return dx;
}

std::size_t layer_output_dim(const Layer& layer, std::size_t in) {
  return std::visit(
      overloaded{[&](const DenseLayer& d) {
                   if (d.in_dim() != in)
                     throw ConfigError("dense layer expects input width " +
                                       std::to_string(d.in_dim()) + ", got " +
                                       std::to_string(in));
                   return d.out_dim();
                 },
                 [&](const BatchNormLayer& b) {
                   if (b.dim() != in)
                     throw ConfigError("batch norm width mismatch: " +
                                       std::to_string(b.dim()) + " vs " + std::to_string(in));
                   return in;
                 },
                 [&](const auto&) { return in; }},
      layer);
}

}  // namespace

Mlp::Mlp(std::size_t input_dim, std::uint64_t seed)
    : input_dim_(input_dim), output_dim_(input_dim), rng_(seed) {
  if (input_dim == 0) throw ConfigError("network input dimension must be positive");
}

Mlp Mlp::build(const MlpSpec& spec, std::uint64_t seed) {
  Mlp net(spec.input_dim, seed);
  std::size_t width = spec.input_dim;
  for (std::size_t h : spec.hidden) {
    const bool skip = spec.residual && h == width;
    if (skip) net.add_residual_begin();
    net.add_dense(h);
    if (spec.batch_norm) net.add_batch_norm();
    net.add_activation(spec.activation);
    if (spec.dropout > 0.0) net.add_dropout(spec.dropout);
    if (skip) net.add_residual_end();
    width = h;
  }
  net.add_dense(spec.output_dim);
  if (spec.output_activation) net.add_activation(*spec.output_activation);
  return net;
}

Mlp Mlp::from_layers(std::size_t input_dim, std::vector<Layer> layers, std::uint64_t seed) {
  Mlp net(input_dim, seed);
  std::size_t width = input_dim;
  std::vector<std::size_t> open;
  for (const Layer& l : layers) {
    if (std::holds_alternative<ResidualBegin>(l)) open.push_back(width);
    if (std::holds_alternative<ResidualEnd>(l)) {
      if (open.empty() || open.back() != width)
        throw ConfigError("residual block does not preserve width");
      open.pop_back();
    }
    width = layer_output_dim(l, width);
  }
  if (!open.empty()) throw ConfigError("unterminated residual block");
  net.layers_ = std::move(layers);
  net.output_dim_ = width;
  return net;
}

Mlp& Mlp::add_dense(std::size_t out_dim) {
  if (out_dim == 0) throw ConfigError("dense layer width must be positive");
  DenseLayer d;
  d.weights.resize(output_dim_, out_dim);
  const double bound = std::sqrt(6.0 / static_cast<double>(output_dim_));
  for (double& w : d.weights.values()) w = uniform(rng_, -bound, bound);
  d.bias.assign(out_dim, 0.0);
  d.weight_grad.resize(output_dim_, out_dim);
  d.bias_grad.assign(out_dim, 0.0);
  layers_.emplace_back(std::move(d));
  output_dim_ = out_dim;
  return *this;
}

Mlp& Mlp::add_batch_norm(double momentum, double epsilon) {
  if (!(momentum > 0.0 && momentum < 1.0)) throw ConfigError("batch norm momentum must be in (0,1)");
  if (!(epsilon > 0.0)) throw ConfigError("batch norm epsilon must be positive");
  BatchNormLayer b;
  b.gamma.assign(output_dim_, 1.0);
  b.beta.assign(output_dim_, 0.0);
  b.running_mean.assign(output_dim_, 0.0);
  b.running_var.assign(output_dim_, 1.0);
  b.gamma_grad.assign(output_dim_, 0.0);
  b.beta_grad.assign(output_dim_, 0.0);
  b.momentum = momentum;
  b.epsilon = epsilon;
  layers_.emplace_back(std::move(b));
  return *this;
}

Mlp& Mlp::add_dropout(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0,1)");
  layers_.emplace_back(DropoutLayer{rate, {}});
  return *this;
}

Mlp& Mlp::add_activation(Activation kind, double alpha) {
  ActivationLayer a;
  a.kind = kind;
  a.alpha = alpha;
  layers_.emplace_back(std::move(a));
  return *this;
}

Mlp& Mlp::add_residual_begin() {
  layers_.emplace_back(ResidualBegin{});
  ++open_residuals_;
  return *this;
}

Mlp& Mlp::add_residual_end() {
  if (open_residuals_ == 0) throw ConfigError("residual end without begin");
  --open_residuals_;
  layers_.emplace_back(ResidualEnd{});
  return *this;
}

void Mlp::check_input(const Matrix& batch) const {
  if (layers_.empty()) throw ConfigError("network has no layers");
  if (batch.cols() != input_dim_)
    throw ConfigError("input has " + std::to_string(batch.cols()) +
                      " features, network expects " + std::to_string(input_dim_));
}

Matrix Mlp::forward(const Matrix& batch, Mode mode) {
  if (mode == Mode::evaluation) {
    has_forward_cache_ = false;
    return infer(batch);
  }
  check_input(batch);
  if (batch.rows() == 0) throw ConfigError("training forward needs a non-empty batch");
  Matrix x = batch;
  std::vector<Matrix> skips;
  for (Layer& layer : layers_) {
    std::visit(overloaded{[&](DenseLayer& d) {
                            d.input = x;
                            x = dense_apply(d, x);
                          },
                          [&](BatchNormLayer& b) { x = batch_norm_train(b, x); },
                          [&](DropoutLayer& dr) {
                            if (dr.rate <= 0.0) return;
                            const bool reuse = freeze_masks_ && dr.mask.size() == x.size();
                            if (!reuse) {
                              dr.mask.resize(x.size());
                              if (dropout_groups_.size() == x.rows()) {
                                // Rows of one group copy the mask drawn for its first row.
                                const std::size_t w = x.cols();
                                std::unordered_map<std::size_t, std::size_t> seen;
                                for (std::size_t r = 0; r < x.rows(); ++r) {
                                  const auto [it, fresh] = seen.try_emplace(dropout_groups_[r], r);
                                  for (std::size_t c = 0; c < w; ++c)
                                    dr.mask[r * w + c] = fresh ? (uniform01(rng_) >= dr.rate ? 1 : 0)
                                                               : dr.mask[it->second * w + c];
                                }
                              } else {
                                for (auto& m : dr.mask) m = uniform01(rng_) >= dr.rate ? 1 : 0;
                              }
                            }
                            const double scale = 1.0 / (1.0 - dr.rate);
                            auto v = x.values();
                            for (std::size_t i = 0; i < v.size(); ++i)
                              v[i] = dr.mask[i] ? v[i] * scale : 0.0;
                          },
                          [&](ActivationLayer& a) {
                            a.input = x;
                            x = activation_apply(a, x);
                          },
                          [&](ResidualBegin&) { skips.push_back(x); },
                          [&](ResidualEnd&) {
                            auto v = x.values();
                            auto s = skips.back().values();
                            for (std::size_t i = 0; i < v.size(); ++i) v[i] += s[i];
                            skips.pop_back();
                          }},
               layer);
  }
  has_forward_cache_ = true;
  return x;
}

Matrix Mlp::infer(const Matrix& batch) const {
  check_input(batch);
  Matrix x = batch;
  std::vector<Matrix> skips;
  for (const Layer& layer : layers_) {
    std::visit(overloaded{[&](const DenseLayer& d) { x = dense_apply(d, x); },
                          [&](const BatchNormLayer& b) { x = batch_norm_eval(b, x); },
                          [&](const DropoutLayer&) {},
                          [&](const ActivationLayer& a) { x = activation_apply(a, x); },
                          [&](const ResidualBegin&) { skips.push_back(x); },
                          [&](const ResidualEnd&) {
                            auto v = x.values();
                            auto s = skips.back().values();
                            for (std::size_t i = 0; i < v.size(); ++i) v[i] += s[i];
                            skips.pop_back();
                          }},
               layer);
  }
  return x;
}

Matrix Mlp::backward(const Matrix& upstream) {
  if (!has_forward_cache_) throw StateError("backward called without a training-mode forward");
  if (upstream.cols() != output_dim_)
    throw ConfigError("upstream gradient width " + std::to_string(upstream.cols()) +
                      " does not match network output " + std::to_string(output_dim_));
  Matrix g = upstream;
  std::vector<Matrix> skips;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    std::visit(overloaded{[&](DenseLayer& d) {
                            if (g.rows() != d.input.rows())
                              throw ConfigError("upstream gradient rows do not match forward batch");
                            Matrix wg;
                            matmul_at_b(d.input, g, wg);
                            auto dst = d.weight_grad.values();
                            auto src = wg.values();
                            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
                            for (std::size_t r = 0; r < g.rows(); ++r) {
                              auto gr = g.row(r);
                              for (std::size_t j = 0; j < gr.size(); ++j) d.bias_grad[j] += gr[j];
                            }
                            Matrix dx;
                            matmul_a_bt(g, d.weights, dx);
                            g = std::move(dx);
                          },
                          [&](BatchNormLayer& b) { g = batch_norm_backward(b, g); },
                          [&](DropoutLayer& dr) {
                            if (dr.rate <= 0.0) return;
                            const double scale = 1.0 / (1.0 - dr.rate);
                            auto v = g.values();
                            for (std::size_t i = 0; i < v.size(); ++i)
                              v[i] = dr.mask[i] ? v[i] * scale : 0.0;
                          },
                          [&](ActivationLayer& a) {
                            auto v = g.values();
                            auto in = a.input.values();
                            for (std::size_t i = 0; i < v.size(); ++i)
                              v[i] *= activation_grad(a, in[i]);
                          },
                          [&](ResidualEnd&) { skips.push_back(g); },
                          [&](ResidualBegin&) {
                            auto v = g.values();
                            auto s = skips.back().values();
                            for (std::size_t i = 0; i < v.size(); ++i) v[i] += s[i];
                            skips.pop_back();
                          }},
               *it);
  }
  return g;
}

void Mlp::zero_grad() {
  for (Layer& layer : layers_) {
    if (auto* d = std::get_if<DenseLayer>(&layer)) {
      d->weight_grad.fill(0.0);
      std::fill(d->bias_grad.begin(), d->bias_grad.end(), 0.0);
    } else if (auto* b = std::get_if<BatchNormLayer>(&layer)) {
      std::fill(b->gamma_grad.begin(), b->gamma_grad.end(), 0.0);
      std::fill(b->beta_grad.begin(), b->beta_grad.end(), 0.0);
    }
  }
}

std::vector<ParamView> Mlp::parameters() {
  std::vector<ParamView> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i) + ".";
    if (auto* d = std::get_if<DenseLayer>(&layers_[i])) {
      out.push_back({prefix + "weight", d->weights.values(), d->weight_grad.values()});
      out.push_back({prefix + "bias", d->bias, d->bias_grad});
    } else if (auto* b = std::get_if<BatchNormLayer>(&layers_[i])) {
      out.push_back({prefix + "gamma", b->gamma, b->gamma_grad});
      out.push_back({prefix + "beta", b->beta, b->beta_grad});
    }
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& layer : layers_) {
    if (auto* d = std::get_if<DenseLayer>(&layer)) n += d->weights.size() + d->bias.size();
    if (auto* b = std::get_if<BatchNormLayer>(&layer)) n += 2 * b->dim();
  }
  return n;
}

void Mlp::round_to_float32() {
  auto round = [](std::span<double> v) {
    for (double& e : v) e = static_cast<double>(static_cast<float>(e));
  };
  for (Layer& layer : layers_) {
    if (auto* d = std::get_if<DenseLayer>(&layer)) {
      round(d->weights.values());
      round(d->bias);
    } else if (auto* b = std::get_if<BatchNormLayer>(&layer)) {
      round(b->gamma);
      round(b->beta);
      round(b->running_mean);
      round(b->running_var);
    }
  }
}

bool operator==(const Mlp& a, const Mlp& b) {
  if (a.input_dim_ != b.input_dim_ || a.output_dim_ != b.output_dim_ ||
      a.layers_.size() != b.layers_.size())
    return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const Layer& la = a.layers_[i];
    const Layer& lb = b.layers_[i];
    if (la.index() != lb.index()) return false;
    bool same = std::visit(
        overloaded{[&](const DenseLayer& d) {
                     const auto& e = std::get<DenseLayer>(lb);
                     return d.weights == e.weights && d.bias == e.bias;
                   },
                   [&](const BatchNormLayer& d) {
                     const auto& e = std::get<BatchNormLayer>(lb);
                     return d.gamma == e.gamma && d.beta == e.beta &&
                            d.running_mean == e.running_mean &&
                            d.running_var == e.running_var && d.momentum == e.momentum &&
                            d.epsilon == e.epsilon;
                   },
                   [&](const DropoutLayer& d) { return d.rate == std::get<DropoutLayer>(lb).rate; },
                   [&](const ActivationLayer& d) {
                     const auto& e = std::get<ActivationLayer>(lb);
                     return d.kind == e.kind && d.alpha == e.alpha;
                   },
                   [&](const auto&) { return true; }},
        la);
    if (!same) return false;
  }
  return true;
}

void adamw_update(std::span<double> param, std::span<const double> grad,
                  std::span<double> first_moment, std::span<double> second_moment,
                  std::uint64_t step, double lr, const AdamWConfig& cfg,
                  std::string_view name) {
  if (param.size() != grad.size() || param.size() != first_moment.size() ||
      param.size() != second_moment.size())
    throw ConfigError("adamw: shape mismatch for " + std::string(name));
  if (step == 0) throw ConfigError("adamw: step count is 1-based");
  for (double g : grad)
    if (!std::isfinite(g)) throw TrainingError("non-finite gradient in " + std::string(name));

  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    first_moment[i] = cfg.beta1 * first_moment[i] + (1.0 - cfg.beta1) * g;
    second_moment[i] = cfg.beta2 * second_moment[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = first_moment[i] / bc1;
    const double vhat = second_moment[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    param[i] *= decay;
  }
}

void AdamW::step(Mlp& net, double lr) {
  auto params = net.parameters();
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw StateError("optimizer bound to a different network");
  ++step_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    adamw_update(params[i].value, params[i].grad, m_[i], v_[i], step_, lr, cfg_,
                 params[i].name);
  }
}

double clip_grad_norm(std::span<const std::span<double>> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip norm must be positive");
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& g : grads)
      for (double& v : g) v *= scale;
  }
  return norm;
}

double clip_grad_norm(Mlp& net, double max_norm) {
  std::vector<std::span<double>> grads;
  for (auto& p : net.parameters()) grads.push_back(p.grad);
  return clip_grad_norm(grads, max_norm);
}

double lr_at(const LrSchedule& schedule, double epoch, double base_lr) {
  if (epoch < 0.0) epoch = 0.0;
  if (base_lr <= schedule.eta_min) return base_lr;
  double t = 0.0;
  if (schedule.kind == LrSchedule::Kind::cosine_warm_restarts) {
    t = std::fmod(epoch, schedule.t0) / schedule.t0;
  } else {
    t = std::min(epoch, schedule.t0) / schedule.t0;
  }
  return schedule.eta_min + (base_lr - schedule.eta_min) * 0.5 * (1.0 + std::cos(M_PI * t));
}

}  // namespace lcp::nn
