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

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "lcp/errors.hpp"
#include "lcp/nn.hpp"
#include "lcp/random.hpp"

using namespace lcp;
using namespace lcp::nn;

namespace {

MlpSpec spec(std::size_t in, std::vector<std::size_t> hidden, std::size_t out,
             Activation act = Activation::relu, bool batch_norm = false, double dropout = 0.0) {
  MlpSpec s;
  s.input_dim = in;
  s.hidden = std::move(hidden);
  s.output_dim = out;
  s.activation = act;
  s.batch_norm = batch_norm;
  s.dropout = dropout;
  return s;
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.values()) v = uniform(rng, -1.0, 1.0);
  return m;
}

double weighted_sum(const Matrix& out, const Matrix& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out.values()[i] * w.values()[i];
  return s;
}

// Largest relative error between analytic and central-difference gradients
// of sum(out .* w). Dropout masks stay frozen across perturbations.
double gradient_error(Mlp& net, const Matrix& x, const Matrix& w) {
  net.freeze_dropout_masks(false);
  net.zero_grad();
  (void)net.forward(x, Mode::training);
  net.freeze_dropout_masks(true);
  (void)net.backward(w);
  const double h = 1e-4;
  double worst = 0.0;
  for (auto& p : net.parameters()) {
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double orig = p.value[k];
      p.value[k] = orig + h;
      const double up = weighted_sum(net.forward(x, Mode::training), w);
      p.value[k] = orig - h;
      const double down = weighted_sum(net.forward(x, Mode::training), w);
      p.value[k] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p.grad[k];
      const double err = std::abs(numeric - analytic) / std::max(1.0, std::abs(numeric) + std::abs(analytic));
      worst = std::max(worst, err);
    }
  }
  net.freeze_dropout_masks(false);
  return worst;
}

}  // namespace

TEST_CASE("dense identity layer passes input through") {
  Mlp net(2, 1);
  net.add_dense(2);
  auto& d = std::get<DenseLayer>(net.layers()[0]);
  d.weights = Matrix{{1, 0}, {0, 1}};
  d.bias = {0, 0};
  const Matrix out = net.infer(Matrix{{1, 2}});
  CHECK(out(0, 0) == 1.0);
  CHECK(out(0, 1) == 2.0);
}

TEST_CASE("relu and elu activations") {
  Mlp relu(3, 1);
  relu.add_activation(Activation::relu);
  const Matrix r = relu.infer(Matrix{{-1, 0, 2}});
  CHECK(r == Matrix{{0, 0, 2}});
  Mlp elu(1, 1);
  elu.add_activation(Activation::elu, 1.0);
  CHECK(elu.infer(Matrix{{-1}})(0, 0) == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-12));
}

TEST_CASE("forward rejects a width mismatch") {
  Mlp net(3, 1);
  net.add_dense(2);
  CHECK_THROWS_AS(net.infer(Matrix(1, 4)), ConfigError);
}

TEST_CASE("sum loss on one dense layer gives input transpose times ones") {
  Mlp net(3, 2);
  net.add_dense(2);
  const Matrix x{{1, 2, 3}, {-1, 0.5, 4}};
  (void)net.forward(x, Mode::training);
  (void)net.backward(Matrix(2, 2, 1.0));
  const auto& d = std::get<DenseLayer>(net.layers()[0]);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(d.weight_grad(i, j) == doctest::Approx(x(0, i) + x(1, i)));
  CHECK(d.bias_grad[0] == doctest::Approx(2.0));
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  Mlp net = Mlp::build(spec(4, {8, 6}, 2, Activation::relu, true, 0.0), 3);
  Rng rng(5);
  (void)net.forward(random_matrix(5, 4, rng), Mode::training);
  (void)net.backward(Matrix(5, 2, 0.0));
  for (const auto& p : net.parameters())
    for (double g : p.grad) CHECK(g == 0.0);
}

TEST_CASE("backward before forward is a state error") {
  Mlp net(2, 1);
  net.add_dense(1);
  CHECK_THROWS_AS(net.backward(Matrix(1, 1, 1.0)), StateError);
}

TEST_CASE("three-layer gradients match central differences") {
  Rng rng(11);
  for (const auto act : {Activation::relu, Activation::elu, Activation::softplus}) {
    Mlp net = Mlp::build(spec(5, {7, 6}, 3, act, true, 0.2), 17);
    const Matrix x = random_matrix(6, 5, rng), w = random_matrix(6, 3, rng);
    CHECK(gradient_error(net, x, w) < 1e-4);
  }
}

TEST_CASE("evaluation mode is bit-identical across calls and dropout is a pass-through") {
  Mlp net = Mlp::build(spec(4, {16, 8}, 1, Activation::relu, true, 0.5), 9);
  Rng rng(1);
  const Matrix x = random_matrix(10, 4, rng);
  (void)net.forward(x, Mode::training);
  CHECK(net.forward(x, Mode::evaluation) == net.forward(x, Mode::evaluation));
  Mlp drop(3, 2);
  drop.add_dropout(0.4);
  CHECK(drop.forward(Matrix{{1, 2, 3}}, Mode::evaluation) == Matrix{{1, 2, 3}});
}

TEST_CASE("batch norm output is standardized per feature in training mode") {
  Mlp net(3, 4);
  net.add_batch_norm();
  Rng rng(2);
  Matrix x = random_matrix(64, 3, rng);
  for (std::size_t i = 0; i < 64; ++i) x(i, 1) = 10.0 + 5.0 * x(i, 1);
  const Matrix y = net.forward(x, Mode::training);
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < 64; ++i) m += y(i, j);
    m /= 64.0;
    for (std::size_t i = 0; i < 64; ++i) v += (y(i, j) - m) * (y(i, j) - m);
    v /= 64.0;
    CHECK(std::abs(m) < 1e-5);
    // The epsilon in the denominator shrinks the variance slightly.
    CHECK(std::abs(v - 1.0) < 1e-3);
  }
}

TEST_CASE("inverted dropout keeps the expected activation") {
  Mlp net(1, 8);
  net.add_dropout(0.2);
  const Matrix x(20000, 1, 1.0);
  const Matrix y = net.forward(x, Mode::training);
  double mean = 0.0;
  for (double v : y.values()) mean += v;
  mean /= 20000.0;
  CHECK(std::abs(mean - 1.0) < 0.02);
}

TEST_CASE("adamw closed forms") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  std::vector<double> p{1.0}, g{0.0}, m{0.0}, v{0.0};
  adamw_update(p, g, m, v, 1, 1e-3, cfg, "p");
  CHECK(p[0] == 1.0);

  cfg.weight_decay = 1e-5;
  p = {1.0};
  m = {0.0};
  v = {0.0};
  adamw_update(p, g, m, v, 1, 1e-3, cfg, "p");
  CHECK(std::abs(p[0] - (1.0 - 1e-8)) < 1e-15);

  cfg.weight_decay = 0.0;
  p = {0.0};
  g = {1.0};
  m = {0.0};
  v = {0.0};
  adamw_update(p, g, m, v, 1, 1e-3, cfg, "p");
  CHECK(p[0] == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(v[0] >= 0.0);

  g = {std::nan("")};
  CHECK_THROWS_AS(adamw_update(p, g, m, v, 2, 1e-3, cfg, "layer0.weight"), TrainingError);
}

TEST_CASE("gradient clipping") {
  std::vector<double> a{3.0, 4.0};
  std::vector<std::span<double>> grads{a};
  CHECK(clip_grad_norm(grads, 0.5) == doctest::Approx(5.0));
  CHECK(a[0] == doctest::Approx(0.3));
  CHECK(a[1] == doctest::Approx(0.4));
  const std::vector<double> once = a;
  (void)clip_grad_norm(grads, 0.5);
  CHECK(a == once);

  std::vector<double> b{0.18, 0.24};  // norm 0.3
  std::vector<std::span<double>> gb{b};
  (void)clip_grad_norm(gb, 0.5);
  CHECK(b == std::vector<double>{0.18, 0.24});

  std::vector<double> z{0.0, 0.0};
  std::vector<std::span<double>> gz{z};
  (void)clip_grad_norm(gz, 0.5);
  CHECK(z == std::vector<double>{0.0, 0.0});
}

TEST_CASE("cosine schedule with warm restarts") {
  LrSchedule s;
  CHECK(lr_at(s, 0.0, 1e-3) == doctest::Approx(1e-3));
  CHECK(lr_at(s, 2.5, 1e-3) == doctest::Approx((1e-3 + 1e-5) / 2.0));
  CHECK(lr_at(s, 5.0, 1e-3) == doctest::Approx(1e-3));
  for (double e = 0.0; e < 30.0; e += 0.1) {
    const double lr = lr_at(s, e, 1e-3);
    CHECK(lr >= 1e-5 - 1e-18);
    CHECK(lr <= 1e-3 + 1e-18);
  }
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Mlp net = Mlp::build(spec(6, {12, 8}, 2, Activation::elu, true, 0.2), 21);
  Rng rng(3);
  (void)net.forward(random_matrix(8, 6, rng), Mode::training);
  const auto bytes = serialize(net);
  CHECK(deserialize(bytes) == net);
  const auto path = (std::filesystem::temp_directory_path() / "lcp_nn_roundtrip.ckpt").string();
  save_checkpoint(net, path);
  CHECK(load_checkpoint(path) == net);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), MissingArtifactError);
  auto broken = bytes;
  broken.resize(bytes.size() / 2);
  CHECK_THROWS(deserialize(broken));
}

TEST_CASE("seeded initialization is reproducible") {
  CHECK(Mlp::build(spec(4, {8}, 1), 5) == Mlp::build(spec(4, {8}, 1), 5));
  CHECK_FALSE(Mlp::build(spec(4, {8}, 1), 5) == Mlp::build(spec(4, {8}, 1), 6));
}
