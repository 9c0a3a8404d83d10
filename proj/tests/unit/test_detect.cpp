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
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "lcp/detect.hpp"
#include "lcp/errors.hpp"
#include "lcp/random.hpp"

using namespace lcp;
using namespace lcp::detect;

namespace {

DetRecord record(Box pred, Box gt, double conf = 0.8, double w = 100, double h = 100) {
  DetRecord r;
  r.img_w = w;
  r.img_h = h;
  r.pred = pred;
  r.gt = gt;
  r.conf = conf;
  return r;
}

Matrix constant_widths(std::size_t n, double w) { return Matrix(n, 4, w); }

}  // namespace

TEST_CASE("box features by hand") {
  const auto f = extract_box_features(record({10, 10, 30, 50}, {10, 10, 30, 50}));
  const std::array<double, 13> want{0.1, 0.1, 0.3, 0.5, 0.8, std::log(800.0), 0.5, -0.3, -0.2, 0.1, 0.1, 0.7, 0.5};
  for (std::size_t i = 0; i < 13; ++i) CHECK(std::abs(f[i] - want[i]) < 1e-12);
  CHECK(std::abs(f[5] - 6.6846) < 1e-4);

  const auto c = extract_box_features(record({40, 40, 60, 60}, {40, 40, 60, 60}));
  CHECK(c[7] == 0.0);
  CHECK(c[8] == 0.0);
  CHECK(c[6] == 1.0);
  CHECK_THROWS_AS(extract_box_features(record({10, 10, 10, 50}, {10, 10, 30, 50})), InputError);
}

TEST_CASE("width head is positive and deterministic") {
  const auto net = build_width_net(4);
  const auto data = generate({200, 1});
  conformal::RunningStats st(kFeatureDim);
  for (const auto& r : data) {
    const auto f = extract_box_features(r);
    st.push(f);
  }
  const Matrix w = predict_widths(net, st, data);
  for (double v : w.values()) CHECK(v >= kWidthFloor);
  CHECK(predict_widths(net, st, data) == w);
  CHECK(predict_widths(net, st, data, 3) == w);
}

TEST_CASE("interval width loss") {
  const Widths w{10, 10, 10, 10};
  CHECK(std::abs(mpiw(w, 1.0) - 20.0) < 1e-9);
  CHECK(std::abs(mpiw_loss(w, 1.0, 40, 40) - 0.5) < 1e-9);
  CHECK(mpiw_loss(w, 0.0, 40, 40) == 0.0);
  CHECK(std::abs(mpiw_loss(w, 2.0, 40, 40) - 2.0 * mpiw_loss(w, 1.0, 40, 40)) < 1e-12);
  const Widths w3{30, 30, 30, 30};
  CHECK(std::abs(mpiw_loss(w3, 1.0, 120, 120) - mpiw_loss(w, 1.0, 40, 40)) < 1e-12);
}

TEST_CASE("coverage penalty") {
  CHECK(coverage_penalty(0.89) == 0.0);
  CHECK(coverage_penalty(0.90) == 0.0);
  CHECK(std::abs(coverage_penalty(0.91) - 0.002) < 1e-9);
  CHECK(std::abs(coverage_penalty(0.87) - 0.004) < 1e-9);
}

TEST_CASE("multiplicative calibration") {
  std::vector<DetRecord> cal;
  for (int i = 1; i <= 19; ++i) cal.push_back(record({10, 10, 40, 40}, {10.0 + i, 10, 40, 40}));
  CHECK(calibrate_tau(cal, constant_widths(19, 1.0), 0.1) == 18.0);

  std::vector<double> errs;
  Matrix exact(19, 4, 1.0);
  for (std::size_t i = 0; i < 19; ++i) exact(i, 0) = static_cast<double>(i + 1);
  CHECK(calibrate_tau(cal, exact, 0.1) == 1.0);

  std::vector<DetRecord> zero(10, record({10, 10, 40, 40}, {10, 10, 40, 40}));
  CHECK(calibrate_tau(zero, constant_widths(10, 2.0), 0.1) == 0.0);
  CHECK_THROWS_AS(calibrate_tau({}, Matrix(0, 4), 0.1), InputError);

  // Scaling every width by gamma scales tau by 1/gamma and leaves intervals unchanged.
  Rng rng(2);
  const auto data = generate({300, 5});
  Matrix w(data.size(), 4);
  for (double& v : w.values()) v = uniform(rng, 1.0, 10.0);
  Matrix w2 = w;
  for (double& v : w2.values()) v *= 4.0;
  const double t1 = calibrate_tau(data, w, 0.1), t2 = calibrate_tau(data, w2, 0.1);
  CHECK(std::abs(t2 - t1 / 4.0) < 1e-12 * t1);
}

TEST_CASE("interval coverage test") {
  const auto same = record({10, 10, 40, 40}, {10, 10, 40, 40});
  CHECK(interval_covered(same, {1, 1, 1, 1}, 0.5));
  const auto off = record({10, 10, 40, 40}, {15, 10, 40, 40});
  CHECK_FALSE(interval_covered(off, {4, 4, 4, 4}, 1.0));
  CHECK(interval_covered(off, {4, 4, 4, 4}, 1.5));
}

TEST_CASE("size categories and targets") {
  CHECK(size_category({0, 0, 20, 20}) == SizeCategory::small);
  CHECK(category_target(SizeCategory::small) == 0.90);
  CHECK(size_category({0, 0, 32, 32}) == SizeCategory::medium);
  CHECK(category_target(SizeCategory::medium) == 0.89);
  CHECK(size_category({0, 0, 96, 96}) == SizeCategory::large);
  CHECK(category_target(SizeCategory::large) == 0.85);

  std::vector<DetRecord> smalls(5, record({10, 10, 20, 20}, {11, 10, 20, 20}));
  const auto m = size_stratified_metrics(smalls, constant_widths(5, 2.0), 1.0);
  CHECK(m.overall.coverage == m.by_category[0].coverage);
  CHECK(m.overall.mpiw == m.by_category[0].mpiw);
  CHECK(m.by_category[1].n == 0);
}

TEST_CASE("standard fixed margin") {
  std::vector<DetRecord> zero(20, record({10, 10, 40, 40}, {10, 10, 40, 40}));
  CHECK(standard_cp_margin(zero, 0.1) == 0.0);
  const auto data = generate({2000, 7});
  const auto sc = standard_cp_detection(std::span(data).first(1000), std::span(data).subspan(1000), 0.1);
  CHECK(sc.metrics.overall.coverage > 0.86);
  CHECK(std::abs(sc.metrics.overall.mpiw - 2.0 * sc.margin) < 1e-9);
}

TEST_CASE("synthetic error scale grows with the square root of box area") {
  SynthConfig cfg;
  cfg.n = 6000;
  cfg.seed = 3;
  const auto data = generate(cfg);
  // Least squares of |error| on sqrt(area) through the origin vs. a constant.
  double sxx = 0, sxy = 0, small_err = 0, large_err = 0;
  std::size_t ns = 0, nl = 0;
  for (const auto& r : data) {
    const double s = std::sqrt(r.gt.area());
    const double e = std::abs(r.pred.x0 - r.gt.x0);
    sxx += s * s;
    sxy += s * e;
    if (s < 32) {
      small_err += e;
      ++ns;
    } else if (s >= 96) {
      large_err += e;
      ++nl;
    }
  }
  CHECK(sxy / sxx > 0.0);
  REQUIRE(ns > 0);
  REQUIRE(nl > 0);
  CHECK(large_err / static_cast<double>(nl) > 2.0 * small_err / static_cast<double>(ns));
}

TEST_CASE("jsonl round trip and schema errors") {
  const auto data = generate({30, 9});
  const auto path = (std::filesystem::temp_directory_path() / "lcp_detect.jsonl").string();
  {
    std::ofstream(path) << to_jsonl(data);
  }
  CHECK(read_jsonl(path) == data);
  {
    std::ofstream(path) << "{\"img_w\": 10, \"img_h\": 10, \"pred\": [1, 1, 2, 2], \"conf\": 0.5}\n";
  }
  CHECK_THROWS_AS(read_jsonl(path), DataError);
  std::filesystem::remove(path);
  CHECK(generate({0, 1}).empty());
}

TEST_CASE("trained widths adapt to confidence-driven noise") {
  SynthConfig sc;
  sc.n = 6000;
  sc.seed = 1;
  const auto train = generate(sc);
  sc.n = 2000;
  sc.seed = 2;
  const auto cal = generate(sc);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.seed = 4;
  const auto t = train_width_net(train, cal, cfg);
  CHECK(t.tau > 0.0);
  CHECK(t.history.size() == 8);
  // Same box, low vs high confidence.
  std::vector<DetRecord> probe{record({100, 100, 160, 160}, {100, 100, 160, 160}, 0.3, 640, 480),
                               record({100, 100, 160, 160}, {100, 100, 160, 160}, 0.95, 640, 480)};
  const Matrix w = predict_widths(t.net, t.stats, probe);
  double lo = 0, hi = 0;
  for (std::size_t j = 0; j < 4; ++j) {
    lo += w(0, j);
    hi += w(1, j);
  }
  CHECK(lo > hi);
}
