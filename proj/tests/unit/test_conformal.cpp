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

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "lcp/conformal.hpp"
#include "lcp/errors.hpp"
#include "lcp/random.hpp"

using namespace lcp;
using namespace lcp::conformal;

namespace {

// Independent oracle: sort, take the ceil((n+1)(1-alpha))-th value, or +inf.
// The rank is computed in exact integer arithmetic on alpha in hundredths.
double oracle_quantile(std::vector<double> s, int alpha_hundredths) {
  std::sort(s.begin(), s.end());
  const long n = static_cast<long>(s.size());
  const long num = (n + 1) * (100 - alpha_hundredths);
  const long rank = (num + 99) / 100;
  if (rank > n) return std::numeric_limits<double>::infinity();
  return s[static_cast<std::size_t>(rank - 1)];
}

}  // namespace

TEST_CASE("conformal quantile examples") {
  const std::vector<double> nine{1, 2, 3, 4, 5, 6, 7, 8, 9};
  CHECK(conformal_quantile(nine, 0.1).q_hat == 9.0);
  const std::vector<double> one{5};
  CHECK(conformal_quantile(one, 0.5).q_hat == 5.0);
  const std::vector<double> five{1, 2, 3, 4, 5};
  const auto r = conformal_quantile(five, 0.05);
  CHECK(std::isinf(r.q_hat));
  CHECK(r.is_infinite());
  CHECK(r.rank == 6);
  CHECK_THROWS_AS(conformal_quantile(std::vector<double>{}, 0.1), InputError);
}

TEST_CASE("conformal quantile matches the sort-and-index oracle") {
  Rng rng(7);
  for (int a : {1, 5, 10, 25, 50}) {
    for (std::size_t n = 1; n <= 100; ++n) {
      std::vector<double> s(n);
      for (double& v : s) v = std::round(uniform(rng, 0.0, 20.0));  // ties on purpose
      const double got = conformal_quantile(s, a / 100.0).q_hat;
      const double want = oracle_quantile(s, a);
      if (std::isinf(want))
        CHECK(std::isinf(got));
      else
        CHECK(got == want);
    }
  }
}

TEST_CASE("conformal quantile is monotone") {
  Rng rng(8);
  std::vector<double> s(50);
  for (double& v : s) v = normal(rng);
  double prev = -std::numeric_limits<double>::infinity();
  for (double alpha = 0.5; alpha >= 0.02; alpha -= 0.01) {
    const double q = conformal_quantile(s, alpha).q_hat;
    CHECK(q >= prev);
    prev = q;
  }
  const double before = conformal_quantile(s, 0.1).q_hat;
  s.push_back(100.0);
  CHECK(conformal_quantile(s, 0.1).q_hat >= before);
}

TEST_CASE("smoothed quantile") {
  std::vector<double> s(100);
  for (std::size_t i = 0; i < 100; ++i) s[i] = static_cast<double>(i + 1);
  const auto r = smoothed_quantile(s, 0.1);
  CHECK(r.k == 91);
  const double want = (1.2 * 88 + 1.3 * 89 + 1.4 * 90 + 1.5 * 91 + 1.4 * 92) / 6.8;
  CHECK(std::abs(r.q_hat - want) < 1e-9);
  CHECK(std::abs(r.q_hat - 612.6 / 6.8) < 1e-9);
  CHECK(r.q_hat >= s[87]);
  CHECK(r.q_hat <= s[91]);

  const std::vector<double> constant(30, 2.5);
  CHECK(smoothed_quantile(constant, 0.1).q_hat == doctest::Approx(2.5).epsilon(1e-15));

  const std::vector<double> small{1, 2, 3};
  const auto f = smoothed_quantile(small, 0.5);
  CHECK(f.fallback);
  CHECK(f.q_hat == conformal_quantile(small, 0.5).q_hat);
}

TEST_CASE("smoothed quantile stays inside its window") {
  Rng rng(4);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 5 + uniform_index(rng, 200);
    std::vector<double> s(n);
    for (double& v : s) v = normal(rng);
    std::sort(s.begin(), s.end());
    const auto r = smoothed_quantile(s, 0.05 + 0.4 * uniform01(rng));
    CHECK(r.q_hat >= s[r.k - 4] - 1e-12);
    CHECK(r.q_hat <= s[r.k] + 1e-12);
  }
}

TEST_CASE("ema threshold") {
  EmaThreshold fixed(0.4);
  fixed.update(0.4);
  CHECK(fixed.tau() == doctest::Approx(0.4).epsilon(1e-15));
  EmaThreshold t(1.0);
  t.update(0.5);
  CHECK(std::abs(t.tau() - 0.975) < 1e-12);
  EmaThreshold c(2.0);
  for (int i = 0; i < 90; ++i) c.update(1.0);
  CHECK(std::abs(c.tau() - 1.0) <= std::pow(0.95, 90) * 1.0 + 1e-12);
  EmaThreshold skip(0.3);
  CHECK_FALSE(skip.update(std::numeric_limits<double>::infinity()));
  CHECK(skip.tau() == 0.3);
  CHECK(skip.skipped() == 1);

  Rng rng(6);
  EmaThreshold e(0.0);
  for (int i = 0; i < 500; ++i) {
    const double q = uniform(rng, -3.0, 3.0);
    const double lo = std::min(e.tau(), q), hi = std::max(e.tau(), q);
    e.update(q);
    CHECK(e.tau() >= lo - 1e-12);
    CHECK(e.tau() <= hi + 1e-12);
  }
}

TEST_CASE("empirical coverage") {
  CHECK(empirical_coverage(std::vector<bool>(5, true)) == 1.0);
  std::vector<bool> nine(10, true);
  nine[3] = false;
  CHECK(empirical_coverage(nine) == doctest::Approx(0.9));
  CHECK(empirical_coverage(std::vector<bool>(4, false)) == 0.0);
  CHECK_THROWS_AS(empirical_coverage(std::vector<bool>{}), InputError);
}

TEST_CASE("dynamic loss weights") {
  CHECK(dynamic_weights(0.85, 0.1) == LossWeights{2.0, 1.0});
  CHECK(dynamic_weights(0.91, 0.1) == LossWeights{1.0, 1.5});
  CHECK(dynamic_weights(0.88, 0.1) == LossWeights{1.0, 1.5});
}

TEST_CASE("standardization") {
  RunningStats st(2);
  st.push(std::vector<double>{-2.0, 3.0});
  st.push(std::vector<double>{2.0, 3.0});
  const auto z = st.standardize(std::vector<double>{0.0, 3.0});
  CHECK(z[0] == 0.0);
  CHECK(z[1] == 0.0);
  CHECK(std::isfinite(st.standardize(std::vector<double>{0.0, 4.0})[1]));
  CHECK(st.standardize(std::vector<double>{0.0, 4.0})[1] == doctest::Approx(1.0 / kStdFloor));

  const auto two = RunningStats::from_state({0.0}, {4.0}, 2);  // sample std 2
  CHECK(two.standardize(std::vector<double>{4.0})[0] == doctest::Approx(2.0));
  CHECK_THROWS_AS(two.standardize(std::vector<double>{1.0, 2.0}), InputError);

  Rng rng(9);
  RunningStats big(3);
  for (int i = 0; i < 100; ++i) big.push(std::vector<double>{normal(rng), 5.0 + 3.0 * normal(rng), 1e3 * normal(rng)});
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> x{normal(rng), normal(rng), normal(rng)};
    const auto back = big.destandardize(big.standardize(x));
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(back[j] - x[j]) <= 1e-10 * std::max(1.0, std::abs(x[j])));
  }
}

TEST_CASE("split calibration covers exchangeable data") {
  const double alpha = 0.1;
  const std::size_t n_cal = 500, n_test = 2000;
  const double var = alpha * (1.0 - alpha);
  const double slack = 3.0 * std::sqrt(var / static_cast<double>(n_test));
  // A single seed also carries the spread of the calibration draw.
  const double seed_slack = 3.0 * std::sqrt(var / static_cast<double>(n_test) + var / static_cast<double>(n_cal));
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(123, seed));
    std::vector<double> cal(n_cal);
    for (double& v : cal) v = std::abs(normal(rng));
    const double q = conformal_quantile(cal, alpha).q_hat;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < n_test; ++i) hit += std::abs(normal(rng)) <= q ? 1 : 0;
    const double cov = static_cast<double>(hit) / static_cast<double>(n_test);
    CHECK(cov >= 1.0 - alpha - seed_slack);
    total += cov;
  }
  CHECK(total / 20.0 >= 1.0 - alpha - slack);
}

TEST_CASE("calibration record json round trip") {
  CalibrationRecord rec;
  rec.task = "detect";
  rec.alpha = 0.1;
  rec.q_hat = std::numeric_limits<double>::infinity();
  rec.values["tau"] = 1.2345678901234567;
  RunningStats st(2);
  st.push(std::vector<double>{0.1, 0.2});
  st.push(std::vector<double>{0.3, 0.7});
  rec.stats["features"] = st;
  rec.notes["calibration"] = "exact";
  CHECK(calibration_from_json(to_json(rec)) == rec);
  CHECK_THROWS(calibration_from_json("{not json"));
}
