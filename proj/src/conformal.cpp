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

#include "lcp/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "lcp/errors.hpp"
#include "lcp/io.hpp"

namespace lcp::conformal {

namespace {
void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0,1)");
}
}  // namespace

std::size_t quantile_rank(std::size_t n, double alpha) {
  check_alpha(alpha);
  const double x = static_cast<double>(n + 1) * (1.0 - alpha);
  return static_cast<std::size_t>(std::ceil(x - 1e-9 * x));
}

QuantileResult conformal_quantile(std::span<const double> scores, double alpha) {
  if (scores.empty()) throw InputError("conformal quantile of an empty score set");
  for (double s : scores)
    if (!std::isfinite(s)) throw InputError("calibration scores must be finite");
  QuantileResult r;
  r.n = scores.size();
  r.rank = quantile_rank(r.n, alpha);
  if (r.rank == 0) r.rank = 1;
  if (r.rank > r.n) {
    r.q_hat = std::numeric_limits<double>::infinity();
    return r;
  }
  std::vector<double> s(scores.begin(), scores.end());
  auto nth = s.begin() + static_cast<std::ptrdiff_t>(r.rank - 1);
  std::nth_element(s.begin(), nth, s.end());
  r.q_hat = *nth;
  return r;
}

SmoothedQuantile smoothed_quantile(std::span<const double> sorted_scores, double alpha) {
  const std::size_t n = sorted_scores.size();
  if (n < 5) {
    SmoothedQuantile out;
    const auto q = conformal_quantile(sorted_scores, alpha);
    out.q_hat = q.q_hat;
    out.k = q.rank;
    out.fallback = true;
    return out;
  }
  std::size_t k = std::clamp<std::size_t>(quantile_rank(n, alpha), 4, n - 1);
  double num = 0.0, den = 0.0;
  for (std::size_t i = k - 3; i <= k + 1; ++i) {
    const double dist = static_cast<double>(i > k ? i - k : k - i);
    const double w = 1.5 - 0.1 * dist;
    num += w * sorted_scores[i - 1];
    den += w;
  }
  return {num / den, k, false};
}

bool EmaThreshold::update(double q_hat) {
  if (!std::isfinite(q_hat)) {
    ++skipped_;
    return false;
  }
  tau_ = beta_ * tau_ + (1.0 - beta_) * q_hat;
  return true;
}

double empirical_coverage(const std::vector<bool>& indicators) {
  if (indicators.empty()) throw InputError("coverage of an empty indicator set");
  const auto hits = static_cast<std::size_t>(std::count(indicators.begin(), indicators.end(), true));
  return empirical_coverage(hits, indicators.size());
}

double empirical_coverage(std::size_t hits, std::size_t total) {
  if (total == 0) throw InputError("coverage of an empty indicator set");
  return static_cast<double>(hits) / static_cast<double>(total);
}

LossWeights dynamic_weights(double coverage_hat, double alpha, double epsilon) {
  if (coverage_hat < 1.0 - alpha - epsilon) return {2.0, 1.0};
  return {1.0, 1.5};
}

void RunningStats::push(std::span<const double> x) {
  if (mean_.empty() && count_ == 0) {
    mean_.assign(x.size(), 0.0);
    m2_.assign(x.size(), 0.0);
  }
  if (x.size() != mean_.size())
    throw InputError("feature dimension " + std::to_string(x.size()) + " does not match " +
                     std::to_string(mean_.size()));
  ++count_;
  const double n = static_cast<double>(count_);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double delta = x[i] - mean_[i];
    mean_[i] += delta / n;
    m2_[i] += delta * (x[i] - mean_[i]);
  }
}

std::vector<double> RunningStats::stddev() const {
  std::vector<double> s(mean_.size(), 0.0);
  if (count_ < 2) return s;
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = std::sqrt(std::max(0.0, m2_[i] / static_cast<double>(count_ - 1)));
  return s;
}

void RunningStats::standardize_into(std::span<const double> x, std::span<double> out) const {
  if (count_ < 2) throw InputError("standardization needs at least two samples");
  if (x.size() != mean_.size() || out.size() != x.size())
    throw InputError("feature dimension " + std::to_string(x.size()) + " does not match " +
                     std::to_string(mean_.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double sd =
        std::sqrt(std::max(0.0, m2_[i] / static_cast<double>(count_ - 1)));
    out[i] = (x[i] - mean_[i]) / std::max(sd, kStdFloor);
  }
}

std::vector<double> RunningStats::standardize(std::span<const double> x) const {
  std::vector<double> out(x.size());
  standardize_into(x, out);
  return out;
}

std::vector<double> RunningStats::destandardize(std::span<const double> z) const {
  if (z.size() != mean_.size()) throw InputError("feature dimension mismatch");
  const auto sd = stddev();
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] * std::max(sd[i], kStdFloor) + mean_[i];
  return out;
}

RunningStats RunningStats::from_state(std::vector<double> mean, std::vector<double> m2,
                                      std::uint64_t count) {
  if (mean.size() != m2.size()) throw DataError("running stats: mean/m2 length mismatch");
  RunningStats s;
  s.mean_ = std::move(mean);
  s.m2_ = std::move(m2);
  s.count_ = count;
  return s;
}

namespace {
using nlohmann::json;

json num(double v) {
  if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
  return json(v);
}

double parse_num(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw DataError("calibration record: bad number '" + s + "'");
  }
  return j.get<double>();
}
}  // namespace

std::string to_json(const CalibrationRecord& rec) {
  json j;
  j["format"] = "lcp-calibration";
  j["version"] = 1;
  j["task"] = rec.task;
  j["alpha"] = rec.alpha;
  j["q_hat"] = num(rec.q_hat);
  json values = json::object();
  for (const auto& [k, v] : rec.values) values[k] = num(v);
  j["values"] = values;
  json stats = json::object();
  for (const auto& [k, s] : rec.stats) {
    stats[k] = {{"count", s.count()}, {"mean", s.mean()}, {"m2", s.m2()}, {"std", s.stddev()}};
  }
  j["stats"] = stats;
  j["notes"] = rec.notes;
  return j.dump(2) + "\n";
}

CalibrationRecord calibration_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "lcp-calibration") throw DataError("not a calibration record");
    if (j.at("version").get<int>() != 1) throw DataError("unsupported calibration version");
    CalibrationRecord rec;
    rec.task = j.at("task").get<std::string>();
    rec.alpha = j.at("alpha").get<double>();
    rec.q_hat = parse_num(j.at("q_hat"));
    for (const auto& [k, v] : j.at("values").items()) rec.values[k] = parse_num(v);
    for (const auto& [k, v] : j.at("stats").items()) {
      rec.stats[k] = RunningStats::from_state(v.at("mean").get<std::vector<double>>(),
                                              v.at("m2").get<std::vector<double>>(),
                                              v.at("count").get<std::uint64_t>());
    }
    if (j.contains("notes")) rec.notes = j.at("notes").get<std::map<std::string, std::string>>();
    return rec;
  } catch (const json::exception& e) {
    throw DataError(std::string("calibration record: ") + e.what());
  }
}

void save_calibration(const CalibrationRecord& rec, const std::string& path) {
  write_file_atomic(path, to_json(rec));
}

CalibrationRecord load_calibration(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError&) {
    throw MissingArtifactError("cannot open calibration record " + path);
  }
  return calibration_from_json(text);
}

}  // namespace lcp::conformal
