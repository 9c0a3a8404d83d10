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

#include "lcp/detect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "lcp/errors.hpp"
#include "lcp/parallel.hpp"
#include "lcp/random.hpp"

namespace lcp::detect {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Widths widths_row(const Matrix& w, std::size_t i) { return {w(i, 0), w(i, 1), w(i, 2), w(i, 3)}; }

// Derivative of the recentred dead-zone penalty.
double coverage_penalty_grad(double c, double target) {
  if (c > target + 0.015) return 10.0 * (c - target);
  if (c < target - 0.01) return -20.0 * (target - c);
  return 0.0;
}

void check_widths(std::span<const DetRecord> data, const Matrix& widths) {
  if (widths.rows() != data.size() || (widths.cols() != 4 && !data.empty()))
    throw InputError("widths must be an n x 4 matrix aligned with the records");
}

}  // namespace

void validate(const DetRecord& r) {
  if (!(r.img_w > 0 && r.img_h > 0)) throw InputError("image size must be positive");
  for (const Box* b : {&r.pred, &r.gt}) {
    for (double v : b->coords())
      if (!std::isfinite(v)) throw InputError("box coordinates must be finite");
    if (!(b->x0 < b->x1 && b->y0 < b->y1)) throw InputError("degenerate box (zero area)");
    const double tx = 0.05 * r.img_w, ty = 0.05 * r.img_h;
    if (b->x0 < -tx || b->y0 < -ty || b->x1 > r.img_w + tx || b->y1 > r.img_h + ty)
      throw InputError("box lies outside the image");
  }
  if (!(r.conf >= 0.0 && r.conf <= 1.0)) throw InputError("confidence must lie in [0,1]");
}

BoxFeature extract_box_features(const DetRecord& r) {
  const Box& b = r.pred;
  if (!(b.x0 < b.x1 && b.y0 < b.y1)) throw InputError("degenerate box (zero area)");
  if (!(r.img_w > 0 && r.img_h > 0)) throw InputError("image size must be positive");
  const double w = b.width(), h = b.height();
  const double cx = 0.5 * (b.x0 + b.x1), cy = 0.5 * (b.y0 + b.y1);
  return {b.x0 / r.img_w,
          b.y0 / r.img_h,
          b.x1 / r.img_w,
          b.y1 / r.img_h,
          r.conf,
          std::log(w * h),
          w / h,
          (cx - 0.5 * r.img_w) / r.img_w,
          (cy - 0.5 * r.img_h) / r.img_h,
          b.x0 / r.img_w,
          b.y0 / r.img_h,
          (r.img_w - b.x1) / r.img_w,
          (r.img_h - b.y1) / r.img_h};
}

SizeCategory size_category(const Box& box) {
  const double side = std::sqrt(box.area());
  if (side < 32.0) return SizeCategory::small;
  if (side < 96.0) return SizeCategory::medium;
  return SizeCategory::large;
}

double category_target(SizeCategory c) {
  switch (c) {
    case SizeCategory::small: return 0.90;
    case SizeCategory::medium: return 0.89;
    case SizeCategory::large: return 0.85;
  }
  return 0.90;
}

const char* category_name(SizeCategory c) {
  switch (c) {
    case SizeCategory::small: return "small";
    case SizeCategory::medium: return "medium";
    case SizeCategory::large: return "large";
  }
  return "?";
}

nn::Mlp build_width_net(std::uint64_t seed) {
  nn::MlpSpec spec;
  spec.input_dim = kFeatureDim;
  spec.hidden = {256, 128, 64};
  spec.output_dim = 4;
  spec.activation = nn::Activation::elu;
  spec.output_activation = nn::Activation::softplus;
  return nn::Mlp::build(spec, seed);
}

Matrix predict_widths(const nn::Mlp& net, const conformal::RunningStats& stats,
                      std::span<const DetRecord> data, unsigned workers) {
  if (net.input_dim() != kFeatureDim || net.output_dim() != 4)
    throw ConfigError("width net must map 13 features to 4 widths");
  Matrix out(data.size(), 4);
  constexpr std::size_t chunk = 256;
  const std::size_t chunks = (data.size() + chunk - 1) / chunk;
  parallel_for(chunks, workers, [&](std::size_t ci) {
    const std::size_t lo = ci * chunk, hi = std::min(data.size(), lo + chunk);
    Matrix f(hi - lo, kFeatureDim);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto phi = extract_box_features(data[i]);
      stats.standardize_into(phi, f.row(i - lo));
    }
    const Matrix z = net.infer(f);
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t j = 0; j < 4; ++j) out(i, j) = z(i - lo, j) + kWidthFloor;
  });
  return out;
}

double mpiw(const Widths& w, double tau) {
  double s = 0.0;
  for (double v : w) s += 2.0 * v * tau;
  return s / 4.0;
}

double mpiw_loss(const Widths& w, double tau, double box_w, double box_h) {
  if (!(box_w > 0 && box_h > 0)) throw InputError("box size must be positive");
  return mpiw(w, tau) / ((box_w + box_h) / 2.0);
}

double coverage_penalty(double c) {
  if (c > 0.905) return 5.0 * (c - 0.89) * (c - 0.89);
  if (c < 0.88) return 10.0 * (0.89 - c) * (0.89 - c);
  return 0.0;
}

double coverage_penalty(double c, double target) {
  if (c > target + 0.015) return 5.0 * (c - target) * (c - target);
  if (c < target - 0.01) return 10.0 * (target - c) * (target - c);
  return 0.0;
}

double max_abs_error(const DetRecord& r) {
  const auto p = r.pred.coords(), g = r.gt.coords();
  double m = 0.0;
  for (std::size_t j = 0; j < 4; ++j) m = std::max(m, std::abs(g[j] - p[j]));
  return m;
}

double max_error_ratio(const DetRecord& r, const Widths& w) {
  const auto p = r.pred.coords(), g = r.gt.coords();
  double m = 0.0;
  for (std::size_t j = 0; j < 4; ++j) m = std::max(m, std::abs(g[j] - p[j]) / w[j]);
  return m;
}

double calibrate_tau(std::span<const DetRecord> cal, const Matrix& widths, double alpha) {
  if (cal.empty()) throw InputError("empty calibration set");
  check_widths(cal, widths);
  std::vector<double> ratios(cal.size());
  for (std::size_t i = 0; i < cal.size(); ++i) {
    const Widths w = widths_row(widths, i);
    for (double v : w)
      if (!(v > 0.0)) throw InputError("interval widths must be positive");
    ratios[i] = max_error_ratio(cal[i], w);
  }
  return conformal::conformal_quantile(ratios, alpha).q_hat;
}

bool interval_covered(const DetRecord& r, const Widths& w, double tau) {
  const auto p = r.pred.coords(), g = r.gt.coords();
  for (std::size_t j = 0; j < 4; ++j)
    if (std::abs(g[j] - p[j]) > w[j] * tau) return false;
  return true;
}

namespace {

template <typename CoveredFn, typename WidthFn>
StratifiedMetrics stratify(std::span<const DetRecord> data, CoveredFn covered, WidthFn width) {
  StratifiedMetrics m;
  std::array<std::size_t, 3> hits{};
  std::array<double, 3> width_sum{};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto c = static_cast<std::size_t>(size_category(data[i].gt));
    ++m.by_category[c].n;
    if (covered(i)) ++hits[c];
    width_sum[c] += width(i);
  }
  std::size_t all_hits = 0;
  double all_width = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    auto& cm = m.by_category[c];
    if (cm.n > 0) {
      cm.coverage = static_cast<double>(hits[c]) / static_cast<double>(cm.n);
      cm.mpiw = width_sum[c] / static_cast<double>(cm.n);
    }
    all_hits += hits[c];
    all_width += width_sum[c];
  }
  m.overall.n = data.size();
  if (!data.empty()) {
    m.overall.coverage = static_cast<double>(all_hits) / static_cast<double>(data.size());
    m.overall.mpiw = all_width / static_cast<double>(data.size());
  }
  return m;
}

}  // namespace

StratifiedMetrics size_stratified_metrics(std::span<const DetRecord> data, const Matrix& widths,
                                          double tau) {
  check_widths(data, widths);
  return stratify(
      data, [&](std::size_t i) { return interval_covered(data[i], widths_row(widths, i), tau); },
      [&](std::size_t i) { return mpiw(widths_row(widths, i), tau); });
}

double standard_cp_margin(std::span<const DetRecord> cal, double alpha) {
  if (cal.empty()) throw InputError("empty calibration set");
  std::vector<double> err(cal.size());
  for (std::size_t i = 0; i < cal.size(); ++i) err[i] = max_abs_error(cal[i]);
  return conformal::conformal_quantile(err, alpha).q_hat;
}

StratifiedMetrics standard_cp_metrics(std::span<const DetRecord> data, double margin) {
  return stratify(
      data, [&](std::size_t i) { return max_abs_error(data[i]) <= margin; },
      [&](std::size_t) { return 2.0 * margin; });
}

StandardCp standard_cp_detection(std::span<const DetRecord> cal, std::span<const DetRecord> test,
                                 double alpha) {
  StandardCp out;
  out.margin = standard_cp_margin(cal, alpha);
  out.metrics = standard_cp_metrics(test, out.margin);
  return out;
}

TrainedWidthNet train_width_net(std::span<const DetRecord> train, std::span<const DetRecord> cal,
                                const TrainConfig& cfg) {
  if (train.empty()) throw InputError("training split is empty");
  if (cal.empty()) throw InputError("calibration split is empty");
  if (cfg.batch_size == 0 || cfg.epochs <= 0) throw ConfigError("batch size and epochs must be positive");
  for (const auto& r : train) validate(r);
  for (const auto& r : cal) validate(r);

  const std::size_t n = train.size();
  TrainedWidthNet out;
  out.stats = conformal::RunningStats(kFeatureDim);
  Matrix feats(n, kFeatureDim), err(n, 4);
  std::vector<double> side(n);
  std::vector<std::size_t> cat(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto phi = extract_box_features(train[i]);
    std::copy(phi.begin(), phi.end(), feats.row(i).begin());
    out.stats.push(phi);
    const auto p = train[i].pred.coords(), g = train[i].gt.coords();
    for (std::size_t j = 0; j < 4; ++j) err(i, j) = std::abs(g[j] - p[j]);
    side[i] = 0.5 * (train[i].pred.width() + train[i].pred.height());
    cat[i] = static_cast<std::size_t>(size_category(train[i].gt));
  }
  for (std::size_t i = 0; i < n; ++i) out.stats.standardize_into(feats.row(i), feats.row(i));

  out.net = build_width_net(derive_seed(cfg.seed, 1));
  out.net.reseed(derive_seed(cfg.seed, 2));
  nn::AdamW opt({0.9, 0.999, 1e-8, cfg.weight_decay});
  const nn::LrSchedule sched{nn::LrSchedule::Kind::cosine, static_cast<double>(cfg.epochs), 1e-5};
  Rng rng(derive_seed(cfg.seed, 3));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  conformal::EmaThreshold ema;
  bool ema_ready = false;
  double tau_cov = 0.0;
  Matrix x, grad;
  std::vector<double> ratio, g_r;
  std::vector<std::size_t> arg;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = nn::lr_at(sched, epoch - 1, cfg.lr);
    if (ema_ready) tau_cov = ema.tau();
    shuffle(order, rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    std::size_t batches = 0, hits = 0;
    std::array<std::size_t, 3> ep_hits{}, ep_n{};
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      const double bd = static_cast<double>(b);
      x.resize(b, kFeatureDim);
      for (std::size_t i = 0; i < b; ++i)
        std::copy_n(feats.row(order[start + i]).data(), kFeatureDim, x.row(i).data());
      out.net.zero_grad();
      Matrix w = out.net.forward(x, nn::Mode::training);
      for (double& v : w.values()) v += kWidthFloor;

      ratio.assign(b, 0.0);
      arg.assign(b, 0);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t src = order[start + i];
        for (std::size_t j = 0; j < 4; ++j) {
          const double r = err(src, j) / w(i, j);
          if (r > ratio[i]) {
            ratio[i] = r;
            arg[i] = j;
          }
        }
      }
      std::vector<std::size_t> rank(b);
      std::iota(rank.begin(), rank.end(), 0);
      std::stable_sort(rank.begin(), rank.end(),
                       [&](std::size_t a, std::size_t c) { return ratio[a] < ratio[c]; });
      std::vector<double> sorted(b);
      for (std::size_t j = 0; j < b; ++j) sorted[j] = ratio[rank[j]];
      const auto sq = conformal::smoothed_quantile(sorted, cfg.alpha);
      const double q_b = std::isfinite(sq.q_hat) ? sq.q_hat : sorted.back();
      if (!ema_ready) {
        ema = conformal::EmaThreshold(q_b);
        ema_ready = true;
        tau_cov = q_b;
      } else {
        ema.update(q_b);
      }

      std::array<std::size_t, 3> c_hits{}, c_n{};
      std::size_t batch_hits = 0;
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t c = cat[order[start + i]];
        ++c_n[c];
        if (ratio[i] <= tau_cov) {
          ++c_hits[c];
          ++batch_hits;
        }
      }
      hits += batch_hits;
      for (std::size_t c = 0; c < 3; ++c) {
        ep_hits[c] += c_hits[c];
        ep_n[c] += c_n[c];
      }
      const auto wts = conformal::dynamic_weights(static_cast<double>(batch_hits) / bd, cfg.alpha);

      grad.resize(b, 4);
      grad.fill(0.0);
      g_r.assign(b, 0.0);
      // Width term at the batch quantile; differentiating through the
      // quantile makes it invariant to a global rescaling of the widths.
      double l_mpiw = 0.0, dq = 0.0;
      for (std::size_t i = 0; i < b; ++i) {
        const double s = side[order[start + i]];
        double sum_w = 0.0;
        for (std::size_t j = 0; j < 4; ++j) sum_w += w(i, j);
        l_mpiw += q_b * sum_w / 2.0 / s / bd;
        for (std::size_t j = 0; j < 4; ++j) grad(i, j) += wts.size * q_b / 2.0 / s / bd;
        dq += wts.size * sum_w / 2.0 / s / bd;
      }
      if (sq.fallback) {
        g_r[rank[std::min(sq.k, b) - 1]] += dq;
      } else {
        double den = 0.0;
        for (std::size_t j = sq.k - 3; j <= sq.k + 1; ++j)
          den += 1.5 - 0.1 * std::abs(static_cast<double>(j) - static_cast<double>(sq.k));
        for (std::size_t j = sq.k - 3; j <= sq.k + 1; ++j)
          g_r[rank[j - 1]] +=
              dq * (1.5 - 0.1 * std::abs(static_cast<double>(j) - static_cast<double>(sq.k))) / den;
      }

      // Soft coverage at the running threshold, overall and per category.
      const double temp = cfg.temperature * tau_cov;
      std::vector<double> sig(b);
      double soft = 0.0;
      std::array<double, 3> soft_c{};
      for (std::size_t i = 0; i < b; ++i) {
        sig[i] = sigmoid((tau_cov - ratio[i]) / temp);
        soft += sig[i] / bd;
        soft_c[cat[order[start + i]]] += sig[i];
      }
      double l_cov = coverage_penalty(soft);
      const double d_global = coverage_penalty_grad(soft, 0.89);
      std::array<double, 3> d_cat{};
      for (std::size_t c = 0; c < 3; ++c) {
        if (c_n[c] == 0) continue;
        const double target = category_target(static_cast<SizeCategory>(c));
        const double cov_c = soft_c[c] / static_cast<double>(c_n[c]);
        const double hard_c = static_cast<double>(c_hits[c]) / static_cast<double>(c_n[c]);
        const double boost = std::abs(hard_c - target) > 0.02 ? 1.5 : 1.0;
        const double frac = static_cast<double>(c_n[c]) / bd;
        l_cov += boost * frac * coverage_penalty(cov_c, target);
        // d/d sig_i of frac * P(cov_c) = P'(cov_c) / b
        d_cat[c] = boost * coverage_penalty_grad(cov_c, target);
      }
      for (std::size_t i = 0; i < b; ++i) {
        const double d_soft = wts.coverage * (d_global + d_cat[cat[order[start + i]]]) / bd;
        g_r[i] += d_soft * (-sig[i] * (1.0 - sig[i]) / temp);
      }
      for (std::size_t i = 0; i < b; ++i)
        if (g_r[i] != 0.0) grad(i, arg[i]) += g_r[i] * (-ratio[i] / w(i, arg[i]));

      out.net.backward(grad);
      nn::clip_grad_norm(out.net, cfg.clip_norm);
      opt.step(out.net, lr);

      rec.coverage_term += l_cov;
      rec.mpiw_term += l_mpiw;
      rec.loss += wts.coverage * l_cov + wts.size * l_mpiw;
      rec.w_c = wts.coverage;
      rec.w_s = wts.size;
      ++batches;
    }
    const double nb = static_cast<double>(batches);
    rec.coverage_term /= nb;
    rec.mpiw_term /= nb;
    rec.loss /= nb;
    rec.coverage = static_cast<double>(hits) / static_cast<double>(n);
    for (std::size_t c = 0; c < 3; ++c)
      rec.category_coverage[c] = ep_n[c] ? static_cast<double>(ep_hits[c]) / static_cast<double>(ep_n[c]) : 0.0;
    rec.threshold = ema.tau();
    out.history.push_back(rec);
  }
  out.threshold = ema.tau();
  out.net.round_to_float32();
  out.tau = calibrate_tau(cal, predict_widths(out.net, out.stats, cal), cfg.alpha);
  return out;
}

std::vector<DetRecord> generate(const SynthConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0xde7ec7));
  std::vector<DetRecord> out(cfg.n);
  const double lo = std::log(10.0), hi = std::log(300.0);
  for (auto& r : out) {
    r.img_w = cfg.img_w;
    r.img_h = cfg.img_h;
    const double side = std::exp(uniform(rng, lo, hi));
    const double aspect = std::exp(uniform(rng, -0.5, 0.5));
    const double w = std::min(side * std::sqrt(aspect), 0.95 * cfg.img_w);
    const double h = std::min(side / std::sqrt(aspect), 0.95 * cfg.img_h);
    const double x0 = uniform(rng, 0.0, cfg.img_w - w), y0 = uniform(rng, 0.0, cfg.img_h - h);
    r.gt = {x0, y0, x0 + w, y0 + h};
    r.conf = uniform(rng, 0.3, 1.0);
    const double sigma = cfg.heteroscedastic
                             ? cfg.noise_scale * std::sqrt(w * h) * (0.5 + (1.0 - r.conf))
                             : cfg.noise_scale * 40.0;
    r.pred = r.gt;
    for (int attempt = 0; attempt < 100; ++attempt) {
      Box p{std::clamp(x0 + sigma * normal(rng), 0.0, cfg.img_w),
            std::clamp(y0 + sigma * normal(rng), 0.0, cfg.img_h),
            std::clamp(x0 + w + sigma * normal(rng), 0.0, cfg.img_w),
            std::clamp(y0 + h + sigma * normal(rng), 0.0, cfg.img_h)};
      if (p.width() >= 1.0 && p.height() >= 1.0) {
        r.pred = p;
        break;
      }
    }
  }
  return out;
}

std::vector<DetRecord> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open " + path);
  std::vector<DetRecord> out;
  std::string line;
  std::size_t line_no = 0;
  auto box = [](const nlohmann::json& j, const std::string& where, const char* key) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != 4)
      throw DataError(where + "field '" + key + "' must be an array of 4 numbers");
    std::array<double, 4> v{};
    for (std::size_t i = 0; i < 4; ++i) {
      if (!j[key][i].is_number()) throw DataError(where + "field '" + key + "' must hold numbers");
      v[i] = j[key][i].get<double>();
    }
    return Box{v[0], v[1], v[2], v[3]};
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw DataError(where + "malformed JSON");
    }
    if (!j.is_object()) throw DataError(where + "record must be an object");
    DetRecord r;
    for (const char* key : {"img_w", "img_h", "conf"})
      if (!j.contains(key) || !j[key].is_number())
        throw DataError(where + "missing numeric field '" + key + "'");
    r.img_w = j["img_w"].get<double>();
    r.img_h = j["img_h"].get<double>();
    r.conf = j["conf"].get<double>();
    r.pred = box(j, where, "pred");
    r.gt = box(j, where, "gt");
    try {
      validate(r);
    } catch (const InputError& e) {
      throw DataError(where + e.what());
    }
    out.push_back(r);
  }
  return out;
}

std::string to_jsonl(std::span<const DetRecord> data) {
  std::string out;
  for (const auto& r : data) {
    nlohmann::json j;
    auto dim = [](double v) {
      return v == std::floor(v) ? nlohmann::json(static_cast<long long>(v)) : nlohmann::json(v);
    };
    j["img_w"] = dim(r.img_w);
    j["img_h"] = dim(r.img_h);
    j["pred"] = r.pred.coords();
    j["gt"] = r.gt.coords();
    j["conf"] = r.conf;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace lcp::detect
