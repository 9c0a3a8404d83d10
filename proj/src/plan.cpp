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

#include "lcp/plan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "lcp/errors.hpp"
#include "lcp/parallel.hpp"
#include "lcp/random.hpp"

namespace lcp::plan {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double capped_clearance(const sim::Environment& env, Vec2 p) {
  return std::min(env.obstacle_clearance(p), kClearanceCap);
}

// Free distance along a ray, blocked by obstacles and the world boundary.
double free_ray(const sim::Environment& env, Vec2 p, Vec2 dir) {
  double t = geom::boundary_ray(env.bounds, p, dir);
  for (const auto& o : env.obstacles) t = std::min(t, geom::ray_cast(o, p, dir));
  return std::max(t, 0.0);
}

// Entries that depend only on the map and the point.
void geometric_features(const sim::Environment& env, Vec2 p, Feature& f) {
  const double d0 = capped_clearance(env, p);
  f[kMinClearance] = d0;
  std::size_t inside = d0 < 0.0 ? 1 : 0;
  for (std::size_t ring = 0; ring < 2; ++ring) {
    const double radius = ring == 0 ? 1.0 : 2.0;
    double sum = 0.0;
    for (std::size_t k = 0; k < 8; ++k) {
      const double a = kTwoPi * static_cast<double>(k) / 8.0;
      const double c = capped_clearance(env, p + Vec2{radius * std::cos(a), radius * std::sin(a)});
      sum += c;
      if (c < 0.0) ++inside;
    }
    f[ring == 0 ? kRingClearance1 : kRingClearance2] = sum / 8.0;
  }
  // Share of the 17 probe points (centre and both rings) inside an obstacle.
  f[kDensity] = static_cast<double>(inside) / 17.0;

  std::array<double, 8> rays{};
  for (std::size_t k = 0; k < 8; ++k) {
    const double a = kTwoPi * static_cast<double>(k) / 8.0;
    rays[k] = free_ray(env, p, {std::cos(a), std::sin(a)});
    f[kRay0 + k] = std::min(rays[k], kRayCap);
  }
  // Narrowest chord through p over four axes.
  double chord = kPassageCap;
  for (std::size_t k = 0; k < 4; ++k) chord = std::min(chord, rays[k] + rays[k + 4]);
  f[kPassageWidth] = chord;

  double count = 0.0;
  for (const auto& o : env.obstacles)
    if (geom::signed_distance(o, p) <= 1.0) count += 1.0;
  f[kNearbyCount] = count;
  f[kGoalDistance] = geom::dist(p, env.goal);
  f[kNearGoalFlag] = f[kGoalDistance] < kNearGoal ? 1.0 : 0.0;
  f[kSpeed] = sim::kNominalSpeed;
}

double angle_between(Vec2 a, Vec2 b) {
  const double na = geom::norm(a), nb = geom::norm(b);
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return std::acos(std::clamp(geom::dot(a, b) / (na * nb), -1.0, 1.0));
}

}  // namespace

WaypointFeatures extract_waypoint_features(const sim::Environment& perceived,
                                           std::span<const Vec2> path, std::size_t i) {
  if (path.empty()) throw InputError("waypoint features need a non-empty path");
  if (i >= path.size()) throw InputError("waypoint index out of range");
  WaypointFeatures out;
  Feature& f = out.values;
  geometric_features(perceived, path[i], f);
  f[kProgress] = static_cast<double>(i) / static_cast<double>(path.size());
  out.short_path = path.size() < 3;
  if (!out.short_path && i > 0 && i + 1 < path.size()) {
    const Vec2 a = path[i] - path[i - 1], b = path[i + 1] - path[i];
    const double h = 0.5 * (geom::norm(a) + geom::norm(b));
    if (h > 0.0) f[kCurvature] = geom::norm(b - a) / (h * h);
    f[kHeadingChange] = angle_between(a, b);
  }
  return out;
}

Feature point_features(const sim::Environment& perceived, Vec2 p) {
  Feature f{};
  geometric_features(perceived, p, f);
  const double ds = geom::dist(p, perceived.start), dg = geom::dist(p, perceived.goal);
  f[kProgress] = ds + dg > 0.0 ? ds / (ds + dg) : 0.0;
  return f;
}

double huber(double x, double delta) {
  const double a = std::abs(x);
  return a <= delta ? 0.5 * x * x : delta * (a - 0.5 * delta);
}

namespace {
double huber_grad(double x, double delta) { return std::clamp(x, -delta, delta); }
}  // namespace

double safety_loss(double tau, double d) {
  const double x = tau - d;
  return (x >= 0.0 ? 0.5 : 2.0) * huber(x);
}

double safety_loss_grad(double tau, double d) {
  const double x = tau - d;
  return (x >= 0.0 ? 0.5 : 2.0) * huber_grad(x, kHuberDelta);
}

PathLoss path_loss(std::span<const double> taus, std::span<const double> d, double coverage_hat,
                   double alpha) {
  if (taus.size() != d.size()) throw InputError("path loss needs one target per margin");
  if (taus.size() < 2) throw InputError("path loss needs at least two waypoints");
  PathLoss l;
  const double n = static_cast<double>(taus.size());
  for (std::size_t i = 0; i < taus.size(); ++i) {
    l.safety += safety_loss(taus[i], d[i]) / n;
    l.efficiency += 0.3 * std::abs(taus[i] - kEfficiencyTarget) / n;
  }
  for (std::size_t i = 0; i + 1 < taus.size(); ++i) {
    const double s = taus[i + 1] - taus[i];
    l.smoothness += 0.2 * s * s;
  }
  const double c = coverage_hat - (1.0 - alpha);
  l.coverage = c * c;
  l.total = l.safety + l.efficiency + l.smoothness + l.coverage;
  return l;
}

double clamp_margin(double raw) { return std::clamp(raw, 0.0, kMarginCap); }

double final_margin(double tau, double q_star) { return std::max(kRobotRadius, tau + q_star); }

double clearance_deficit(double perceived_clearance, double true_clearance) {
  const double d = perceived_clearance - true_clearance;
  return std::clamp(std::isnan(d) ? 0.0 : d, 0.0, kClearanceCap);
}

double required_margin(double perceived_clearance, double true_clearance) {
  return std::min(kRobotRadius + clearance_deficit(perceived_clearance, true_clearance), kMarginCap);
}

double offset_quantile(std::span<const double> residuals, double alpha) {
  if (residuals.empty()) throw InputError("offset calibration needs at least one waypoint");
  return conformal::conformal_quantile(residuals, alpha).q_hat;
}

double calibrate_offset(std::span<const double> predicted, std::span<const double> required,
                        double alpha) {
  if (predicted.size() != required.size())
    throw InputError("offset calibration needs one prediction per waypoint");
  std::vector<double> r(predicted.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = required[i] - predicted[i];
  return offset_quantile(r, alpha);
}

std::vector<PathSample> collect_paths(const CollectConfig& cfg) {
  const std::size_t cells = cfg.presets.size() * cfg.noises.size();
  std::vector<std::optional<PathSample>> slots(cells * cfg.trials);
  parallel_for(slots.size(), cfg.workers, [&](std::size_t u) {
    const std::size_t t = u % cfg.trials;
    const std::size_t cell = u / cfg.trials;
    const sim::Preset preset = cfg.presets[cell / cfg.noises.size()];
    const sim::NoiseKind noise = cfg.noises[cell % cfg.noises.size()];
    const std::uint64_t base = derive_seed(derive_seed(cfg.seed, 0xc011ec7), static_cast<std::uint64_t>(preset));
    const std::uint64_t env_seed = derive_seed(base, t);
    const sim::Environment truth = sim::generate_environment(preset, env_seed);
    const std::uint64_t noise_seed = derive_seed(env_seed, 0x100 + static_cast<std::uint64_t>(noise));
    const auto map = sim::perceive(truth, noise, cfg.noise_params, noise_seed);
    const sim::Environment perceived = sim::perceived_environment(truth, map);
    const auto path = sim::rrt_star(perceived, truth.start, truth.goal,
                                    [](Vec2) { return kRobotRadius; }, cfg.rrt,
                                    derive_seed(env_seed, 0x200));
    if (!path.success) return;
    PathSample s;
    s.preset = preset;
    s.noise = noise;
    for (const Vec2& w : path.waypoints) {
      s.features.push_back(point_features(perceived, w));
      const double dp = perceived.obstacle_clearance(w), dt = truth.obstacle_clearance(w);
      s.required.push_back(required_margin(dp, dt));
      s.deficit.push_back(clearance_deficit(dp, dt));
    }
    slots[u] = std::move(s);
  });
  std::vector<PathSample> out;
  for (auto& s : slots)
    if (s) out.push_back(std::move(*s));
  return out;
}

double standard_margin(std::span<const PathSample> cal, double alpha) {
  std::vector<double> pooled;
  for (const auto& s : cal) pooled.insert(pooled.end(), s.deficit.begin(), s.deficit.end());
  if (pooled.empty()) throw InputError("standard margin needs calibration waypoints");
  const auto q = conformal::conformal_quantile(pooled, alpha);
  return kRobotRadius + (q.is_infinite() ? kClearanceCap : q.q_hat);
}

nn::Mlp build_margin_net(std::uint64_t seed) {
  nn::MlpSpec spec;
  spec.input_dim = kFeatureDim;
  spec.hidden = {128, 64, 32};
  spec.output_dim = 1;
  spec.activation = nn::Activation::relu;
  spec.batch_norm = true;
  spec.dropout = 0.2;
  return nn::Mlp::build(spec, seed);
}

std::vector<double> MarginModel::predict(sim::Preset preset, const Matrix& features) const {
  const auto it = stats.find(std::string(sim::preset_name(preset)));
  if (it == stats.end())
    throw StateError("no normalization statistics for preset " + std::string(sim::preset_name(preset)));
  Matrix x(features.rows(), kFeatureDim);
  for (std::size_t i = 0; i < features.rows(); ++i) it->second.standardize_into(features.row(i), x.row(i));
  const Matrix y = net.infer(x);
  std::vector<double> out(y.rows());
  for (std::size_t i = 0; i < y.rows(); ++i) out[i] = clamp_margin(y(i, 0));
  return out;
}

double MarginModel::predict(sim::Preset preset, const Feature& features) const {
  Matrix m(1, kFeatureDim);
  std::copy(features.begin(), features.end(), m.row(0).begin());
  return predict(preset, m)[0];
}

namespace {

// Raw margins for every waypoint of every path, preset by preset.
std::vector<std::vector<double>> predict_paths(const MarginModel& model,
                                               std::span<const PathSample> data) {
  std::vector<std::vector<double>> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    Matrix m(data[i].features.size(), kFeatureDim);
    for (std::size_t j = 0; j < m.rows(); ++j)
      std::copy(data[i].features[j].begin(), data[i].features[j].end(), m.row(j).begin());
    out[i] = model.predict(data[i].preset, m);
  }
  return out;
}

}  // namespace

double margin_coverage(const MarginModel& model, std::span<const PathSample> data) {
  const auto taus = predict_paths(model, data);
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < taus[i].size(); ++j) {
      hits += final_margin(taus[i][j], model.q_star) >= data[i].required[j] ? 1 : 0;
      ++total;
    }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

TrainedMargin train_margin_net(std::span<const PathSample> train, std::span<const PathSample> cal,
                               const TrainConfig& cfg) {
  if (train.empty()) throw InputError("training split has no paths");
  if (cal.empty()) throw InputError("calibration split has no paths");
  if (cfg.batch_size == 0 || cfg.epochs <= 0) throw ConfigError("batch size and epochs must be positive");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");

  TrainedMargin out;
  MarginModel& model = out.model;
  model.alpha = cfg.alpha;
  for (const auto& s : train) {
    if (s.features.size() != s.required.size()) throw InputError("path sample is inconsistent");
    auto [it, fresh] = model.stats.try_emplace(std::string(sim::preset_name(s.preset)), kFeatureDim);
    for (const auto& f : s.features) it->second.push(f);
  }
  for (const auto& [name, st] : model.stats)
    if (st.count() < 2) throw InputError("preset " + name + " has fewer than two training waypoints");

  // Standardized rows, contiguous per path.
  std::vector<std::size_t> offset(train.size() + 1, 0);
  for (std::size_t i = 0; i < train.size(); ++i) offset[i + 1] = offset[i] + train[i].features.size();
  Matrix feats(offset.back(), kFeatureDim);
  std::vector<double> target(offset.back());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& st = model.stats.at(std::string(sim::preset_name(train[i].preset)));
    for (std::size_t j = 0; j < train[i].features.size(); ++j) {
      st.standardize_into(train[i].features[j], feats.row(offset[i] + j));
      target[offset[i] + j] = train[i].required[j];
    }
  }

  model.net = build_margin_net(derive_seed(cfg.seed, 1));
  model.net.reseed(derive_seed(cfg.seed, 2));
  nn::AdamW opt({0.9, 0.999, 1e-8, cfg.weight_decay});
  const nn::LrSchedule sched{nn::LrSchedule::Kind::cosine, static_cast<double>(cfg.epochs), 1e-5};
  Rng rng(derive_seed(cfg.seed, 3));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  conformal::EmaThreshold ema;
  bool ema_ready = false;
  Matrix x, grad;
  std::vector<std::size_t> rows, path_end;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = nn::lr_at(sched, epoch - 1, cfg.lr);
    shuffle(order, rng);
    std::size_t batches = 0, hits = 0, seen = 0;
    for (std::size_t p = 0; p < order.size();) {
      // Whole paths until the batch holds at least batch_size waypoints.
      rows.clear();
      path_end.clear();
      while (p < order.size() && rows.size() < cfg.batch_size) {
        const std::size_t src = order[p++];
        for (std::size_t r = offset[src]; r < offset[src + 1]; ++r) rows.push_back(r);
        path_end.push_back(rows.size());
      }
      const std::size_t b = rows.size();
      if (b < 2) continue;  // batch norm needs two rows
      // One dropout mask per path keeps the smoothness term from
      // penalizing mask noise between neighbouring waypoints.
      std::vector<std::size_t> group(b);
      for (std::size_t k = 0, r = 0; k < path_end.size(); ++k)
        for (; r < path_end[k]; ++r) group[r] = k;
      model.net.set_dropout_groups(std::move(group));
      const double bd = static_cast<double>(b);
      x.resize(b, kFeatureDim);
      for (std::size_t i = 0; i < b; ++i) std::copy_n(feats.row(rows[i]).data(), kFeatureDim, x.row(i).data());
      model.net.zero_grad();
      const Matrix raw = model.net.forward(x, nn::Mode::training);

      std::vector<double> tau(b), resid(b);
      std::size_t batch_hits = 0;
      for (std::size_t i = 0; i < b; ++i) {
        tau[i] = clamp_margin(raw(i, 0));
        resid[i] = target[rows[i]] - tau[i];
        if (tau[i] >= target[rows[i]]) ++batch_hits;
      }
      const double q_b = offset_quantile(resid, cfg.alpha);
      if (!ema_ready) {
        ema = conformal::EmaThreshold(q_b);
        ema_ready = true;
      } else {
        ema.update(q_b);
      }
      for (std::size_t i = 0; i < b; ++i)
        if (tau[i] + ema.tau() >= target[rows[i]]) ++hits;
      seen += b;
      const auto w = conformal::dynamic_weights(static_cast<double>(batch_hits) / bd, cfg.alpha);

      std::vector<double> g(b, 0.0);
      double l_safe = 0.0, l_eff = 0.0, l_smooth = 0.0, soft = 0.0;
      std::vector<double> sig(b);
      for (std::size_t i = 0; i < b; ++i) {
        const double d = target[rows[i]];
        l_safe += safety_loss(tau[i], d) / bd;
        g[i] += w.coverage * safety_loss_grad(tau[i], d) / bd;
        const double e = tau[i] - kEfficiencyTarget;
        l_eff += cfg.efficiency_weight * std::abs(e) / bd;
        g[i] += w.size * cfg.efficiency_weight * (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0)) / bd;
        sig[i] = sigmoid((tau[i] - d) / cfg.temperature);
        soft += sig[i] / bd;
      }
      // Smoothness summed along each path, averaged over the paths.
      const double np = static_cast<double>(path_end.size());
      std::size_t begin = 0;
      for (std::size_t end : path_end) {
        for (std::size_t i = begin; i + 1 < end; ++i) {
          const double s = tau[i + 1] - tau[i];
          l_smooth += cfg.smoothness_weight * s * s / np;
          g[i + 1] += w.size * 2.0 * cfg.smoothness_weight * s / np;
          g[i] -= w.size * 2.0 * cfg.smoothness_weight * s / np;
        }
        begin = end;
      }
      const double c = soft - (1.0 - cfg.alpha);
      const double l_cov = c * c;
      for (std::size_t i = 0; i < b; ++i)
        g[i] += w.coverage * 2.0 * c * sig[i] * (1.0 - sig[i]) / cfg.temperature / bd;

      grad.resize(b, 1);
      for (std::size_t i = 0; i < b; ++i) {
        // Clamp passes gradient only where the step moves the output back
        // into range.
        const double r = raw(i, 0);
        const bool pass = (r >= 0.0 && r <= kMarginCap) || (r < 0.0 && g[i] < 0.0) ||
                          (r > kMarginCap && g[i] > 0.0);
        grad(i, 0) = pass ? g[i] : 0.0;
      }
      model.net.backward(grad);
      nn::clip_grad_norm(model.net, cfg.clip);
      opt.step(model.net, rec.lr);

      const double loss = w.coverage * (l_safe + l_cov) + w.size * (l_eff + l_smooth);
      if (!std::isfinite(loss)) throw TrainingError("margin loss diverged at epoch " + std::to_string(epoch));
      rec.loss += loss;
      rec.safety += l_safe;
      rec.efficiency += l_eff;
      rec.smoothness += l_smooth;
      rec.coverage_term += l_cov;
      rec.w_c += w.coverage;
      rec.w_s += w.size;
      ++batches;
    }
    if (batches > 0) {
      const double nb = static_cast<double>(batches);
      rec.loss /= nb;
      rec.safety /= nb;
      rec.efficiency /= nb;
      rec.smoothness /= nb;
      rec.coverage_term /= nb;
      rec.w_c /= nb;
      rec.w_s /= nb;
    }
    rec.coverage = seen == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(seen);
    rec.threshold = ema.tau();
    out.history.push_back(rec);
  }

  model.net.set_dropout_groups({});
  model.net.round_to_float32();
  const auto taus = predict_paths(model, cal);
  std::vector<double> pred, req;
  for (std::size_t i = 0; i < cal.size(); ++i) {
    pred.insert(pred.end(), taus[i].begin(), taus[i].end());
    req.insert(req.end(), cal[i].required.begin(), cal[i].required.end());
  }
  model.q_star = calibrate_offset(pred, req, cfg.alpha);
  return out;
}

conformal::CalibrationRecord to_calibration(const MarginModel& model, double standard) {
  conformal::CalibrationRecord rec;
  rec.task = "plan";
  rec.alpha = model.alpha;
  rec.q_hat = model.q_star;
  rec.values["q_star"] = model.q_star;
  rec.values["standard_margin"] = standard;
  rec.values["robot_radius"] = kRobotRadius;
  rec.stats = model.stats;
  return rec;
}

void apply_calibration(const conformal::CalibrationRecord& rec, MarginModel& model) {
  if (rec.task != "plan") throw DataError("calibration record is for task '" + rec.task + "', not plan");
  const auto it = rec.values.find("q_star");
  if (it == rec.values.end()) throw DataError("plan calibration lacks q_star");
  for (const auto& [name, st] : rec.stats) {
    sim::parse_preset(name);
    if (st.dim() != kFeatureDim) throw DataError("plan statistics for " + name + " have the wrong width");
  }
  model.q_star = it->second;
  model.alpha = rec.alpha;
  model.stats = rec.stats;
}

MarginField::MarginField(const MarginModel& model, const sim::Environment& perceived, double cell)
    : lo_(perceived.bounds.lo), cell_(cell) {
  if (!(cell > 0.0)) throw ConfigError("margin field cell must be positive");
  nx_ = static_cast<std::size_t>(std::ceil(perceived.bounds.width() / cell)) + 1;
  ny_ = static_cast<std::size_t>(std::ceil(perceived.bounds.height() / cell)) + 1;
  const double largest = final_margin(kMarginCap, model.q_star);
  values_.assign(nx_ * ny_, largest);
  std::vector<std::size_t> idx;
  std::vector<Feature> feats;
  for (std::size_t j = 0; j < ny_; ++j)
    for (std::size_t i = 0; i < nx_; ++i) {
      const Vec2 p{lo_.x + cell * static_cast<double>(i), lo_.y + cell * static_cast<double>(j)};
      if (perceived.obstacle_clearance(p) > largest + 2.0 * cell) continue;
      idx.push_back(j * nx_ + i);
      feats.push_back(point_features(perceived, p));
    }
  evaluated_ = idx.size();
  if (!idx.empty()) {
    Matrix m(idx.size(), kFeatureDim);
    for (std::size_t k = 0; k < idx.size(); ++k) std::copy(feats[k].begin(), feats[k].end(), m.row(k).begin());
    const auto tau = model.predict(perceived.preset, m);
    for (std::size_t k = 0; k < idx.size(); ++k) values_[idx[k]] = final_margin(tau[k], model.q_star);
  }
  min_value_ = *std::min_element(values_.begin(), values_.end());
}

double MarginField::operator()(Vec2 p) const {
  const double fx = std::clamp((p.x - lo_.x) / cell_, 0.0, static_cast<double>(nx_ - 1));
  const double fy = std::clamp((p.y - lo_.y) / cell_, 0.0, static_cast<double>(ny_ - 1));
  const std::size_t i = std::min(static_cast<std::size_t>(fx), nx_ > 1 ? nx_ - 2 : 0);
  const std::size_t j = std::min(static_cast<std::size_t>(fy), ny_ > 1 ? ny_ - 2 : 0);
  const double tx = fx - static_cast<double>(i), ty = fy - static_cast<double>(j);
  const std::size_t i1 = std::min(i + 1, nx_ - 1), j1 = std::min(j + 1, ny_ - 1);
  const double a = values_[j * nx_ + i], b = values_[j * nx_ + i1];
  const double c = values_[j1 * nx_ + i], d = values_[j1 * nx_ + i1];
  return (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d);
}

}  // namespace lcp::plan
