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

#include "lcp/classif.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "json.hpp"
#include "lcp/errors.hpp"
#include "lcp/parallel.hpp"
#include "lcp/random.hpp"

namespace lcp::classif {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Class indices by descending probability, ties by ascending index.
std::vector<std::size_t> rank_order(std::span<const double> p) {
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  return idx;
}

std::size_t check_dataset(std::span<const Example> data, const char* what) {
  if (data.empty()) throw InputError(std::string(what) + " split is empty");
  const std::size_t k = data.front().probs.size();
  if (k < 2) throw InputError("classification needs at least two classes");
  for (const auto& ex : data) {
    if (ex.probs.size() != k) throw InputError("inconsistent class count in dataset");
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= k)
      throw InputError("label out of range");
  }
  return k;
}

}  // namespace

void validate_probs(std::span<const double> p) {
  if (p.empty()) throw InputError("empty probability vector");
  double sum = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) throw InputError("probabilities must be finite and >= 0");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw InputError("probabilities must sum to 1");
}

ClassFeature extract_class_features(std::span<const double> p, std::size_t c) {
  Matrix m(p.size(), kFeatureDim);
  extract_all_features(p, m, 0);
  ClassFeature f;
  std::copy(m.row(c).begin(), m.row(c).end(), f.begin());
  return f;
}

void extract_all_features(std::span<const double> p, Matrix& out, std::size_t row0) {
  const std::size_t k = p.size();
  if (out.cols() != kFeatureDim || out.rows() < row0 + k)
    throw ConfigError("feature buffer has the wrong shape");
  const auto order = rank_order(p);
  const double p_max = p[order.front()];
  const double kd = static_cast<double>(k);
  for (std::size_t pos = 0; pos < k; ++pos) {
    const std::size_t c = order[pos];
    const double pc = p[c];
    const std::size_t rank = pos + 1;
    auto r = out.row(row0 + c);
    r[0] = pc;
    r[1] = static_cast<double>(rank) / kd;
    r[2] = p_max - pc;
    r[3] = rank <= 1 ? 1.0 : 0.0;
    r[4] = rank <= 3 ? 1.0 : 0.0;
    r[5] = rank <= 5 ? 1.0 : 0.0;
    r[6] = pc > 0.0 ? -pc * std::log(pc) : 0.0;
    r[7] = p_max;
  }
}

Arch select_arch(std::size_t num_classes) {
  if (num_classes <= 10) return {32, 16};
  if (num_classes <= 100) return {64, 32};
  if (num_classes <= 1000) return {128, 64};
  return {256, 128};
}

nn::Mlp build_scorer(std::size_t num_classes, std::uint64_t seed) {
  const Arch a = select_arch(num_classes);
  nn::MlpSpec spec;
  spec.input_dim = kFeatureDim;
  spec.hidden = {a.h1, a.h2};
  spec.output_dim = 1;
  spec.activation = nn::Activation::relu;
  return nn::Mlp::build(spec, seed);
}

double margin_loss(double s_true, double s_false_mean) {
  return std::max(0.0, s_true - s_false_mean + kMarginDelta);
}

double coverage_loss(double coverage_hat, double alpha) {
  const double d = coverage_hat - (1.0 - alpha);
  return d * d;
}

double size_loss(std::span<const std::size_t> set_sizes, std::size_t num_classes,
                 double lambda_empty) {
  if (set_sizes.empty()) throw InputError("size loss of an empty batch");
  double total = 0.0;
  for (std::size_t s : set_sizes) {
    total += static_cast<double>(s) / static_cast<double>(num_classes);
    if (s == 0) total += lambda_empty;
  }
  return total / static_cast<double>(set_sizes.size());
}

PredictionSet build_prediction_set(std::span<const double> scores, double q_hat) {
  PredictionSet set;
  set.q_hat = q_hat;
  for (std::size_t c = 0; c < scores.size(); ++c)
    if (scores[c] <= q_hat) set.labels.push_back(c);
  return set;
}

double score_1p(std::span<const double> p, std::size_t c) { return 1.0 - p[c]; }

double score_aps(std::span<const double> p, std::size_t c) {
  double mass = 0.0;
  for (double v : p)
    if (v >= p[c]) mass += v;
  return mass;
}

void scores_1p_all(std::span<const double> p, std::span<double> out) {
  for (std::size_t c = 0; c < p.size(); ++c) out[c] = 1.0 - p[c];
}

void scores_aps_all(std::span<const double> p, std::span<double> out) {
  const auto order = rank_order(p);
  double cum = 0.0;
  std::size_t pos = 0;
  // Accumulate whole tie groups so tied classes share the inclusive mass.
  while (pos < order.size()) {
    std::size_t end = pos;
    double group = 0.0;
    while (end < order.size() && p[order[end]] == p[order[pos]]) group += p[order[end++]];
    cum += group;
    for (std::size_t j = pos; j < end; ++j) out[order[j]] = cum;
    pos = end;
  }
}

int phase_for_epoch(int epoch) {
  if (epoch <= 10) return 1;
  if (epoch <= 20) return 2;
  return 3;
}

TrainedScorer train_classifier_scorer(std::span<const Example> train,
                                      std::span<const Example> cal, const TrainConfig& cfg) {
  const std::size_t k = check_dataset(train, "training");
  if (check_dataset(cal, "calibration") != k)
    throw InputError("calibration class count differs from training");
  {
    std::set<int> labels;
    for (const auto& ex : train) labels.insert(ex.label);
    if (labels.size() < 2) throw InputError("training labels cover a single class");
  }
  if (cfg.batch_size == 0 || cfg.epochs <= 0) throw ConfigError("batch size and epochs must be positive");
  for (const auto& ex : train) validate_probs(ex.probs);

  const std::size_t n = train.size();
  Matrix feats(n * k, kFeatureDim);
  for (std::size_t i = 0; i < n; ++i) extract_all_features(train[i].probs, feats, i * k);

  TrainedScorer out;
  out.num_classes = k;
  out.arch = select_arch(k);
  out.stats = conformal::RunningStats(kFeatureDim);
  for (std::size_t r = 0; r < feats.rows(); ++r) out.stats.push(feats.row(r));
  for (std::size_t r = 0; r < feats.rows(); ++r) out.stats.standardize_into(feats.row(r), feats.row(r));

  out.net = build_scorer(k, derive_seed(cfg.seed, 1));
  out.net.reseed(derive_seed(cfg.seed, 2));
  nn::AdamW opt({0.9, 0.999, 1e-8, cfg.weight_decay});
  const nn::LrSchedule sched{nn::LrSchedule::Kind::cosine_warm_restarts, 5.0, 1e-5};
  Rng rng(derive_seed(cfg.seed, 3));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  conformal::EmaThreshold ema;
  bool ema_ready = false;
  const double target = 1.0 - cfg.alpha;
  const double temp = cfg.temperature;
  const double kd = static_cast<double>(k);

  Matrix x, grad;
  std::vector<double> true_scores;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const int phase = phase_for_epoch(epoch);
    const double lr = nn::lr_at(sched, epoch - 1, cfg.lr);
    shuffle(order, rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = phase;
    rec.lr = lr;
    std::size_t batches = 0, hits = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      const double bd = static_cast<double>(b);
      x.resize(b * k, kFeatureDim);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t src = order[start + i] * k;
        std::copy_n(feats.row(src).data(), k * kFeatureDim, x.row(i * k).data());
      }
      out.net.zero_grad();
      const Matrix s = out.net.forward(x, nn::Mode::training);

      true_scores.resize(b);
      for (std::size_t i = 0; i < b; ++i)
        true_scores[i] = s(i * k + static_cast<std::size_t>(train[order[start + i]].label), 0);
      // Batch threshold: smoothed quantile of the true-label scores. It is
      // differentiable in the window's order statistics, which keeps the
      // soft-set terms invariant to a global shift of all scores.
      std::vector<std::size_t> rank(b);
      std::iota(rank.begin(), rank.end(), 0);
      std::stable_sort(rank.begin(), rank.end(),
                       [&](std::size_t a, std::size_t c) { return true_scores[a] < true_scores[c]; });
      std::vector<double> sorted(b);
      for (std::size_t j = 0; j < b; ++j) sorted[j] = true_scores[rank[j]];
      const auto sq = conformal::smoothed_quantile(sorted, cfg.alpha);
      std::vector<std::pair<std::size_t, double>> tau_grad;  // d tau / d true score
      if (sq.fallback) {
        tau_grad.emplace_back(rank[std::min(sq.k, b) - 1], 1.0);
      } else {
        double den = 0.0;
        for (std::size_t j = sq.k - 3; j <= sq.k + 1; ++j)
          den += 1.5 - 0.1 * std::abs(static_cast<double>(j) - static_cast<double>(sq.k));
        for (std::size_t j = sq.k - 3; j <= sq.k + 1; ++j)
          tau_grad.emplace_back(
              rank[j - 1], (1.5 - 0.1 * std::abs(static_cast<double>(j) - static_cast<double>(sq.k))) / den);
      }
      const double q_batch = std::isfinite(sq.q_hat) ? sq.q_hat : sorted.back();
      if (!ema_ready) {
        ema = conformal::EmaThreshold(q_batch);
        ema_ready = true;
      } else {
        ema.update(q_batch);
      }

      std::size_t batch_hits = 0;
      for (double t : true_scores)
        if (t <= ema.tau()) ++batch_hits;
      hits += batch_hits;
      const auto w = conformal::dynamic_weights(static_cast<double>(batch_hits) / bd, cfg.alpha);

      grad.resize(b * k, 1);
      grad.fill(0.0);
      double l_margin = 0.0, l_cov = 0.0, l_size = 0.0;
      double dtau = 0.0;  // accumulated dL/d tau
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t y = static_cast<std::size_t>(train[order[start + i]].label);
        double row_sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) row_sum += s(i * k + c, 0);
        const double mean_false = (row_sum - true_scores[i]) / (kd - 1.0);
        const double m = true_scores[i] - mean_false + kMarginDelta;
        if (m > 0.0) {
          l_margin += m / bd;
          const double g_false = -w.coverage / (bd * (kd - 1.0));
          for (std::size_t c = 0; c < k; ++c) grad(i * k + c, 0) += g_false;
          grad(i * k + y, 0) += w.coverage / bd - g_false;
        }
      }
      if (phase >= 2) {
        double soft = 0.0;
        std::vector<double> sig(b);
        for (std::size_t i = 0; i < b; ++i) {
          sig[i] = sigmoid((q_batch - true_scores[i]) / temp);
          soft += sig[i] / bd;
        }
        l_cov = coverage_loss(soft, cfg.alpha);
        const double outer = w.coverage * 2.0 * (soft - target);
        for (std::size_t i = 0; i < b; ++i) {
          const std::size_t y = static_cast<std::size_t>(train[order[start + i]].label);
          const double d = outer * sig[i] * (1.0 - sig[i]) / temp / bd;
          grad(i * k + y, 0) -= d;
          dtau += d;
        }
      }
      if (phase >= 3) {
        std::vector<double> sig(k);
        for (std::size_t i = 0; i < b; ++i) {
          double sum = 0.0;
          for (std::size_t c = 0; c < k; ++c) {
            sig[c] = sigmoid((q_batch - s(i * k + c, 0)) / temp);
            sum += sig[c];
          }
          const double empty = std::max(0.0, 1.0 - sum);
          l_size += (sum / kd + cfg.lambda_empty * empty) / bd;
          const double coeff = w.size * (1.0 / kd - (sum < 1.0 ? cfg.lambda_empty : 0.0)) / bd;
          for (std::size_t c = 0; c < k; ++c) {
            const double d = coeff * sig[c] * (1.0 - sig[c]) / temp;
            grad(i * k + c, 0) -= d;
            dtau += d;
          }
        }
      }
      for (const auto& [row, g] : tau_grad) {
        const std::size_t y = static_cast<std::size_t>(train[order[start + row]].label);
        grad(row * k + y, 0) += dtau * g;
      }
      out.net.backward(grad);
      nn::clip_grad_norm(out.net, cfg.clip_norm);
      opt.step(out.net, lr);

      rec.margin += l_margin;
      rec.coverage_term += l_cov;
      rec.size_term += l_size;
      rec.loss += w.coverage * (l_margin + l_cov) + w.size * l_size;
      rec.w_c = w.coverage;
      rec.w_s = w.size;
      ++batches;
    }
    const double nb = static_cast<double>(batches);
    rec.margin /= nb;
    rec.coverage_term /= nb;
    rec.size_term /= nb;
    rec.loss /= nb;
    rec.coverage = static_cast<double>(hits) / static_cast<double>(n);
    rec.threshold = ema.tau();
    out.history.push_back(rec);
  }
  out.threshold = ema.tau();
  out.net.round_to_float32();

  const Matrix cal_scores = score_examples(out.net, out.stats, cal);
  auto t = true_label_scores(cal_scores, cal);
  if (cfg.smoothed_calibration) {
    std::sort(t.begin(), t.end());
    out.q_hat = conformal::smoothed_quantile(t, cfg.alpha).q_hat;
  } else {
    out.q_hat = conformal::conformal_quantile(t, cfg.alpha).q_hat;
  }
  return out;
}

Matrix score_examples(const nn::Mlp& net, const conformal::RunningStats& stats,
                      std::span<const Example> data, unsigned workers) {
  if (data.empty()) return Matrix(0, 0);
  const std::size_t k = check_dataset(data, "scored");
  if (net.input_dim() != kFeatureDim) throw ConfigError("scorer expects 8 features per class");
  Matrix out(data.size(), k);
  constexpr std::size_t chunk = 64;
  const std::size_t chunks = (data.size() + chunk - 1) / chunk;
  parallel_for(chunks, workers, [&](std::size_t ci) {
    const std::size_t lo = ci * chunk;
    const std::size_t hi = std::min(data.size(), lo + chunk);
    Matrix f((hi - lo) * k, kFeatureDim);
    for (std::size_t i = lo; i < hi; ++i) extract_all_features(data[i].probs, f, (i - lo) * k);
    for (std::size_t r = 0; r < f.rows(); ++r) stats.standardize_into(f.row(r), f.row(r));
    const Matrix s = net.infer(f);
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t c = 0; c < k; ++c) out(i, c) = s((i - lo) * k + c, 0);
  });
  return out;
}

Matrix baseline_scores(std::span<const Example> data, Baseline kind) {
  if (data.empty()) return Matrix(0, 0);
  const std::size_t k = check_dataset(data, "scored");
  Matrix out(data.size(), k);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (kind == Baseline::one_minus_p)
      scores_1p_all(data[i].probs, out.row(i));
    else
      scores_aps_all(data[i].probs, out.row(i));
  }
  return out;
}

std::vector<double> true_label_scores(const Matrix& scores, std::span<const Example> data) {
  if (scores.rows() != data.size()) throw InputError("scores and examples are misaligned");
  std::vector<double> t(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    t[i] = scores(i, static_cast<std::size_t>(data[i].label));
  return t;
}

double auroc(const Matrix& scores, std::span<const Example> data) {
  if (scores.rows() != data.size()) throw InputError("scores and examples are misaligned");
  const std::size_t k = scores.cols();
  const std::size_t total = scores.size();
  if (total == 0 || k < 2) return 0.5;
  std::vector<std::uint32_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0u);
  const auto vals = scores.values();
  std::sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) { return vals[a] < vals[b]; });
  auto is_pos = [&](std::uint32_t flat) {
    return flat % k == static_cast<std::size_t>(data[flat / k].label);
  };
  // Mann-Whitney with mid-ranks for ties.
  double neg_rank_sum = 0.0;
  std::size_t pos = 0;
  while (pos < total) {
    std::size_t end = pos;
    while (end < total && vals[idx[end]] == vals[idx[pos]]) ++end;
    const double mid = 0.5 * static_cast<double>(pos + 1 + end);
    for (std::size_t j = pos; j < end; ++j)
      if (!is_pos(idx[j])) neg_rank_sum += mid;
    pos = end;
  }
  const double n_pos = static_cast<double>(data.size());
  const double n_neg = static_cast<double>(total) - n_pos;
  const double u = neg_rank_sum - n_neg * (n_neg + 1.0) / 2.0;
  return u / (n_pos * n_neg);
}

double expected_calibration_error(const Matrix& scores, std::span<const Example> data,
                                  std::size_t bins) {
  if (scores.rows() != data.size()) throw InputError("scores and examples are misaligned");
  if (data.empty()) return 0.0;
  std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = scores.row(i);
    const auto best = static_cast<std::size_t>(std::min_element(row.begin(), row.end()) - row.begin());
    const double conf = std::clamp(1.0 - row[best], 0.0, 1.0);
    const std::size_t bin = std::min(bins - 1, static_cast<std::size_t>(conf * static_cast<double>(bins)));
    conf_sum[bin] += conf;
    acc_sum[bin] += best == static_cast<std::size_t>(data[i].label) ? 1.0 : 0.0;
    ++count[bin];
  }
  double ece = 0.0;
  for (std::size_t b = 0; b < bins; ++b)
    if (count[b] > 0) ece += std::abs(acc_sum[b] - conf_sum[b]);
  return ece / static_cast<double>(data.size());
}

Metrics classif_metrics(const Matrix& scores, std::span<const Example> data, double q_hat) {
  if (scores.rows() != data.size()) throw InputError("scores and examples are misaligned");
  Metrics m;
  m.n = data.size();
  if (data.empty()) return m;
  std::size_t hits = 0, total_size = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = scores.row(i);
    for (double s : row)
      if (s <= q_hat) ++total_size;
    if (row[static_cast<std::size_t>(data[i].label)] <= q_hat) ++hits;
  }
  m.coverage = static_cast<double>(hits) / static_cast<double>(m.n);
  m.mean_size = static_cast<double>(total_size) / static_cast<double>(m.n);
  m.auroc = auroc(scores, data);
  m.ece = expected_calibration_error(scores, data);
  return m;
}

std::vector<Example> generate(const SynthConfig& cfg) {
  if (cfg.num_classes < 2) throw ConfigError("classification synth needs at least two classes");
  Rng rng(derive_seed(cfg.seed, 0xc1a55));
  const std::size_t k = cfg.num_classes;
  std::vector<Example> out(cfg.n);
  std::vector<double> z(k), q(k);
  for (auto& ex : out) {
    const double temp = uniform(rng, 0.1, 0.5);
    double zmax = -std::numeric_limits<double>::infinity();
    for (auto& v : z) {
      v = normal(rng) / temp;
      zmax = std::max(zmax, v);
    }
    ex.probs.resize(k);
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += ex.probs[c] = std::exp(z[c] - zmax);
    double p_max = 0.0;
    for (auto& p : ex.probs) {
      p /= sum;
      p_max = std::max(p_max, p);
    }
    // Confident reports are under-confident relative to the truth and vice
    // versa, so 1 - p thresholds are miscalibrated across examples.
    const double gamma = p_max > 0.3 ? 2.0 : 0.5;
    double qs = 0.0;
    for (std::size_t c = 0; c < k; ++c) qs += q[c] = std::pow(ex.probs[c], gamma);
    double u = uniform01(rng) * qs;
    std::size_t label = k - 1;
    for (std::size_t c = 0; c < k; ++c) {
      if (u < q[c]) {
        label = c;
        break;
      }
      u -= q[c];
    }
    ex.label = static_cast<int>(label);
  }
  return out;
}

std::vector<Example> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open " + path);
  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0, k = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + "malformed JSON");
    }
    if (!j.is_object()) throw DataError(where + "record must be an object");
    if (!j.contains("label") || !j["label"].is_number_integer())
      throw DataError(where + "missing integer field 'label'");
    Example ex;
    ex.label = j["label"].get<int>();
    try {
      if (j.contains("probs")) {
        ex.probs = j["probs"].get<std::vector<double>>();
      } else if (j.contains("logits")) {
        const auto logits = j["logits"].get<std::vector<double>>();
        if (logits.empty()) throw DataError(where + "empty 'logits'");
        const double mx = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        ex.probs.resize(logits.size());
        for (std::size_t c = 0; c < logits.size(); ++c) sum += ex.probs[c] = std::exp(logits[c] - mx);
        for (auto& p : ex.probs) p /= sum;
      } else {
        throw DataError(where + "missing field 'probs' or 'logits'");
      }
    } catch (const nlohmann::json::exception&) {
      throw DataError(where + "'probs'/'logits' must be an array of numbers");
    }
    try {
      validate_probs(ex.probs);
    } catch (const InputError& e) {
      throw DataError(where + e.what());
    }
    if (k == 0) k = ex.probs.size();
    if (ex.probs.size() != k) throw DataError(where + "class count differs from earlier records");
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= k)
      throw DataError(where + "label out of range");
    out.push_back(std::move(ex));
  }
  return out;
}

std::string to_jsonl(std::span<const Example> data) {
  std::string out;
  for (const auto& ex : data) {
    nlohmann::json j;
    j["probs"] = ex.probs;
    j["label"] = ex.label;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace lcp::classif
