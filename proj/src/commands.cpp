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

#include "lcp/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "lcp/benchmark.hpp"
#include "lcp/classif.hpp"
#include "lcp/conformal.hpp"
#include "lcp/detect.hpp"
#include "lcp/errors.hpp"
#include "lcp/io.hpp"
#include "lcp/nn.hpp"
#include "lcp/plan.hpp"
#include "lcp/random.hpp"

namespace lcp::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto part = trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!part.empty()) out.push_back(part);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(x))
    throw ConfigError(std::string(key) + ": expected a number, got '" + s + "'");
  return x;
}

std::uint64_t parse_uint(std::string_view key, std::string_view v) {
  const std::string s(v);
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + s + "'");
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError(std::string(key) + ": integer out of range '" + s + "'");
  }
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

}  // namespace

void apply_setting(RunConfig& cfg, std::string_view key_in, std::string_view value_in) {
  const std::string key = trim(key_in), value = trim(value_in);
  if (key == "task") {
    if (value != "classif" && value != "detect" && value != "plan" && value != "simulate")
      throw ConfigError("task: expected classif, detect, plan or simulate, got '" + value + "'");
    cfg.task = value;
  } else if (key == "alpha") {
    cfg.alpha = parse_double(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_uint(key, value);
  } else if (key == "workers") {
    const auto w = parse_uint(key, value);
    if (w == 0 || w > 1024) throw ConfigError("workers: expected 1-1024");
    cfg.workers = static_cast<unsigned>(w);
  } else if (key == "out") {
    if (value.empty()) throw ConfigError("out: empty path");
    cfg.out = value;
  } else if (key == "input") {
    cfg.input = value;
  } else if (key == "model") {
    cfg.model = value;
  } else if (key == "split") {
    const auto parts = split_list(value);
    if (parts.size() != 3) throw ConfigError("split: expected three fractions train,cal,test");
    for (std::size_t i = 0; i < 3; ++i) cfg.split[i] = parse_double(key, parts[i]);
  } else if (key == "batch_size") {
    cfg.batch_size = parse_uint(key, value);
  } else if (key == "epochs") {
    cfg.epochs = static_cast<int>(std::min<std::uint64_t>(parse_uint(key, value), 100000));
  } else if (key == "lr") {
    cfg.lr = parse_double(key, value);
  } else if (key == "n") {
    cfg.n = parse_uint(key, value);
  } else if (key == "num_classes") {
    cfg.num_classes = parse_uint(key, value);
  } else if (key == "noise_scale") {
    cfg.noise_scale = parse_double(key, value);
  } else if (key == "heteroscedastic") {
    cfg.heteroscedastic = parse_bool(key, value);
  } else if (key == "smoothed_calibration") {
    cfg.smoothed_calibration = parse_bool(key, value);
  } else if (key == "seeds") {
    cfg.seeds = parse_uint(key, value);
  } else if (key == "eval_cal") {
    cfg.eval_cal = parse_uint(key, value);
  } else if (key == "eval_test") {
    cfg.eval_test = parse_uint(key, value);
  } else if (key == "methods") {
    cfg.methods = split_list(value);
  } else if (key == "presets") {
    cfg.presets.clear();
    for (const auto& p : split_list(value)) cfg.presets.push_back(sim::parse_preset(p));
  } else if (key == "noises") {
    cfg.noises.clear();
    for (const auto& p : split_list(value)) cfg.noises.push_back(sim::parse_noise(p));
  } else if (key == "trials") {
    cfg.trials = parse_uint(key, value);
  } else if (key == "collect_trials") {
    cfg.collect_trials = parse_uint(key, value);
  } else if (key == "p_miss") {
    cfg.noise.p_miss = parse_double(key, value);
  } else if (key == "hide_frac") {
    cfg.noise.hide_frac = parse_double(key, value);
  } else if (key == "drift_sigma") {
    cfg.noise.drift_sigma = parse_double(key, value);
  } else if (key == "random_walk") {
    cfg.noise.random_walk = parse_bool(key, value);
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
  cfg.entries[key] = value;
}

void apply_config_text(RunConfig& cfg, std::string_view text, std::string_view origin) {
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const std::string where = std::string(origin) + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + "missing key");
    if (const auto it = seen.find(key); it != seen.end())
      throw ConfigError(where + "duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
    seen[key] = line_no;
    try {
      apply_setting(cfg, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path);
}

void validate(const RunConfig& cfg) {
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  double sum = 0.0;
  for (double f : cfg.split) {
    if (f < 0.0) throw ConfigError("split fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be positive");
  if (cfg.num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (!(cfg.noise_scale > 0.0)) throw ConfigError("noise_scale must be positive");
  if (cfg.seeds == 0) throw ConfigError("seeds must be at least 1");
  if (!(cfg.noise.p_miss >= 0.0 && cfg.noise.p_miss <= 1.0)) throw ConfigError("p_miss must lie in [0, 1]");
  if (!(cfg.noise.hide_frac >= 0.0 && cfg.noise.hide_frac <= 1.0))
    throw ConfigError("hide_frac must lie in [0, 1]");
  if (!(cfg.noise.drift_sigma >= 0.0)) throw ConfigError("drift_sigma must be non-negative");
  if (cfg.presets.empty()) throw ConfigError("presets must not be empty");
  if (cfg.noises.empty()) throw ConfigError("noises must not be empty");
}

int exit_code_for(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->kind()) {
      case ErrorKind::config: return 2;
      case ErrorKind::data:
      case ErrorKind::input: return 3;
      case ErrorKind::missing_artifact: return 4;
      default: return 1;
    }
  }
  return 1;
}

// ---------------------------------------------------------------------------
// Shared plumbing

namespace {

struct Output {
  Output(const RunConfig& c, std::string_view cmd) : cfg(c), command(cmd) {}

  const RunConfig& cfg;
  std::string command;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  std::vector<std::string> written;
  ordered_json seeds = ordered_json::object();
  ordered_json inputs = ordered_json::object();
  ordered_json artifacts = ordered_json::object();
  ordered_json extra = ordered_json::object();

  fs::path path(const std::string& name) const { return fs::path(cfg.out) / name; }

  void ensure_dir() const {
    std::error_code ec;
    fs::create_directories(cfg.out, ec);
    if (ec) throw IoError("cannot create output directory " + cfg.out + ": " + ec.message());
  }

  void write(const std::string& name, const std::string& text) {
    write_file_atomic(path(name).string(), text);
    written.push_back(name);
  }

  void artifact(const std::string& name) {
    artifacts[name] = file_hash(path(name).string());
    written.push_back(name);
  }

  void input(const std::string& file) { inputs[file] = file_hash(file); }

  // Atomic; precedes every metrics file.
  void manifest() {
    ordered_json m;
    m["tool"] = "lcp";
    m["version"] = std::string(kVersion);
    m["command"] = command;
    m["task"] = cfg.task;
    ordered_json conf = ordered_json::object();
    for (const auto& [k, v] : cfg.entries) conf[k] = v;
    m["config"] = conf;
    m["effective"] = {{"alpha", cfg.alpha}, {"seed", cfg.seed}, {"workers", cfg.workers},
                      {"split", cfg.split}, {"seeds", cfg.seeds}};
    m["seeds"] = seeds;
    m["inputs"] = inputs;
    m["artifacts"] = artifacts;
    for (const auto& [k, v] : extra.items()) m[k] = v;
    m["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    m["finished_unix"] = static_cast<long long>(std::time(nullptr));
    write("manifest.json", m.dump(2) + "\n");
  }
};

std::string num(double v) { return std::isfinite(v) ? fmt_num(v) : "n/a"; }

// Mean and spread over evaluation repetitions; spread needs three.
struct Agg {
  std::vector<double> v;
  void add(double x) { v.push_back(x); }
  double mean() const {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  }
  double stdev() const {
    if (v.size() < 3) return std::numeric_limits<double>::quiet_NaN();
    const double m = mean();
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
};

// Train, cal and test index sets from a seeded permutation.
struct Splits {
  std::vector<std::size_t> train, cal, test;
};

Splits split_indices(std::size_t n, const std::array<double, 3>& frac, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle(order, rng);
  const auto n_train = static_cast<std::size_t>(std::floor(frac[0] * static_cast<double>(n) + 1e-9));
  const auto n_cal = std::min(n - n_train, static_cast<std::size_t>(std::floor(frac[1] * static_cast<double>(n) + 1e-9)));
  Splits s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.cal.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_cal));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_cal), order.end());
  return s;
}

template <typename T>
std::vector<T> take(const std::vector<T>& data, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data[i]);
  return out;
}

std::vector<std::string> methods_or(const RunConfig& cfg, std::vector<std::string> all) {
  if (cfg.methods.empty()) return all;
  for (const auto& m : cfg.methods)
    if (std::find(all.begin(), all.end(), m) == all.end())
      throw ConfigError("method '" + m + "' is not available for task " + cfg.task);
  return cfg.methods;
}

bool wants(const std::vector<std::string>& methods, std::string_view m) {
  return std::find(methods.begin(), methods.end(), m) != methods.end();
}

std::string require_artifact(const RunConfig& cfg, const std::string& name, std::string_view method) {
  const fs::path p = fs::path(cfg.model_dir()) / name;
  if (!fs::exists(p))
    throw ConfigError("method '" + std::string(method) + "' needs " + p.string() + "; run train first");
  return p.string();
}

// Evaluation repetitions draw either fresh synthetic data or a seeded
// cal/test split of the input file.
struct EvalSizes {
  std::size_t cal = 0, test = 0;
};

EvalSizes eval_sizes(const RunConfig& cfg, std::size_t available) {
  EvalSizes s{cfg.eval_cal, cfg.eval_test};
  if (s.cal == 0 && s.test == 0) {
    const double denom = cfg.split[1] + cfg.split[2];
    if (denom <= 0.0) throw ConfigError("evaluation needs positive cal and test fractions or eval_cal/eval_test");
    s.cal = static_cast<std::size_t>(std::floor(cfg.split[1] / denom * static_cast<double>(available) + 1e-9));
    s.test = available - s.cal;
  }
  if (s.cal == 0 || s.test == 0) throw ConfigError("evaluation needs non-empty cal and test sets");
  if (!cfg.input.empty() && s.cal + s.test > available)
    throw ConfigError("eval_cal + eval_test exceeds the " + std::to_string(available) + " input records");
  return s;
}

std::uint64_t eval_seed(const RunConfig& cfg, std::size_t rep) { return derive_seed(cfg.seed, 0xe7a1 + rep); }

// ---------------------------------------------------------------------------
// Classification

struct ClassifModel {
  nn::Mlp net;
  conformal::RunningStats stats;
  std::size_t num_classes = 0;
};

ClassifModel load_classif(const RunConfig& cfg) {
  ClassifModel m;
  m.net = nn::load_checkpoint(require_artifact(cfg, "classif_model.ckpt", "learned"));
  const auto rec = conformal::load_calibration(require_artifact(cfg, "classif_calibration.json", "learned"));
  if (rec.task != "classif") throw DataError("classif_calibration.json is for task '" + rec.task + "'");
  const auto st = rec.stats.find("features");
  const auto k = rec.values.find("num_classes");
  if (st == rec.stats.end() || k == rec.values.end()) throw DataError("classif calibration is incomplete");
  m.stats = st->second;
  m.num_classes = static_cast<std::size_t>(k->second);
  if (m.net.input_dim() != classif::kFeatureDim || m.stats.dim() != classif::kFeatureDim)
    throw DataError("classif checkpoint has the wrong input width");
  return m;
}

std::vector<classif::Example> classif_data(const RunConfig& cfg, Output& out, std::size_t n, std::uint64_t seed) {
  if (!cfg.input.empty()) {
    out.input(cfg.input);
    return classif::read_jsonl(cfg.input);
  }
  return classif::generate({cfg.num_classes, n, seed});
}

double calibrate_scores(const RunConfig& cfg, const Matrix& scores, std::span<const classif::Example> cal) {
  auto s = classif::true_label_scores(scores, cal);
  if (cfg.smoothed_calibration) {
    std::sort(s.begin(), s.end());
    return conformal::smoothed_quantile(s, cfg.alpha).q_hat;
  }
  return conformal::conformal_quantile(s, cfg.alpha).q_hat;
}

Matrix classif_scores(const std::string& method, const ClassifModel* model, std::span<const classif::Example> data,
                      unsigned workers) {
  if (method == "learned") return classif::score_examples(model->net, model->stats, data, workers);
  if (method == "1p") return classif::baseline_scores(data, classif::Baseline::one_minus_p);
  return classif::baseline_scores(data, classif::Baseline::aps);
}

const std::vector<std::string> kClassifMethods = {"learned", "1p", "aps"};

std::string classif_metric_rows(const std::vector<std::string>& methods,
                                const std::map<std::string, std::map<std::string, Agg>>& agg) {
  CsvWriter csv({"method", "seeds", "coverage_mean", "coverage_std", "size_mean", "size_std", "auroc_mean",
                 "auroc_std", "ece_mean", "ece_std", "q_hat_mean", "q_hat_std"});
  for (const auto& m : methods) {
    const auto& a = agg.at(m);
    csv.row({m, std::to_string(a.at("coverage").v.size()), num(a.at("coverage").mean()), num(a.at("coverage").stdev()),
             num(a.at("size").mean()), num(a.at("size").stdev()), num(a.at("auroc").mean()),
             num(a.at("auroc").stdev()), num(a.at("ece").mean()), num(a.at("ece").stdev()),
             num(a.at("q_hat").mean()), num(a.at("q_hat").stdev())});
  }
  return csv.text();
}

void add_classif_metrics(std::map<std::string, Agg>& a, const classif::Metrics& m, double q) {
  a["coverage"].add(m.coverage);
  a["size"].add(m.mean_size);
  a["auroc"].add(m.auroc);
  a["ece"].add(m.ece);
  a["q_hat"].add(q);
}

void train_classif(const RunConfig& cfg, Output& out) {
  const std::uint64_t data_seed = derive_seed(cfg.seed, 0xda7a);
  const auto data = classif_data(cfg, out, cfg.n, data_seed);
  const auto sp = split_indices(data.size(), cfg.split, derive_seed(cfg.seed, 0x5b1));
  const auto train = take(data, sp.train), cal = take(data, sp.cal), test = take(data, sp.test);
  classif::TrainConfig tc;
  tc.alpha = cfg.alpha;
  if (cfg.epochs > 0) tc.epochs = cfg.epochs;
  if (cfg.batch_size > 0) tc.batch_size = cfg.batch_size;
  tc.lr = cfg.lr;
  tc.smoothed_calibration = cfg.smoothed_calibration;
  tc.seed = derive_seed(cfg.seed, 0x7a1);
  out.seeds["data"] = cfg.input.empty() ? ordered_json(data_seed) : ordered_json(nullptr);
  out.seeds["split"] = derive_seed(cfg.seed, 0x5b1);
  out.seeds["training"] = tc.seed;
  const auto trained = classif::train_classifier_scorer(train, cal, tc);

  nn::save_checkpoint(trained.net, out.path("classif_model.ckpt").string());
  out.artifact("classif_model.ckpt");
  conformal::CalibrationRecord rec;
  rec.task = "classif";
  rec.alpha = cfg.alpha;
  rec.q_hat = trained.q_hat;
  rec.values["threshold"] = trained.threshold;
  rec.values["num_classes"] = static_cast<double>(trained.num_classes);
  rec.values["hidden1"] = static_cast<double>(trained.arch.h1);
  rec.values["hidden2"] = static_cast<double>(trained.arch.h2);
  rec.stats["features"] = trained.stats;
  rec.notes["calibration"] = cfg.smoothed_calibration ? "smoothed" : "exact";
  conformal::save_calibration(rec, out.path("classif_calibration.json").string());
  out.artifact("classif_calibration.json");
  out.extra["architecture"] = {classif::kFeatureDim, trained.arch.h1, trained.arch.h2, 1};
  out.extra["splits"] = {{"train", train.size()}, {"cal", cal.size()}, {"test", test.size()}};
  out.manifest();

  CsvWriter hist({"epoch", "phase", "lr", "loss", "margin", "coverage_term", "size_term", "coverage", "threshold",
                  "w_c", "w_s"});
  for (const auto& r : trained.history)
    hist.row({std::to_string(r.epoch), std::to_string(r.phase), num(r.lr), num(r.loss), num(r.margin),
              num(r.coverage_term), num(r.size_term), num(r.coverage), num(r.threshold), num(r.w_c), num(r.w_s)});
  out.write("classif_history.csv", hist.text());

  if (!test.empty()) {
    ClassifModel model{trained.net, trained.stats, trained.num_classes};
    std::map<std::string, std::map<std::string, Agg>> agg;
    for (const auto& m : kClassifMethods) {
      const double q = m == "learned" ? trained.q_hat
                                      : calibrate_scores(cfg, classif_scores(m, &model, cal, cfg.workers), cal);
      const auto metrics = classif::classif_metrics(classif_scores(m, &model, test, cfg.workers), test, q);
      add_classif_metrics(agg[m], metrics, q);
    }
    out.write("classif_train_metrics.csv", classif_metric_rows(kClassifMethods, agg));
  }
}

void eval_classif(const RunConfig& cfg, Output& out) {
  const auto methods = methods_or(cfg, kClassifMethods);
  std::optional<ClassifModel> model;
  if (wants(methods, "learned")) {
    model = load_classif(cfg);
    out.inputs["classif_model.ckpt"] = file_hash(require_artifact(cfg, "classif_model.ckpt", "learned"));
  }
  std::vector<classif::Example> pool;
  if (!cfg.input.empty()) pool = classif_data(cfg, out, 0, 0);
  const auto sizes = eval_sizes(cfg, cfg.input.empty() ? cfg.eval_cal + cfg.eval_test : pool.size());
  std::map<std::string, std::map<std::string, Agg>> agg;
  ordered_json rep_seeds = ordered_json::array();
  for (std::size_t rep = 0; rep < cfg.seeds; ++rep) {
    const std::uint64_t s = eval_seed(cfg, rep);
    rep_seeds.push_back(s);
    std::vector<classif::Example> cal, test;
    if (cfg.input.empty()) {
      const auto d = classif::generate({model ? model->num_classes : cfg.num_classes, sizes.cal + sizes.test, s});
      cal.assign(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(sizes.cal));
      test.assign(d.begin() + static_cast<std::ptrdiff_t>(sizes.cal), d.end());
    } else {
      const auto sp = split_indices(pool.size(), {0.0, static_cast<double>(sizes.cal) / static_cast<double>(pool.size()),
                                                  1.0 - static_cast<double>(sizes.cal) / static_cast<double>(pool.size())}, s);
      cal = take(pool, sp.cal);
      auto t = take(pool, sp.test);
      t.resize(std::min(t.size(), sizes.test));
      test = std::move(t);
    }
    for (const auto& m : methods) {
      const ClassifModel* mp = model ? &*model : nullptr;
      const double q = calibrate_scores(cfg, classif_scores(m, mp, cal, cfg.workers), cal);
      add_classif_metrics(agg[m], classif::classif_metrics(classif_scores(m, mp, test, cfg.workers), test, q), q);
    }
  }
  out.seeds["repetitions"] = rep_seeds;
  out.extra["eval_sizes"] = {{"cal", sizes.cal}, {"test", sizes.test}};
  out.manifest();
  out.write("classif_eval.csv", classif_metric_rows(methods, agg));
}

// ---------------------------------------------------------------------------
// Detection

struct DetectModel {
  nn::Mlp net;
  conformal::RunningStats stats;
};

DetectModel load_detect(const RunConfig& cfg) {
  DetectModel m;
  m.net = nn::load_checkpoint(require_artifact(cfg, "detect_model.ckpt", "learned"));
  const auto rec = conformal::load_calibration(require_artifact(cfg, "detect_calibration.json", "learned"));
  if (rec.task != "detect") throw DataError("detect_calibration.json is for task '" + rec.task + "'");
  const auto st = rec.stats.find("features");
  if (st == rec.stats.end()) throw DataError("detect calibration is incomplete");
  m.stats = st->second;
  if (m.net.input_dim() != detect::kFeatureDim || m.stats.dim() != detect::kFeatureDim)
    throw DataError("detect checkpoint has the wrong input width");
  return m;
}

std::vector<detect::DetRecord> detect_data(const RunConfig& cfg, Output& out, std::size_t n, std::uint64_t seed) {
  if (!cfg.input.empty()) {
    out.input(cfg.input);
    return detect::read_jsonl(cfg.input);
  }
  detect::SynthConfig sc;
  sc.n = n;
  sc.seed = seed;
  sc.noise_scale = cfg.noise_scale;
  sc.heteroscedastic = cfg.heteroscedastic;
  return detect::generate(sc);
}

const std::vector<std::string> kDetectMethods = {"learned", "standard"};

void add_detect_metrics(std::map<std::string, Agg>& a, const detect::StratifiedMetrics& m, double q) {
  a["coverage"].add(m.overall.coverage);
  a["mpiw"].add(m.overall.mpiw);
  for (std::size_t c = 0; c < 3; ++c) {
    const std::string name = detect::category_name(static_cast<detect::SizeCategory>(c));
    a[name + "_coverage"].add(m.by_category[c].n ? m.by_category[c].coverage
                                                 : std::numeric_limits<double>::quiet_NaN());
    a[name + "_mpiw"].add(m.by_category[c].n ? m.by_category[c].mpiw : std::numeric_limits<double>::quiet_NaN());
  }
  a["q"].add(q);
}

std::string detect_metric_rows(const std::vector<std::string>& methods,
                               const std::map<std::string, std::map<std::string, Agg>>& agg) {
  const std::vector<std::string> cols = {"coverage", "mpiw", "small_coverage", "small_mpiw", "medium_coverage",
                                         "medium_mpiw", "large_coverage", "large_mpiw", "q"};
  std::vector<std::string> header = {"method", "seeds"};
  for (const auto& c : cols) {
    header.push_back(c + "_mean");
    header.push_back(c + "_std");
  }
  CsvWriter csv(header);
  for (const auto& m : methods) {
    const auto& a = agg.at(m);
    csv.cell(m).cell(std::to_string(a.at("coverage").v.size()));
    for (const auto& c : cols) csv.cell(num(a.at(c).mean())).cell(num(a.at(c).stdev()));
    csv.end_row();
  }
  return csv.text();
}

std::pair<double, detect::StratifiedMetrics> detect_eval_once(const std::string& method, const DetectModel* model,
                                                              std::span<const detect::DetRecord> cal,
                                                              std::span<const detect::DetRecord> test,
                                                              double alpha, unsigned workers) {
  if (method == "learned") {
    const Matrix wc = detect::predict_widths(model->net, model->stats, cal, workers);
    const double tau = detect::calibrate_tau(cal, wc, alpha);
    const Matrix wt = detect::predict_widths(model->net, model->stats, test, workers);
    return {tau, detect::size_stratified_metrics(test, wt, tau)};
  }
  const double margin = detect::standard_cp_margin(cal, alpha);
  return {margin, detect::standard_cp_metrics(test, margin)};
}

void train_detect(const RunConfig& cfg, Output& out) {
  const std::uint64_t data_seed = derive_seed(cfg.seed, 0xda7a);
  const auto data = detect_data(cfg, out, cfg.n, data_seed);
  const auto sp = split_indices(data.size(), cfg.split, derive_seed(cfg.seed, 0x5b1));
  const auto train = take(data, sp.train), cal = take(data, sp.cal), test = take(data, sp.test);
  detect::TrainConfig tc;
  tc.alpha = cfg.alpha;
  if (cfg.epochs > 0) tc.epochs = cfg.epochs;
  if (cfg.batch_size > 0) tc.batch_size = cfg.batch_size;
  tc.lr = cfg.lr;
  tc.seed = derive_seed(cfg.seed, 0x7a1);
  out.seeds["data"] = cfg.input.empty() ? ordered_json(data_seed) : ordered_json(nullptr);
  out.seeds["split"] = derive_seed(cfg.seed, 0x5b1);
  out.seeds["training"] = tc.seed;
  const auto trained = detect::train_width_net(train, cal, tc);

  nn::save_checkpoint(trained.net, out.path("detect_model.ckpt").string());
  out.artifact("detect_model.ckpt");
  conformal::CalibrationRecord rec;
  rec.task = "detect";
  rec.alpha = cfg.alpha;
  rec.q_hat = trained.tau;
  rec.values["tau"] = trained.tau;
  rec.values["threshold"] = trained.threshold;
  rec.stats["features"] = trained.stats;
  conformal::save_calibration(rec, out.path("detect_calibration.json").string());
  out.artifact("detect_calibration.json");
  out.extra["architecture"] = {detect::kFeatureDim, 256, 128, 64, 4};
  out.extra["splits"] = {{"train", train.size()}, {"cal", cal.size()}, {"test", test.size()}};
  out.manifest();

  CsvWriter hist({"epoch", "lr", "loss", "coverage_term", "mpiw_term", "coverage", "threshold", "small_coverage",
                  "medium_coverage", "large_coverage", "w_c", "w_s"});
  for (const auto& r : trained.history)
    hist.row({std::to_string(r.epoch), num(r.lr), num(r.loss), num(r.coverage_term), num(r.mpiw_term),
              num(r.coverage), num(r.threshold), num(r.category_coverage[0]), num(r.category_coverage[1]),
              num(r.category_coverage[2]), num(r.w_c), num(r.w_s)});
  out.write("detect_history.csv", hist.text());

  if (!test.empty()) {
    DetectModel model{trained.net, trained.stats};
    std::map<std::string, std::map<std::string, Agg>> agg;
    for (const auto& m : kDetectMethods) {
      if (m == "learned") {
        const Matrix wt = detect::predict_widths(model.net, model.stats, test, cfg.workers);
        add_detect_metrics(agg[m], detect::size_stratified_metrics(test, wt, trained.tau), trained.tau);
      } else {
        const auto [q, metrics] = detect_eval_once(m, nullptr, cal, test, cfg.alpha, cfg.workers);
        add_detect_metrics(agg[m], metrics, q);
      }
    }
    out.write("detect_train_metrics.csv", detect_metric_rows(kDetectMethods, agg));
  }
}

void eval_detect(const RunConfig& cfg, Output& out) {
  const auto methods = methods_or(cfg, kDetectMethods);
  std::optional<DetectModel> model;
  if (wants(methods, "learned")) {
    model = load_detect(cfg);
    out.inputs["detect_model.ckpt"] = file_hash(require_artifact(cfg, "detect_model.ckpt", "learned"));
  }
  std::vector<detect::DetRecord> pool;
  if (!cfg.input.empty()) pool = detect_data(cfg, out, 0, 0);
  const auto sizes = eval_sizes(cfg, cfg.input.empty() ? cfg.eval_cal + cfg.eval_test : pool.size());
  std::map<std::string, std::map<std::string, Agg>> agg;
  ordered_json rep_seeds = ordered_json::array();
  for (std::size_t rep = 0; rep < cfg.seeds; ++rep) {
    const std::uint64_t s = eval_seed(cfg, rep);
    rep_seeds.push_back(s);
    std::vector<detect::DetRecord> cal, test;
    if (cfg.input.empty()) {
      const auto d = detect_data(cfg, out, sizes.cal + sizes.test, s);
      cal.assign(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(sizes.cal));
      test.assign(d.begin() + static_cast<std::ptrdiff_t>(sizes.cal), d.end());
    } else {
      const double fc = static_cast<double>(sizes.cal) / static_cast<double>(pool.size());
      const auto sp = split_indices(pool.size(), {0.0, fc, 1.0 - fc}, s);
      cal = take(pool, sp.cal);
      test = take(pool, sp.test);
      test.resize(std::min(test.size(), sizes.test));
    }
    for (const auto& m : methods) {
      const auto [q, metrics] = detect_eval_once(m, model ? &*model : nullptr, cal, test, cfg.alpha, cfg.workers);
      add_detect_metrics(agg[m], metrics, q);
    }
  }
  out.seeds["repetitions"] = rep_seeds;
  out.extra["eval_sizes"] = {{"cal", sizes.cal}, {"test", sizes.test}};
  out.manifest();
  out.write("detect_eval.csv", detect_metric_rows(methods, agg));
}

// ---------------------------------------------------------------------------
// Planning

plan::CollectConfig collect_config(const RunConfig& cfg, std::uint64_t seed) {
  plan::CollectConfig cc;
  cc.trials = cfg.collect_trials;
  cc.seed = seed;
  cc.noise_params = cfg.noise;
  cc.workers = cfg.workers;
  return cc;
}

std::uint64_t plan_train_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, 0x7a); }
std::uint64_t plan_cal_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, 0xca); }

void train_plan(const RunConfig& cfg, Output& out) {
  if (cfg.collect_trials == 0) throw ConfigError("collect_trials must be positive for plan training");
  const auto train = plan::collect_paths(collect_config(cfg, plan_train_seed(cfg)));
  const auto cal = plan::collect_paths(collect_config(cfg, plan_cal_seed(cfg)));
  plan::TrainConfig tc;
  tc.alpha = cfg.alpha;
  if (cfg.epochs > 0) tc.epochs = cfg.epochs;
  if (cfg.batch_size > 0) tc.batch_size = cfg.batch_size;
  tc.lr = cfg.lr;
  tc.seed = derive_seed(cfg.seed, 0x7a1);
  out.seeds["train_paths"] = plan_train_seed(cfg);
  out.seeds["cal_paths"] = plan_cal_seed(cfg);
  out.seeds["training"] = tc.seed;
  const auto trained = plan::train_margin_net(train, cal, tc);
  const double standard = plan::standard_margin(cal, cfg.alpha);

  nn::save_checkpoint(trained.model.net, out.path("plan_model.ckpt").string());
  out.artifact("plan_model.ckpt");
  conformal::save_calibration(plan::to_calibration(trained.model, standard),
                              out.path("plan_calibration.json").string());
  out.artifact("plan_calibration.json");
  std::size_t wp_train = 0, wp_cal = 0;
  for (const auto& s : train) wp_train += s.features.size();
  for (const auto& s : cal) wp_cal += s.features.size();
  out.extra["architecture"] = {plan::kFeatureDim, 128, 64, 32, 1};
  out.extra["paths"] = {{"train", train.size()}, {"cal", cal.size()}, {"train_waypoints", wp_train},
                        {"cal_waypoints", wp_cal}};
  out.manifest();

  CsvWriter hist({"epoch", "lr", "loss", "safety", "efficiency", "smoothness", "coverage_term", "coverage",
                  "threshold", "w_c", "w_s"});
  for (const auto& r : trained.history)
    hist.row({std::to_string(r.epoch), num(r.lr), num(r.loss), num(r.safety), num(r.efficiency),
              num(r.smoothness), num(r.coverage_term), num(r.coverage), num(r.threshold), num(r.w_c),
              num(r.w_s)});
  out.write("plan_history.csv", hist.text());

  std::size_t std_hits = 0, total = 0;
  for (const auto& s : cal)
    for (double d : s.required) {
      std_hits += standard >= d ? 1 : 0;
      ++total;
    }
  CsvWriter m({"method", "offset", "cal_coverage"});
  m.row({"standard", num(standard), num(total ? static_cast<double>(std_hits) / static_cast<double>(total) : 0.0)});
  m.row({"learnable", num(trained.model.q_star), num(plan::margin_coverage(trained.model, cal))});
  out.write("plan_train_metrics.csv", m.text());
}

void simulate(const RunConfig& cfg, Output& out) {
  std::vector<bench::Method> methods;
  if (cfg.methods.empty()) {
    methods.assign(bench::kMethods.begin(), bench::kMethods.end());
  } else {
    for (const auto& m : cfg.methods) methods.push_back(bench::parse_method(m));
  }
  const bool need_std = std::count(methods.begin(), methods.end(), bench::Method::standard) > 0;
  const bool need_learn = std::count(methods.begin(), methods.end(), bench::Method::learnable) > 0;

  bench::MonteCarloConfig mc;
  mc.methods = methods;
  mc.presets = cfg.presets;
  mc.noises = cfg.noises;
  mc.trials = cfg.trials;
  mc.seed = derive_seed(cfg.seed, 0xb3c);
  mc.noise_params = cfg.noise;
  mc.workers = cfg.workers;
  out.seeds["benchmark"] = mc.seed;

  plan::MarginModel model;
  const fs::path cal_path = fs::path(cfg.model_dir()) / "plan_calibration.json";
  if (need_learn) {
    model.net = nn::load_checkpoint(require_artifact(cfg, "plan_model.ckpt", "learnable"));
    if (model.net.input_dim() != plan::kFeatureDim) throw DataError("plan checkpoint has the wrong input width");
    plan::apply_calibration(conformal::load_calibration(require_artifact(cfg, "plan_calibration.json", "learnable")),
                            model);
    for (sim::Preset p : cfg.presets)
      if (!model.stats.count(std::string(sim::preset_name(p))))
        throw ConfigError("plan checkpoint has no statistics for preset " + std::string(sim::preset_name(p)));
    mc.learnable = &model;
    out.inputs["plan_model.ckpt"] = file_hash((fs::path(cfg.model_dir()) / "plan_model.ckpt").string());
  }
  if (need_std) {
    if (fs::exists(cal_path)) {
      const auto rec = conformal::load_calibration(cal_path.string());
      const auto it = rec.values.find("standard_margin");
      if (rec.task != "plan" || it == rec.values.end()) throw DataError("plan calibration lacks standard_margin");
      mc.standard_margin = it->second;
      out.inputs["plan_calibration.json"] = file_hash(cal_path.string());
    } else {
      // Standard CP needs calibration only: label fresh margin-free plans.
      if (cfg.collect_trials == 0) throw ConfigError("collect_trials must be positive to calibrate the standard margin");
      const auto cal = plan::collect_paths(collect_config(cfg, plan_cal_seed(cfg)));
      mc.standard_margin = plan::standard_margin(cal, cfg.alpha);
      out.seeds["cal_paths"] = plan_cal_seed(cfg);
    }
    out.extra["standard_margin"] = mc.standard_margin;
  }
  const auto result = bench::monte_carlo(mc);
  double plan_seconds = 0.0;
  for (const auto& t : result.trials) plan_seconds += t.plan_seconds;
  out.extra["planning_seconds_total"] = plan_seconds;
  out.manifest();
  out.write("simulate.csv", bench::cells_csv(result.cells));
  out.write("simulate_trials.csv", bench::trials_csv(result.trials));
}

// ---------------------------------------------------------------------------
// Synthesis and reports

ordered_json obstacle_json(const geom::Obstacle& o) {
  ordered_json j;
  j["shape"] = o.shape == geom::Shape::circle ? "circle" : "rect";
  j["center"] = {o.center.x, o.center.y};
  if (o.shape == geom::Shape::circle)
    j["radius"] = o.radius;
  else
    j["half"] = {o.half.x, o.half.y};
  j["glass"] = o.glass;
  return j;
}

void synth(const RunConfig& cfg, Output& out) {
  const std::uint64_t s = derive_seed(cfg.seed, 0xda7a);
  out.seeds["data"] = s;
  std::string name, text;
  if (cfg.task == "classif") {
    name = "classif.jsonl";
    text = classif::to_jsonl(classif::generate({cfg.num_classes, cfg.n, s}));
  } else if (cfg.task == "detect") {
    name = "detect.jsonl";
    detect::SynthConfig sc;
    sc.n = cfg.n;
    sc.seed = s;
    sc.noise_scale = cfg.noise_scale;
    sc.heteroscedastic = cfg.heteroscedastic;
    text = detect::to_jsonl(detect::generate(sc));
  } else {
    // One world per (preset, trial) with its perceived obstacle sets.
    name = "environments.jsonl";
    for (sim::Preset p : cfg.presets)
      for (std::size_t t = 0; t < cfg.trials; ++t) {
        const std::uint64_t env_seed = derive_seed(derive_seed(s, static_cast<std::uint64_t>(p)), t);
        const auto env = sim::generate_environment(p, env_seed);
        ordered_json j;
        j["preset"] = std::string(sim::preset_name(p));
        j["trial"] = t;
        j["seed"] = env_seed;
        j["bounds"] = {env.bounds.lo.x, env.bounds.lo.y, env.bounds.hi.x, env.bounds.hi.y};
        j["start"] = {env.start.x, env.start.y};
        j["goal"] = {env.goal.x, env.goal.y};
        j["obstacles"] = ordered_json::array();
        for (const auto& o : env.obstacles) j["obstacles"].push_back(obstacle_json(o));
        ordered_json perceived = ordered_json::object();
        for (sim::NoiseKind k : cfg.noises) {
          const auto map = sim::perceive(env, k, cfg.noise, derive_seed(env_seed, 0x100 + static_cast<std::uint64_t>(k)));
          perceived[std::string(sim::noise_name(k))] = {{"kept", map.source},
                                                        {"offset", {map.offset.x, map.offset.y}}};
        }
        j["perceived"] = perceived;
        text += j.dump() + "\n";
      }
  }
  out.extra["records_file"] = name;
  out.manifest();
  out.write(name, text);
}

// Rows of a CSV file as string cells.
std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  std::stringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

std::string markdown_table(const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return "(empty)\n";
  std::string s = "|";
  for (const auto& h : rows[0]) s += " " + h + " |";
  s += "\n|";
  for (std::size_t i = 0; i < rows[0].size(); ++i) s += " --- |";
  s += "\n";
  for (std::size_t r = 1; r < rows.size(); ++r) {
    s += "|";
    for (const auto& c : rows[r]) s += " " + c + " |";
    s += "\n";
  }
  return s;
}

void report(const RunConfig& cfg, Output& out) {
  static const std::vector<std::pair<std::string, std::string>> sources = {
      {"classif_eval.csv", "Classification prediction sets"},
      {"classif_train_metrics.csv", "Classification, held-out split of the training data"},
      {"detect_eval.csv", "Detection intervals"},
      {"detect_train_metrics.csv", "Detection, held-out split of the training data"},
      {"plan_train_metrics.csv", "Planning margin calibration"},
      {"simulate.csv", "Planning benchmark"},
  };
  std::string md = "# lcp report\n";
  std::size_t found = 0;
  for (const auto& [file, title] : sources) {
    const fs::path p = fs::path(cfg.out) / file;
    if (!fs::exists(p)) continue;
    ++found;
    out.input(p.string());
    md += "\n## " + title + "\n\n" + markdown_table(read_csv(p.string()));
  }
  if (found == 0) throw MissingArtifactError("no result CSVs in " + cfg.out + " to report on");
  md += "\n## Metric definitions\n\n"
        "- AUROC: rank statistic of the negated score separating true-label from false-label pairs.\n"
        "- ECE: 10 equal-width bins of the proxy confidence 1 - score(top class) against top-1 accuracy. "
        "The proxy is only meaningful for probability-scale scores (1p, aps).\n"
        "- Planning inflation: total path length over total naive path length minus one, over trials where "
        "both planned; T is traversal time in seconds.\n";
  out.manifest();
  out.write("report.md", md);
}

}  // namespace

std::vector<std::string> run_command(std::string_view command, const RunConfig& cfg) {
  validate(cfg);
  Output out(cfg, command);
  out.ensure_dir();
  if (command == "synth") {
    synth(cfg, out);
  } else if (command == "train") {
    if (cfg.task == "classif") train_classif(cfg, out);
    else if (cfg.task == "detect") train_detect(cfg, out);
    else train_plan(cfg, out);
  } else if (command == "eval") {
    if (cfg.task == "classif") eval_classif(cfg, out);
    else if (cfg.task == "detect") eval_detect(cfg, out);
    else simulate(cfg, out);
  } else if (command == "simulate") {
    simulate(cfg, out);
  } else if (command == "report") {
    report(cfg, out);
  } else {
    throw ConfigError("unknown command '" + std::string(command) + "' (expected synth, train, eval, simulate or report)");
  }
  return out.written;
}

}  // namespace lcp::cli
