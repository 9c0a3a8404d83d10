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

// Acceptance run: every criterion prints one PASS or FAIL line with the
// measured values. The classification, detection and planning criteria run
// through the batch commands exactly as a user would, once with one worker
// and once with four; the second pass also checks byte-identical CSVs.
//
// Usage: acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lcp/commands.hpp"
#include "lcp/conformal.hpp"
#include "lcp/detect.hpp"
#include "lcp/classif.hpp"
#include "lcp/geometry.hpp"
#include "lcp/lcp.h"
#include "lcp/nn.hpp"
#include "lcp/plan.hpp"
#include "lcp/random.hpp"
#include "lcp/sim.hpp"

namespace fs = std::filesystem;
using namespace lcp;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void verdict(int id, bool ok, const std::string& name, const std::string& detail, double seconds) {
  std::printf("[%s] criterion %2d  %-34s %s (%.1f s)\n", ok ? "PASS" : "FAIL", id, name.c_str(),
              detail.c_str(), seconds);
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Header-keyed rows of a CSV without quoting.
struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  explicit Csv(const fs::path& p) {
    std::stringstream in(slurp(p));
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::stringstream ls(line);
      std::string c;
      while (std::getline(ls, c, ',')) cells.push_back(c);
      if (first) header = cells;
      else rows.push_back(cells);
      first = false;
    }
  }
  std::size_t col(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
  const std::vector<std::string>& row(const std::string& key) const {
    for (const auto& r : rows)
      if (!r.empty() && r[0] == key) return r;
    throw std::runtime_error("missing row " + key);
  }
  double num(const std::string& key, const std::string& column) const {
    const auto& v = row(key)[col(column)];
    return v == "n/a" ? std::nan("") : std::stod(v);
  }
};

// ---------------------------------------------------------------------------
// Criterion 1: gradients of random small nets against central differences.

double weighted_sum(const Matrix& out, const Matrix& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out.values()[i] * w.values()[i];
  return s;
}

void gradient_check() {
  const auto t0 = Clock::now();
  Rng rng(2026);
  double worst = 0.0;
  std::size_t checked = 0;
  for (int k = 0; k < 50; ++k) {
    nn::MlpSpec spec;
    spec.input_dim = 1 + uniform_index(rng, 8);
    const std::size_t depth = 1 + uniform_index(rng, 2);  // hidden layers; plus the output layer
    for (std::size_t d = 0; d < depth; ++d) spec.hidden.push_back(1 + uniform_index(rng, 16));
    spec.output_dim = 1 + uniform_index(rng, 4);
    spec.activation = static_cast<nn::Activation>(uniform_index(rng, 3));
    spec.batch_norm = uniform01(rng) < 0.5;
    spec.dropout = uniform01(rng) < 0.5 ? 0.2 : 0.0;
    nn::Mlp net = nn::Mlp::build(spec, derive_seed(7, static_cast<std::uint64_t>(k)));
    const std::size_t batch = 2 + uniform_index(rng, 6);
    Matrix x(batch, spec.input_dim), w(batch, spec.output_dim);
    for (double& v : x.values()) v = normal(rng);
    for (double& v : w.values()) v = normal(rng);

    net.zero_grad();
    (void)net.forward(x, nn::Mode::training);
    net.freeze_dropout_masks(true);
    (void)net.backward(w);
    const double h = 1e-4;
    for (auto& p : net.parameters()) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double orig = p.value[i];
        p.value[i] = orig + h;
        const double up = weighted_sum(net.forward(x, nn::Mode::training), w);
        p.value[i] = orig - h;
        const double down = weighted_sum(net.forward(x, nn::Mode::training), w);
        p.value[i] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = p.grad[i];
        const double rel = std::abs(numeric - analytic) / std::max(std::abs(numeric) + std::abs(analytic), 1e-6);
        worst = std::max(worst, rel);
        ++checked;
      }
    }
  }
  const double secs = since(t0);
  verdict(1, worst < 1e-4 && secs < 30.0, "gradient correctness",
          "worst relative error " + fmt("%.2e", worst) + " over " + std::to_string(checked) + " parameters", secs);
}

// ---------------------------------------------------------------------------
// Criterion 2: quantile against sort-and-index with exact integer ranks.

void quantile_oracle() {
  const auto t0 = Clock::now();
  Rng rng(5);
  std::size_t mismatches = 0, infinite = 0, cases = 0;
  for (int a : {1, 5, 10, 25, 50}) {
    for (long n = 1; n <= 100; ++n) {
      for (int rep = 0; rep < 5; ++rep) {
        std::vector<double> s(static_cast<std::size_t>(n));
        for (double& v : s) v = rep % 2 ? std::round(10.0 * uniform01(rng)) : normal(rng);
        const double got = conformal::conformal_quantile(s, a / 100.0).q_hat;
        std::sort(s.begin(), s.end());
        const long rank = ((n + 1) * (100 - a) + 99) / 100;
        const bool inf = rank > n;
        infinite += inf ? 1 : 0;
        const bool ok = inf ? std::isinf(got) && got > 0 : got == s[static_cast<std::size_t>(rank - 1)];
        mismatches += ok ? 0 : 1;
        ++cases;
      }
    }
  }
  const double secs = since(t0);
  verdict(2, mismatches == 0 && infinite > 0 && secs < 5.0, "quantile oracle equivalence",
          std::to_string(cases) + " cases, " + std::to_string(mismatches) + " mismatches, " +
              std::to_string(infinite) + " overflow cases",
          secs);
}

// ---------------------------------------------------------------------------
// Criterion 6: loss formulas against hand-derived values.

void exact_losses() {
  const auto t0 = Clock::now();
  std::vector<std::pair<std::string, double>> errs;
  auto check = [&](const std::string& what, double got, double want) { errs.emplace_back(what, std::abs(got - want)); };
  check("safety, safe side", plan::safety_loss(0.6, 0.5), 0.0025);
  check("safety, unsafe side", plan::safety_loss(0.4, 0.5), 0.01);
  check("safety, exact", plan::safety_loss(0.3, 0.3), 0.0);
  {
    const std::vector<double> t{0.3, 0.5};
    const auto l = plan::path_loss(t, t, 0.9, 0.1);
    check("path smoothness", l.smoothness, 0.008);
    check("path efficiency", l.efficiency, 0.03);
    const std::vector<double> flat{0.3, 0.3};
    check("path, coverage only", plan::path_loss(flat, flat, 0.85, 0.1).total, 0.0025);
  }
  const detect::Widths w{10, 10, 10, 10};
  check("interval width loss", detect::mpiw_loss(w, 1.0, 40, 40), 0.5);
  check("interval width", detect::mpiw(w, 1.0), 20.0);
  check("interval width loss, zero scale", detect::mpiw_loss(w, 0.0, 40, 40), 0.0);
  check("coverage penalty, dead zone", detect::coverage_penalty(0.89), 0.0);
  check("coverage penalty, above", detect::coverage_penalty(0.91), 0.002);
  check("coverage penalty, below", detect::coverage_penalty(0.87), 0.004);
  check("margin loss", classif::margin_loss(0.2, 0.9), 0.1);
  check("margin loss, satisfied", classif::margin_loss(0.0, 1.0), 0.0);
  check("margin loss, zero gap", classif::margin_loss(0.5, 0.5), 0.8);
  {
    const std::vector<std::size_t> a{2, 3}, b{1, 1}, c{0, 2};
    check("size loss", classif::size_loss(a, 10, 1.0), 0.25);
    check("size loss, singletons", classif::size_loss(b, 10, 1.0), 0.1);
    check("size loss, empty penalty", classif::size_loss(c, 10, 1.0), 0.6);
  }
  {
    conformal::EmaThreshold e(1.0);
    e.update(0.5);
    check("threshold average", e.tau(), 0.975);
    conformal::EmaThreshold f(0.4);
    f.update(0.4);
    check("threshold average, fixed point", f.tau(), 0.4);
  }
  {
    std::vector<double> s(100);
    for (std::size_t i = 0; i < 100; ++i) s[i] = static_cast<double>(i + 1);
    check("smoothed quantile", conformal::smoothed_quantile(s, 0.1).q_hat, 612.6 / 6.8);
    const std::vector<double> constant(20, 3.25);
    check("smoothed quantile, constant", conformal::smoothed_quantile(constant, 0.1).q_hat, 3.25);
  }
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [n, e] : errs)
    if (e >= worst) {
      worst = e;
      worst_name = n;
    }
  const double secs = since(t0);
  verdict(6, worst <= 1e-9 && secs < 5.0, "exact loss formulas",
          std::to_string(errs.size()) + " values, worst error " + fmt("%.1e", worst) + " (" + worst_name + ")", secs);
}

// ---------------------------------------------------------------------------
// Command pipeline used by criteria 3-5, 7-10.

struct Pass {
  fs::path dir;
  double classif_seconds = 0, detect_seconds = 0, plan_seconds = 0;
};

cli::RunConfig base_config(const fs::path& dir, unsigned workers) {
  cli::RunConfig cfg;
  cfg.out = dir.string();
  cfg.seed = 1;
  cfg.workers = workers;
  return cfg;
}

Pass run_pass(const fs::path& dir, unsigned workers) {
  Pass p{dir};
  fs::remove_all(dir);
  {
    const auto t0 = Clock::now();
    auto cfg = base_config(dir / "classif", workers);
    cfg.task = "classif";
    cfg.num_classes = 100;
    cfg.n = 10000;
    cfg.split = {0.5, 0.1, 0.4};
    cli::run_command("train", cfg);
    cfg.seeds = 20;
    cfg.eval_cal = 1000;
    cfg.eval_test = 10000;
    cli::run_command("eval", cfg);
    p.classif_seconds = since(t0);
  }
  {
    const auto t0 = Clock::now();
    auto cfg = base_config(dir / "detect", workers);
    cfg.task = "detect";
    cfg.n = 25000;
    cfg.split = {0.8, 0.2, 0.0};
    cli::run_command("train", cfg);
    cfg.seeds = 5;
    cfg.eval_cal = 5000;
    cfg.eval_test = 20000;
    cli::run_command("eval", cfg);
    p.detect_seconds = since(t0);
  }
  {
    const auto t0 = Clock::now();
    auto cfg = base_config(dir / "plan", workers);
    cfg.task = "plan";
    cfg.collect_trials = 30;
    cfg.epochs = 30;
    cli::run_command("train", cfg);
    cfg.presets = {sim::Preset::corridor};
    cfg.noises = {sim::NoiseKind::combined};
    cfg.trials = 200;
    cli::run_command("simulate", cfg);
    p.plan_seconds = since(t0);
  }
  return p;
}

void classification(const Pass& p) {
  const Csv csv(p.dir / "classif" / "classif_eval.csv");
  const double cl = csv.num("learned", "coverage_mean"), c1 = csv.num("1p", "coverage_mean"),
               ca = csv.num("aps", "coverage_mean");
  auto in = [](double c) { return c >= 0.885 && c <= 0.925; };
  verdict(3, in(cl) && in(c1) && in(ca) && p.classif_seconds < 600, "coverage guarantee (classification)",
          "mean coverage over 20 seeds: learned " + fmt("%.4f", cl) + ", 1-p " + fmt("%.4f", c1) + ", aps " +
              fmt("%.4f", ca),
          p.classif_seconds);
  const double sl = csv.num("learned", "size_mean"), s1 = csv.num("1p", "size_mean");
  const double ratio = sl / s1;
  verdict(4, ratio <= 0.96 && std::abs(cl - c1) <= 0.02 && p.classif_seconds < 600, "adaptivity (classification)",
          "set size learned " + fmt("%.3f", sl) + " vs 1-p " + fmt("%.3f", s1) + " (ratio " + fmt("%.3f", ratio) +
              "), coverage gap " + fmt("%.4f", std::abs(cl - c1)),
          p.classif_seconds);
}

void detection(const Pass& p) {
  const Csv csv(p.dir / "detect" / "detect_eval.csv");
  const double ml = csv.num("learned", "mpiw_mean"), ms = csv.num("standard", "mpiw_mean");
  const double cl = csv.num("learned", "coverage_mean"), cs = csv.num("standard", "coverage_mean");
  bool strata = true;
  std::string detail;
  for (auto c : detect::kCategories) {
    const std::string name = detect::category_name(c);
    const double cov = csv.num("learned", name + "_coverage_mean");
    strata = strata && std::abs(cov - detect::category_target(c)) <= 0.04;
    detail += ", " + name + " " + fmt("%.3f", cov) + "/" + fmt("%.2f", detect::category_target(c));
  }
  const double ratio = ml / ms;
  verdict(5, ratio <= 0.8 && cl >= 0.88 && cs >= 0.88 && strata && p.detect_seconds < 600,
          "adaptivity (detection)",
          "width learned " + fmt("%.2f", ml) + " vs standard " + fmt("%.2f", ms) + " (ratio " + fmt("%.3f", ratio) +
              "), coverage " + fmt("%.4f", cl) + "/" + fmt("%.4f", cs) + detail,
          p.detect_seconds);
}

void planning(const Pass& p) {
  const Csv csv(p.dir / "plan" / "simulate.csv");
  const double sn = csv.num("naive", "success_rate"), ss = csv.num("standard", "success_rate"),
               sl = csv.num("learnable", "success_rate");
  const double is = csv.num("standard", "inflation"), il = csv.num("learnable", "inflation");
  const bool a = ss >= sn + 0.05, b = sl >= ss - 0.02, c = std::isfinite(il) && std::isfinite(is) && il <= 0.6 * is;
  verdict(7, a && b && c && p.plan_seconds < 1800, "planning benchmark trends",
          "success naive " + fmt("%.3f", sn) + ", standard " + fmt("%.3f", ss) + ", learnable " + fmt("%.3f", sl) +
              "; inflation standard " + fmt("%.4f", is) + ", learnable " + fmt("%.4f", il) + " (ratio " +
              fmt("%.3f", il / is) + "); (a) " + (a ? "ok" : "no") + " (b) " + (b ? "ok" : "no") + " (c) " +
              (c ? "ok" : "no"),
          p.plan_seconds);

  const auto t0 = Clock::now();
  const Csv trials(p.dir / "plan" / "simulate_trials.csv");
  const std::size_t col = trials.col("min_margin");
  std::size_t violations = 0, queried = 0;
  double lowest = 1e9;
  for (const auto& r : trials.rows) {
    if (r[col] == "n/a") continue;  // no margin was ever queried
    ++queried;
    const double m = std::stod(r[col]);
    lowest = std::min(lowest, m);
    violations += m < plan::kRobotRadius ? 1 : 0;
  }
  verdict(8, violations == 0 && queried > 0, "calibration floor",
          std::to_string(queried) + " of " + std::to_string(trials.rows.size()) + " trials queried margins, lowest deployed margin " + fmt("%.4f", lowest) + ", " +
              std::to_string(violations) + " violations",
          since(t0));
}

void determinism(const Pass& a, const Pass& b, double seconds) {
  std::size_t compared = 0;
  std::vector<std::string> differing;
  for (const auto& entry : fs::recursive_directory_iterator(a.dir)) {
    if (entry.path().extension() != ".csv") continue;
    const auto rel = fs::relative(entry.path(), a.dir);
    ++compared;
    if (!fs::exists(b.dir / rel) || slurp(entry.path()) != slurp(b.dir / rel)) differing.push_back(rel.string());
  }
  std::string detail = std::to_string(compared) + " CSVs compared (workers 1 vs 4), " +
                       std::to_string(differing.size()) + " differ";
  for (const auto& d : differing) detail += " " + d;
  verdict(9, differing.empty() && compared >= 9, "determinism", detail, seconds);
}

void complexity(const Pass& p) {
  const auto t0 = Clock::now();
  const int reps = 300;
  // Classification: feature extraction and scoring of all 100 classes.
  lcp_classif_scorer* cs = nullptr;
  double classif_ms = 1e9, detect_ms = 1e9, plan_ms = 1e9;
  if (lcp_classif_scorer_open((p.dir / "classif").c_str(), &cs) == LCP_OK) {
    const auto data = classif::generate({100, static_cast<std::size_t>(reps), 77});
    std::vector<double> out(100);
    const auto s = Clock::now();
    for (const auto& ex : data) lcp_classif_scorer_score(cs, ex.probs.data(), ex.probs.size(), out.data());
    classif_ms = 1e3 * since(s) / reps;
    lcp_classif_scorer_close(cs);
  }
  lcp_detect_scorer* ds = nullptr;
  if (lcp_detect_scorer_open((p.dir / "detect").c_str(), &ds) == LCP_OK) {
    detect::SynthConfig sc;
    sc.n = reps;
    sc.seed = 78;
    const auto data = detect::generate(sc);
    double w[4];
    const auto s = Clock::now();
    for (const auto& r : data) {
      const double box[4] = {r.pred.x0, r.pred.y0, r.pred.x1, r.pred.y1};
      lcp_detect_scorer_widths(ds, r.img_w, r.img_h, box, r.conf, w);
    }
    detect_ms = 1e3 * since(s) / reps;
    lcp_detect_scorer_close(ds);
  }
  {
    plan::MarginModel model;
    model.net = nn::load_checkpoint((p.dir / "plan" / "plan_model.ckpt").string());
    plan::apply_calibration(conformal::load_calibration((p.dir / "plan" / "plan_calibration.json").string()), model);
    const auto env = sim::generate_environment(sim::Preset::corridor, 5);
    Rng rng(3);
    const auto s = Clock::now();
    double sink = 0.0;
    for (int i = 0; i < reps; ++i) {
      const geom::Vec2 q{uniform(rng, env.bounds.lo.x, env.bounds.hi.x), uniform(rng, env.bounds.lo.y, env.bounds.hi.y)};
      sink += plan::final_margin(model.predict(env.preset, plan::point_features(env, q)), model.q_star);
    }
    plan_ms = 1e3 * since(s) / reps;
    if (sink < 0.0) std::printf("unreachable\n");
  }
  std::uintmax_t largest = 0;
  std::string largest_name;
  for (const auto& e : fs::recursive_directory_iterator(p.dir))
    if (e.path().extension() == ".ckpt" && e.file_size() >= largest) {
      largest = e.file_size();
      largest_name = fs::relative(e.path(), p.dir).string();
    }
  const double worst = std::max({classif_ms, detect_ms, plan_ms});
  verdict(10, worst <= 5.0 && largest > 0 && largest <= 200 * 1024, "complexity budget",
          "per-instance inference classif " + fmt("%.3f", classif_ms) + " ms (100 classes), detect " +
              fmt("%.3f", detect_ms) + " ms, plan " + fmt("%.3f", plan_ms) + " ms; largest checkpoint " +
              largest_name + " " + std::to_string(largest) + " B",
          since(t0));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "lcp_acceptance";
  std::printf("acceptance work directory: %s\n", work.c_str());
  try {
    gradient_check();
    quantile_oracle();
    exact_losses();
    const Pass one = run_pass(work / "workers1", 1);
    classification(one);
    detection(one);
    planning(one);
    complexity(one);
    const auto t0 = Clock::now();
    const Pass four = run_pass(work / "workers4", 4);
    determinism(one, four, since(t0));
  } catch (const std::exception& e) {
    std::printf("[FAIL] acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
