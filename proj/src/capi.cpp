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

#include "lcp/lcp.h"

#include <cmath>
#include <exception>
#include <filesystem>
#include <memory>
#include <span>
#include <string>

#include "lcp/classif.hpp"
#include "lcp/commands.hpp"
#include "lcp/conformal.hpp"
#include "lcp/detect.hpp"
#include "lcp/errors.hpp"
#include "lcp/nn.hpp"
#include "lcp/plan.hpp"

struct lcp_config {
  lcp::cli::RunConfig cfg;
};

struct lcp_classif_scorer {
  lcp::nn::Mlp net;
  lcp::conformal::RunningStats stats;
  std::size_t num_classes = 0;
  double q_hat = 0.0;
};

struct lcp_detect_scorer {
  lcp::nn::Mlp net;
  lcp::conformal::RunningStats stats;
  double tau = 0.0;
};

namespace {

thread_local std::string g_last_error;

lcp_status fail(lcp_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Every entry point funnels exceptions through here; none escape.
template <typename F>
lcp_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return LCP_OK;
  } catch (const std::exception& e) {
    return fail(static_cast<lcp_status>(lcp::cli::exit_code_for(e)), e.what());
  } catch (...) {
    return fail(LCP_ERR_INTERNAL, "unknown error");
  }
}

std::string artifact(const char* dir, const char* name) {
  const auto p = std::filesystem::path(dir) / name;
  if (!std::filesystem::exists(p)) throw lcp::MissingArtifactError("missing " + p.string());
  return p.string();
}

}  // namespace

extern "C" {

const char* lcp_version(void) { return lcp::cli::kVersion.data(); }

const char* lcp_last_error(void) { return g_last_error.c_str(); }

lcp_status lcp_config_create(lcp_config** out) {
  if (!out) return fail(LCP_ERR_ARGUMENT, "null output pointer");
  return guarded([&] { *out = new lcp_config(); });
}

void lcp_config_destroy(lcp_config* cfg) { delete cfg; }

lcp_status lcp_config_load_file(lcp_config* cfg, const char* path) {
  if (!cfg || !path) return fail(LCP_ERR_ARGUMENT, "null argument");
  return guarded([&] { lcp::cli::load_config_file(cfg->cfg, path); });
}

lcp_status lcp_config_set(lcp_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return fail(LCP_ERR_ARGUMENT, "null argument");
  return guarded([&] { lcp::cli::apply_setting(cfg->cfg, key, value); });
}

lcp_status lcp_config_parse(lcp_config* cfg, const char* text, const char* origin) {
  if (!cfg || !text) return fail(LCP_ERR_ARGUMENT, "null argument");
  return guarded([&] { lcp::cli::apply_config_text(cfg->cfg, text, origin ? origin : "<text>"); });
}

lcp_status lcp_run(const lcp_config* cfg, const char* command) {
  if (!cfg || !command) return fail(LCP_ERR_ARGUMENT, "null argument");
  return guarded([&] { lcp::cli::run_command(command, cfg->cfg); });
}

lcp_status lcp_conformal_quantile(const double* scores, size_t n, double alpha, double* out) {
  if ((!scores && n > 0) || !out) return fail(LCP_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    *out = lcp::conformal::conformal_quantile(std::span<const double>(scores, n), alpha).q_hat;
  });
}

lcp_status lcp_final_margin(double tau, double offset, double* out) {
  if (!out) return fail(LCP_ERR_ARGUMENT, "null output pointer");
  if (!std::isfinite(tau) || !std::isfinite(offset)) return fail(LCP_ERR_ARGUMENT, "non-finite input");
  return guarded([&] { *out = lcp::plan::final_margin(tau, offset); });
}

double lcp_robot_radius(void) { return lcp::plan::kRobotRadius; }

lcp_status lcp_classif_scorer_open(const char* model_dir, lcp_classif_scorer** out) {
  if (!model_dir || !out) return fail(LCP_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    auto s = std::make_unique<lcp_classif_scorer>();
    s->net = lcp::nn::load_checkpoint(artifact(model_dir, "classif_model.ckpt"));
    const auto rec = lcp::conformal::load_calibration(artifact(model_dir, "classif_calibration.json"));
    const auto st = rec.stats.find("features");
    const auto k = rec.values.find("num_classes");
    if (rec.task != "classif" || st == rec.stats.end() || k == rec.values.end())
      throw lcp::DataError("classification calibration record is incomplete");
    s->stats = st->second;
    s->num_classes = static_cast<std::size_t>(k->second);
    s->q_hat = rec.q_hat;
    *out = s.release();
  });
}

void lcp_classif_scorer_close(lcp_classif_scorer* s) { delete s; }

size_t lcp_classif_scorer_num_classes(const lcp_classif_scorer* s) { return s ? s->num_classes : 0; }

double lcp_classif_scorer_threshold(const lcp_classif_scorer* s) { return s ? s->q_hat : NAN; }

lcp_status lcp_classif_scorer_score(const lcp_classif_scorer* s, const double* probs, size_t k,
                                    double* scores_out) {
  if (!s || !probs || !scores_out) return fail(LCP_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    const lcp::classif::Example ex{std::vector<double>(probs, probs + k), 0};
    const lcp::Matrix m = lcp::classif::score_examples(s->net, s->stats, std::span(&ex, 1));
    for (std::size_t c = 0; c < k; ++c) scores_out[c] = m(0, c);
  });
}

lcp_status lcp_detect_scorer_open(const char* model_dir, lcp_detect_scorer** out) {
  if (!model_dir || !out) return fail(LCP_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    auto s = std::make_unique<lcp_detect_scorer>();
    s->net = lcp::nn::load_checkpoint(artifact(model_dir, "detect_model.ckpt"));
    const auto rec = lcp::conformal::load_calibration(artifact(model_dir, "detect_calibration.json"));
    const auto st = rec.stats.find("features");
    if (rec.task != "detect" || st == rec.stats.end())
      throw lcp::DataError("detection calibration record is incomplete");
    s->stats = st->second;
    s->tau = rec.q_hat;
    *out = s.release();
  });
}

void lcp_detect_scorer_close(lcp_detect_scorer* s) { delete s; }

double lcp_detect_scorer_tau(const lcp_detect_scorer* s) { return s ? s->tau : NAN; }

lcp_status lcp_detect_scorer_widths(const lcp_detect_scorer* s, double img_w, double img_h, const double box[4],
                                    double confidence, double widths_out[4]) {
  if (!s || !box || !widths_out) return fail(LCP_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    lcp::detect::DetRecord r;
    r.img_w = img_w;
    r.img_h = img_h;
    r.pred = {box[0], box[1], box[2], box[3]};
    r.gt = r.pred;
    r.conf = confidence;
    const lcp::Matrix w = lcp::detect::predict_widths(s->net, s->stats, std::span(&r, 1));
    for (std::size_t j = 0; j < 4; ++j) widths_out[j] = w(0, j) * s->tau;
  });
}

}  // extern "C"
