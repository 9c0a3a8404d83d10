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

#ifndef LCP_LCP_H
#define LCP_LCP_H

/* C interface to the lcp library. Every function returns an lcp_status;
 * on failure lcp_last_error() describes the problem for the calling thread.
 * Handles are opaque and must be released with the matching destroy call. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(LCP_BUILDING_LIBRARY)
#define LCP_API __declspec(dllexport)
#else
#define LCP_API __declspec(dllimport)
#endif
#else
#define LCP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values double as process exit codes. */
typedef enum lcp_status {
  LCP_OK = 0,
  LCP_ERR_INTERNAL = 1,
  LCP_ERR_CONFIG = 2,
  LCP_ERR_DATA = 3,
  LCP_ERR_MISSING_ARTIFACT = 4,
  LCP_ERR_ARGUMENT = 5
} lcp_status;

typedef struct lcp_config lcp_config;
typedef struct lcp_classif_scorer lcp_classif_scorer;
typedef struct lcp_detect_scorer lcp_detect_scorer;

LCP_API const char* lcp_version(void);
/* Message of the last failed call on this thread; empty after success. */
LCP_API const char* lcp_last_error(void);

/* Run configuration. Settings use the configuration-file keys. */
LCP_API lcp_status lcp_config_create(lcp_config** out);
LCP_API void lcp_config_destroy(lcp_config* cfg);
LCP_API lcp_status lcp_config_load_file(lcp_config* cfg, const char* path);
LCP_API lcp_status lcp_config_set(lcp_config* cfg, const char* key, const char* value);
/* Parses `key = value` lines; `origin` prefixes error messages. */
LCP_API lcp_status lcp_config_parse(lcp_config* cfg, const char* text, const char* origin);

/* Runs synth, train, eval, simulate or report. */
LCP_API lcp_status lcp_run(const lcp_config* cfg, const char* command);

/* Split conformal quantile: order statistic ceil((n+1)(1-alpha)); +inf
 * when that rank exceeds n. */
LCP_API lcp_status lcp_conformal_quantile(const double* scores, size_t n, double alpha, double* out);
/* Deployed planning margin: robot radius plus clamped prediction and offset. */
LCP_API lcp_status lcp_final_margin(double tau, double offset, double* out);
LCP_API double lcp_robot_radius(void);

/* Trained classification scorer loaded from an artifact directory. */
LCP_API lcp_status lcp_classif_scorer_open(const char* model_dir, lcp_classif_scorer** out);
LCP_API void lcp_classif_scorer_close(lcp_classif_scorer* s);
LCP_API size_t lcp_classif_scorer_num_classes(const lcp_classif_scorer* s);
LCP_API double lcp_classif_scorer_threshold(const lcp_classif_scorer* s);
/* Scores all k classes of one probability vector into scores_out[k]. */
LCP_API lcp_status lcp_classif_scorer_score(const lcp_classif_scorer* s, const double* probs, size_t k,
                                            double* scores_out);

/* Trained detection width model loaded from an artifact directory. */
LCP_API lcp_status lcp_detect_scorer_open(const char* model_dir, lcp_detect_scorer** out);
LCP_API void lcp_detect_scorer_close(lcp_detect_scorer* s);
LCP_API double lcp_detect_scorer_tau(const lcp_detect_scorer* s);
/* box = x0, y0, x1, y1. Writes the four calibrated half-widths. */
LCP_API lcp_status lcp_detect_scorer_widths(const lcp_detect_scorer* s, double img_w, double img_h,
                                            const double box[4], double confidence, double widths_out[4]);

#ifdef __cplusplus
}
#endif

#endif /* LCP_LCP_H */
