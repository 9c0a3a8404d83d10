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

// Command-line front end. Talks to the library only through the C API.

#include <cstdio>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "lcp/lcp.h"

namespace {

struct Options {
  std::string config;
  std::vector<std::pair<std::string, std::string>> flags;  // applied after the file
  std::vector<std::string> sets;
};

int report(lcp_status s) {
  if (s != LCP_OK) std::fprintf(stderr, "lcp: %s\n", lcp_last_error());
  return static_cast<int>(s);
}

void add_flag(CLI::App& app, Options& opt, const std::string& name, const std::string& key,
              const std::string& help) {
  app.add_option_function<std::string>(
      name, [&opt, key](const std::string& v) { opt.flags.emplace_back(key, v); }, help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learnable conformal prediction: training, evaluation and planning benchmark"};
  app.set_version_flag("--version", std::string(lcp_version()));
  app.require_subcommand(1, 1);
  app.fallthrough();  // global options may follow the subcommand
  Options opt;
  app.add_option("--config", opt.config, "Configuration file of key = value lines")->option_text("FILE");
  add_flag(app, opt, "--seed", "seed", "Master seed");
  add_flag(app, opt, "--alpha", "alpha", "Miscoverage level in (0, 1)");
  add_flag(app, opt, "--workers", "workers", "Worker threads; results do not depend on it");
  add_flag(app, opt, "--out", "out", "Output directory");
  add_flag(app, opt, "--task", "task", "classif, detect or plan");
  add_flag(app, opt, "--input", "input", "Dataset file (JSONL)");
  add_flag(app, opt, "--model", "model", "Artifact directory for eval and simulate");
  app.add_option("--set", opt.sets, "Extra configuration key=value, repeatable")->option_text("KEY=VALUE");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "Write a synthetic dataset"},
      {"train", "Train and calibrate a scorer"},
      {"eval", "Evaluate learned and baseline methods over seeds"},
      {"simulate", "Run the planning benchmark"},
      {"report", "Summarize result CSVs as markdown"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : LCP_ERR_CONFIG;
  }

  lcp_config* raw = nullptr;
  if (const auto s = lcp_config_create(&raw); s != LCP_OK) return report(s);
  const std::unique_ptr<lcp_config, void (*)(lcp_config*)> cfg(raw, lcp_config_destroy);

  if (!opt.config.empty())
    if (const auto s = lcp_config_load_file(cfg.get(), opt.config.c_str()); s != LCP_OK) return report(s);
  for (const auto& kv : opt.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "lcp: --set expects KEY=VALUE, got '%s'\n", kv.c_str());
      return LCP_ERR_CONFIG;
    }
    opt.flags.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const auto& [key, value] : opt.flags)
    if (const auto s = lcp_config_set(cfg.get(), key.c_str(), value.c_str()); s != LCP_OK) return report(s);

  return report(lcp_run(cfg.get(), app.get_subcommands().front()->get_name().c_str()));
}
