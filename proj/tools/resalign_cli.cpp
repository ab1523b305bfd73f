// Copyright 2026 The resalign-toy Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// resalign: command-line front end for the toy unlearning pipeline.
//
//   resalign train-base --config c.ini --out base.ckpt
//   resalign unlearn    --config c.ini --method resalign --in base.ckpt --out un.ckpt
//   resalign attack     --config c.ini --in un.ckpt --out atk.ckpt --contamination 0.25
//   resalign eval       --config c.ini --in a.ckpt [--in b.ckpt ...]
//   resalign report     --config c.ini --in baseline.ckpt --in resalign.ckpt
//   resalign report     --config c.ini --in base.ckpt --gamma-sweep 0.1,0.5,1.0
//
// Reports (CSV, JSON, MANIFEST) go to $RESALIGN_RUN_DIR, default ".".

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "resalign/errors.hpp"
#include "resalign/pipeline.hpp"
#include "resalign/rng.hpp"

namespace fs = std::filesystem;
using namespace resalign;

namespace {

fs::path run_dir() {
  const char* env = std::getenv("RESALIGN_RUN_DIR");
  fs::path dir = env && *env ? fs::path(env) : fs::path(".");
  fs::create_directories(dir);
  return dir;
}

// First unused "<stem>-NNN" in the run directory; reports never overwrite.
fs::path next_report_base(const fs::path& dir, const std::string& stem) {
  for (int i = 1;; ++i) {
    char suffix[16];
    std::snprintf(suffix, sizeof suffix, "-%03d", i);
    fs::path base = dir / (stem + suffix);
    if (!fs::exists(base.string() + ".csv") && !fs::exists(base.string() + ".json")) return base;
  }
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string command_line;
};

RunConfig load(const Common& c) {
  if (!fs::exists(c.config)) throw ConfigError("config file not found: " + c.config);
  RunConfig cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void write_report(const fs::path& csv, const std::vector<ReportRow>& rows, const std::string& cmd) {
  write_file_atomic(csv, format_report(rows));
  append_manifest(csv.parent_path().empty() ? fs::path(".") : csv.parent_path(),
                  csv.filename().string(), cmd);
}

int cmd_train_base(const Common& c, const std::string& out) {
  const RunConfig cfg = load(c);
  const Testbed tb = build_testbed(cfg);
  const ParamVector theta = train_base(cfg, tb);
  write_checkpoint(out, make_checkpoint(tb, theta));
  const Graph probe = denoise_loss(tb.net, tb.pool.train, tb.schedule, derive_seed(cfg.seed, "pretrain/probe"));
  const Graph heldout = denoise_loss(tb.net, tb.pool.harmful_heldout, tb.schedule, derive_seed(cfg.seed, "pretrain/probe"));
  std::printf("train-base: d=%ld steps=%d train_loss=%.6f heldout_harmful_loss=%.6f -> %s\n",
              static_cast<long>(theta.size()), cfg.pretrain.steps, eval_loss(probe, theta),
              eval_loss(heldout, theta), out.c_str());
  return 0;
}

int cmd_unlearn(const Common& c, const std::string& method_name, const std::string& in,
                const std::string& out) {
  const RunConfig cfg = load(c);
  const Method method = parse_method(method_name);
  Testbed tb = build_testbed(cfg);
  const ParamVector theta0 = load_params(tb, in);
  const fs::path dir = run_dir();
  CheckpointHook hook;
  if (cfg.checkpoint_every > 0) {
    hook = [&](int step, const ParamVector& theta) {
      const fs::path p = dir / (fs::path(out).stem().string() + "-step" + std::to_string(step) + ".ckpt");
      write_checkpoint(p, make_checkpoint(tb, theta));
      append_manifest(dir, p.filename().string(), c.command_line);
    };
  }
  try {
    auto [theta, record] = unlearn(cfg, tb, theta0, method, hook);
    write_checkpoint(out, make_checkpoint(tb, theta));
    const fs::path base = next_report_base(dir, "unlearn-" + method_name);
    write_report(base.string() + ".csv", unlearn_rows(cfg, method_name, record), c.command_line);
    std::printf("unlearn: method=%s harmful_loss %.6f -> %.6f record=%s -> %s\n",
                method_name.c_str(), record.harmful_loss.front(), record.harmful_loss.back(),
                (base.string() + ".csv").c_str(), out.c_str());
  } catch (const OuterStepError& e) {
    std::fprintf(stderr, "unlearn: failed at outer step %zu: %s\n", e.step(), e.what());
    return 1;
  }
  return 0;
}

int cmd_attack(const Common& c, const std::string& in, const std::string& out, double contamination) {
  const RunConfig cfg = load(c);
  if (!(contamination >= 0.0 && contamination <= 1.0)) {
    throw UsageError("--contamination must lie in [0, 1]");
  }
  Testbed tb = build_testbed(cfg);
  const ParamVector theta = load_params(tb, in);
  try {
    const ParamVector attacked = attack(cfg, tb, theta, contamination);
    write_checkpoint(out, make_checkpoint(tb, attacked));
  } catch (const AdaptationDiverged& e) {
    std::fprintf(stderr, "attack: adaptation diverged at step %zu: %s\n", e.step(), e.what());
    return 1;
  }
  std::printf("attack: contamination=%g steps=%d -> %s\n", contamination, cfg.attack.steps, out.c_str());
  return 0;
}

int cmd_eval(const Common& c, const std::vector<std::string>& ins, const std::string& out,
             const std::string& stem) {
  if (ins.empty()) throw UsageError("no checkpoints given (use --in <ckpt>, repeatable)");
  const RunConfig cfg = load(c);
  Testbed tb = build_testbed(cfg);
  std::vector<ParamVector> params;
  for (const auto& p : ins) params.push_back(load_params(tb, p));
  std::vector<ModelEval> evals;
  std::vector<ReportRow> rows;
  for (std::size_t i = 0; i < ins.size(); ++i) {
    evals.push_back(evaluate_model(cfg, tb, params[i], fs::path(ins[i]).stem().string()));
    const auto r = eval_rows(cfg, evals.back());
    rows.insert(rows.end(), r.begin(), r.end());
    std::printf("%s: harmful_fraction=%.4f post_attack=%.4f trace=%.3f\n", evals.back().label.c_str(),
                evals.back().report.harmful_fraction,
                evals.back().curve.points.empty() ? 0.0 : evals.back().curve.points.back().report.harmful_fraction,
                evals.back().trace.estimate);
  }
  const fs::path dir = run_dir();
  const fs::path base = out.empty() ? next_report_base(dir, stem) : fs::path(out).replace_extension();
  write_report(base.string() + ".csv", rows, c.command_line);
  write_file_atomic(base.string() + ".json", verdict_json(cfg, evals));
  append_manifest(base.parent_path().empty() ? fs::path(".") : base.parent_path(),
                  base.filename().string() + ".json", c.command_line);
  std::printf("report: %s.csv %s.json\n", base.string().c_str(), base.string().c_str());
  return 0;
}

int cmd_gamma_sweep(const Common& c, const std::vector<std::string>& ins, const std::string& out,
                    const std::string& sweep) {
  if (ins.size() != 1) throw UsageError("--gamma-sweep takes exactly one base checkpoint (--in)");
  RunConfig cfg = load(c);
  std::vector<double> gammas;
  {
    std::stringstream ss(sweep);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        gammas.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw UsageError("bad --gamma-sweep value '" + item + "'");
      }
    }
  }
  if (gammas.empty()) throw UsageError("--gamma-sweep needs at least one value");
  Testbed tb = build_testbed(cfg);
  const ParamVector theta0 = load_params(tb, ins[0]);
  std::vector<ReportRow> rows;
  std::vector<ModelEval> evals;
  int failures = 0;
  for (double g : gammas) {
    RunConfig gc = cfg;
    gc.unlearn.hypergrad.gamma = g;
    const std::string label = "gamma=" + format_short(g);
    try {
      auto [theta, record] = unlearn(gc, tb, theta0, Method::kResalign);
      auto ur = unlearn_rows(gc, label, record);
      rows.insert(rows.end(), ur.begin(), ur.end());
      evals.push_back(evaluate_model(gc, tb, theta, label, false));
      const auto er = eval_rows(gc, evals.back());
      rows.insert(rows.end(), er.begin(), er.end());
      std::printf("%s: completed, post_attack=%.4f\n", label.c_str(),
                  evals.back().curve.points.empty() ? 0.0 : evals.back().curve.points.back().report.harmful_fraction);
    } catch (const OuterStepError& e) {
      ++failures;
      rows.push_back({gc.run_id + ":" + label, "unlearn", static_cast<long>(e.step()), "failed", 1.0, 0.0,
                      derive_seed(gc.seed, "unlearn")});
      std::printf("%s: failed at outer step %zu (%s)\n", label.c_str(), e.step(), e.what());
    }
  }
  const fs::path dir = run_dir();
  const fs::path base = out.empty() ? next_report_base(dir, "gamma-sweep") : fs::path(out).replace_extension();
  write_report(base.string() + ".csv", rows, c.command_line);
  write_file_atomic(base.string() + ".json", verdict_json(cfg, evals));
  append_manifest(base.parent_path().empty() ? fs::path(".") : base.parent_path(),
                  base.filename().string() + ".json", c.command_line);
  std::printf("report: %s.csv (%d of %zu runs failed)\n", base.string().c_str(), failures, gammas.size());
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Resilient unlearning on a toy conditional diffusion model"};
  app.require_subcommand(1);
  Common common;
  for (int i = 0; i < argc; ++i) common.command_line += (i ? " " : "") + std::string(argv[i]);

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "run configuration (INI)")->required();
    sub->add_option("--seed", common.seed, "override the master seed");
  };

  std::string in, out, method = "resalign", gamma_sweep;
  std::vector<std::string> ins;
  double contamination = 0.0;

  auto* train = app.add_subcommand("train-base", "pretrain the base denoiser on all concepts");
  add_common(train);
  train->add_option("--out", out, "output checkpoint")->required();

  auto* unl = app.add_subcommand("unlearn", "unlearn the harmful concepts");
  add_common(unl);
  unl->add_option("--method", method, "resalign or baseline")->check(CLI::IsMember({"resalign", "baseline"}));
  unl->add_option("--in", in, "input checkpoint")->required();
  unl->add_option("--out", out, "output checkpoint")->required();

  auto* atk = app.add_subcommand("attack", "fine-tune with the attack recipe");
  add_common(atk);
  atk->add_option("--in", in, "input checkpoint")->required();
  atk->add_option("--out", out, "output checkpoint")->required();
  atk->add_option("--contamination", contamination, "share of harmful samples in the attack set");

  auto* ev = app.add_subcommand("eval", "evaluate checkpoints");
  add_common(ev);
  ev->add_option("--in", ins, "checkpoint (repeatable)");
  ev->add_option("--out", out, "report path (without extension)");

  auto* rep = app.add_subcommand("report", "evaluate and compare checkpoints against the first");
  add_common(rep);
  rep->add_option("--in", ins, "checkpoint (repeatable); the first is the reference");
  rep->add_option("--out", out, "report path (without extension)");
  rep->add_option("--gamma-sweep", gamma_sweep, "comma-separated gamma values; unlearns from --in at each");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train) return cmd_train_base(common, out);
    if (*unl) return cmd_unlearn(common, method, in, out);
    if (*atk) return cmd_attack(common, in, out, contamination);
    if (*ev) return cmd_eval(common, ins, out, "eval");
    if (*rep) {
      return gamma_sweep.empty() ? cmd_eval(common, ins, out, "report")
                                 : cmd_gamma_sweep(common, ins, out, gamma_sweep);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
