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

#include "resalign/pipeline.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "resalign/errors.hpp"
#include "resalign/rng.hpp"

namespace resalign {

std::string to_string(Method m) { return m == Method::kResalign ? "resalign" : "baseline"; }

Method parse_method(const std::string& s) {
  if (s == "resalign") return Method::kResalign;
  if (s == "baseline") return Method::kBaseline;
  throw UsageError("unknown method '" + s + "' (expected resalign or baseline)");
}

Testbed build_testbed(const RunConfig& config) {
  return make_testbed(config.testbed, derive_seed(config.seed, "data"));
}

Checkpoint make_checkpoint(const Testbed& testbed, const ParamVector& params) {
  return Checkpoint{testbed.net.arch().descriptor(), testbed.schedule.descriptor(), params};
}

ParamVector load_params(const Testbed& testbed, const std::filesystem::path& path) {
  Checkpoint c = read_checkpoint(path);
  try {
    require_compatible(c, testbed.net.arch().descriptor(), testbed.schedule.descriptor(),
                       testbed.net.param_dim());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  return std::move(c.params);
}

ParamVector train_base(const RunConfig& config, const Testbed& testbed) {
  return pretrain(testbed, config.pretrain, derive_seed(config.seed, "pretrain"));
}

std::pair<ParamVector, UnlearnRunRecord> unlearn(const RunConfig& config, Testbed& testbed,
                                                 const ParamVector& theta0, Method method,
                                                 const CheckpointHook& hook) {
  attach_reference(testbed, theta0, config.testbed.reference_per_concept,
                   derive_seed(config.seed, "reference"));
  ResalignSettings s = config.unlearn;
  s.seed = derive_seed(config.seed, "unlearn");
  return method == Method::kResalign
             ? run_resalign(testbed, theta0, s, hook, config.checkpoint_every)
             : run_baseline(testbed, theta0, s, hook, config.checkpoint_every);
}

std::vector<LabeledSample> attack_data(const RunConfig& config, const Testbed& testbed,
                                       double contamination) {
  return mix_attack_set(testbed.pool.attack_benign, testbed.pool.attack_harmful, contamination,
                        derive_seed(config.seed, "attack"));
}

FinetuneConfig attack_recipe(const RunConfig& config) {
  FinetuneConfig c = config.attack;
  c.seed = derive_seed(config.seed, "attack/order");
  return c;
}

namespace {

void prepare_attack_reference(const RunConfig& config, Testbed& testbed, const ParamVector& theta) {
  if (config.attack.loss_kind == LossKind::kPriorPreservation) {
    attach_reference(testbed, theta, config.testbed.reference_per_concept,
                     derive_seed(config.seed, "attack/reference"));
  }
}

}  // namespace

ParamVector attack(const RunConfig& config, Testbed& testbed, const ParamVector& theta,
                   double contamination) {
  prepare_attack_reference(config, testbed, theta);
  const auto data = attack_data(config, testbed, contamination);
  const FinetuneConfig recipe = attack_recipe(config);
  const LowRankBlocks blocks = recipe.parameterization.low_rank
                                   ? hidden_weight_blocks(testbed.net.arch())
                                   : LowRankBlocks{};
  return adapt(theta, data, recipe,
               make_ft_loss(testbed.net, testbed.schedule, recipe.loss_kind, &testbed.frozen,
                            testbed.objective.prior_weight),
               blocks);
}

ModelEval evaluate_model(const RunConfig& config, Testbed& testbed, const ParamVector& theta,
                         const std::string& label, bool with_sweep) {
  prepare_attack_reference(config, testbed, theta);
  const std::uint64_t attack_seed = derive_seed(config.seed, "attack");
  const FinetuneConfig recipe = attack_recipe(config);
  ModelEval e;
  e.label = label;
  e.report = harmful_fraction(testbed, theta, derive_seed(attack_seed, "eval"), config.eval.settings);
  const Graph curv = curvature_loss(testbed, config.eval.trace_batch, derive_seed(config.seed, "eval/curvature"));
  e.trace = hutchinson_trace(curv, theta, config.eval.trace_probes, derive_seed(config.seed, "eval/probes"));
  const auto benign = attack_data(config, testbed, 0.0);
  e.curve = resilience_curve(testbed, theta, benign, recipe, config.eval.checkpoints, attack_seed,
                             config.eval.settings);
  if (with_sweep) {
    e.sweep = contamination_sweep(testbed, theta, testbed.pool.attack_benign,
                                  testbed.pool.attack_harmful, config.eval.contamination_ratios,
                                  recipe, attack_seed, config.eval.settings);
  }
  return e;
}

std::vector<ReportRow> unlearn_rows(const RunConfig& config, const std::string& method,
                                    const UnlearnRunRecord& record) {
  std::vector<ReportRow> rows;
  const std::string id = config.run_id + ":" + method;
  const std::uint64_t seed = derive_seed(config.seed, "unlearn");
  for (std::size_t i = 0; i < record.harmful_loss.size(); ++i) {
    const long step = static_cast<long>(i);
    rows.push_back({id, "unlearn", step, "harmful_loss", record.harmful_loss[i], 0.0, seed});
    rows.push_back({id, "unlearn", step, "preserve_loss", record.preserve_loss[i], 0.0, seed});
    rows.push_back({id, "unlearn", step, "mean_residual", record.mean_residual[i], 0.0, seed});
    rows.push_back({id, "unlearn", step, "skipped", static_cast<double>(record.skipped[i]), 0.0, seed});
  }
  return rows;
}

namespace {

double binomial_error(const HarmfulnessReport& r, std::size_t total) {
  const double p = r.harmful_fraction;
  return total == 0 ? 0.0 : std::sqrt(p * (1.0 - p) / static_cast<double>(total));
}

}  // namespace

std::vector<ReportRow> eval_rows(const RunConfig& config, const ModelEval& e) {
  std::vector<ReportRow> rows;
  const std::string id = config.run_id + ":" + e.label;
  const std::size_t harmful_concepts = static_cast<std::size_t>(config.testbed.harmful_concepts);
  auto frac_err = [&](const HarmfulnessReport& r) {
    return binomial_error(r, r.n_samples * harmful_concepts);
  };
  rows.push_back({id, "eval", 0, "harmful_fraction", e.report.harmful_fraction, frac_err(e.report), e.report.seed});
  rows.push_back({id, "eval", 0, "harmful_loss_heldout", e.report.harmful_loss_heldout, 0.0, e.report.seed});
  rows.push_back({id, "eval", 0, "trace_harmful_hessian", e.trace.estimate, e.trace.std_error,
                  derive_seed(config.seed, "eval/probes")});
  for (const CurvePoint& p : e.curve.points) {
    rows.push_back({id, "resilience", p.step, "harmful_fraction", p.report.harmful_fraction, frac_err(p.report), p.report.seed});
    rows.push_back({id, "resilience", p.step, "harmful_loss_heldout", p.report.harmful_loss_heldout, 0.0, p.report.seed});
  }
  if (!e.curve.points.empty()) {
    rows.push_back({id, "resilience", e.curve.points.back().step, "auc", curve_area(e.curve), 0.0,
                    e.curve.points.back().report.seed});
  }
  if (e.curve.truncated) {
    rows.push_back({id, "resilience", e.curve.diverged_step, "diverged", 1.0, 0.0, 0});
  }
  // Contamination rows use the ratio in percent as the step.
  for (const SweepPoint& p : e.sweep) {
    const long pct = std::lround(p.ratio * 100.0);
    rows.push_back({id, "contamination", pct, "harmful_fraction", p.report.harmful_fraction, frac_err(p.report), p.report.seed});
    if (p.diverged) rows.push_back({id, "contamination", pct, "diverged", 1.0, 0.0, 0});
  }
  return rows;
}

std::string verdict_json(const RunConfig& config, const std::vector<ModelEval>& evals) {
  using nlohmann::ordered_json;
  ordered_json root;
  root["run_id"] = config.run_id;
  root["seed"] = config.seed;
  ordered_json models = ordered_json::array();
  for (const ModelEval& e : evals) {
    ordered_json m;
    m["label"] = e.label;
    m["harmful_fraction"] = e.report.harmful_fraction;
    m["harmful_loss_heldout"] = e.report.harmful_loss_heldout;
    m["trace"] = e.trace.estimate;
    m["trace_std_error"] = e.trace.std_error;
    if (!e.curve.points.empty()) {
      m["post_attack_fraction"] = e.curve.points.back().report.harmful_fraction;
      m["attack_increase"] =
          e.curve.points.back().report.harmful_fraction - e.curve.points.front().report.harmful_fraction;
      m["auc"] = curve_area(e.curve);
    }
    m["attack_diverged"] = e.curve.truncated;
    ordered_json sweep = ordered_json::array();
    for (const SweepPoint& p : e.sweep) sweep.push_back({{"ratio", p.ratio}, {"harmful_fraction", p.report.harmful_fraction}});
    m["contamination"] = sweep;
    models.push_back(m);
  }
  root["models"] = models;

  // Every later model is compared against the first one.
  ordered_json verdicts = ordered_json::array();
  for (std::size_t i = 1; i < evals.size(); ++i) {
    const ModelEval& ref = evals[0];
    const ModelEval& cand = evals[i];
    ordered_json v;
    v["reference"] = ref.label;
    v["candidate"] = cand.label;
    if (!ref.curve.points.empty() && !cand.curve.points.empty() && !ref.curve.truncated &&
        !cand.curve.truncated) {
      const double inc_ref = ref.curve.points.back().report.harmful_fraction - ref.curve.points.front().report.harmful_fraction;
      const double inc_cand = cand.curve.points.back().report.harmful_fraction - cand.curve.points.front().report.harmful_fraction;
      v["smaller_attack_increase"] = inc_cand < inc_ref;
      v["smaller_auc"] = curve_area(cand.curve) < curve_area(ref.curve);
    }
    v["lower_trace"] = cand.trace.estimate < ref.trace.estimate;
    if (!ref.sweep.empty() && ref.sweep.size() == cand.sweep.size()) {
      bool le = true;
      for (std::size_t k = 0; k < ref.sweep.size(); ++k) {
        le = le && cand.sweep[k].report.harmful_fraction <= ref.sweep[k].report.harmful_fraction;
      }
      v["contamination_not_worse"] = le;
    }
    verdicts.push_back(v);
  }
  root["verdicts"] = verdicts;
  return root.dump(2) + "\n";
}

}  // namespace resalign
