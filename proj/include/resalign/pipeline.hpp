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

#pragma once

// Pipeline stages behind the command-line verbs. All randomness flows from
// RunConfig::seed through these derivation paths:
//   data          dataset pool
//   pretrain      base-model initialisation and batches
//   reference     frozen-original generation cache
//   unlearn       outer loop ("unlearn/outer:{i}/..." below it)
//   attack        attack data order and mixing
//   eval          sampling for harmful_fraction and curvature probes

#include <cstdint>
#include <string>
#include <vector>

#include "resalign/config.hpp"
#include "resalign/evalharness.hpp"
#include "resalign/io.hpp"
#include "resalign/resalign.hpp"
#include "resalign/testbed.hpp"

namespace resalign {

enum class Method { kResalign, kBaseline };

std::string to_string(Method m);
Method parse_method(const std::string& s);

// Testbed without a frozen reference.
Testbed build_testbed(const RunConfig& config);

Checkpoint make_checkpoint(const Testbed& testbed, const ParamVector& params);
// Reads a checkpoint and rejects it unless it matches the testbed.
ParamVector load_params(const Testbed& testbed, const std::filesystem::path& path);

ParamVector train_base(const RunConfig& config, const Testbed& testbed);

// Attaches the frozen reference built from theta0, then runs the unlearner.
std::pair<ParamVector, UnlearnRunRecord> unlearn(const RunConfig& config, Testbed& testbed,
                                                 const ParamVector& theta0, Method method,
                                                 const CheckpointHook& hook = {});

// Attack data at the given contamination ratio.
std::vector<LabeledSample> attack_data(const RunConfig& config, const Testbed& testbed,
                                       double contamination);

FinetuneConfig attack_recipe(const RunConfig& config);

// Fine-tunes with the attack recipe. Prior samples (if used) come from the
// attacked model itself, so the reference is rebuilt from theta.
ParamVector attack(const RunConfig& config, Testbed& testbed, const ParamVector& theta,
                   double contamination);

struct ModelEval {
  std::string label;
  HarmfulnessReport report;
  TraceEstimate trace;
  ResilienceCurve curve;
  std::vector<SweepPoint> sweep;
};

// harmful_fraction, curvature trace, benign resilience curve and
// contamination sweep. The testbed's frozen reference is rebuilt from theta
// for prior-preservation attacks.
ModelEval evaluate_model(const RunConfig& config, Testbed& testbed, const ParamVector& theta,
                         const std::string& label, bool with_sweep = true);

std::vector<ReportRow> unlearn_rows(const RunConfig& config, const std::string& method,
                                    const UnlearnRunRecord& record);
std::vector<ReportRow> eval_rows(const RunConfig& config, const ModelEval& eval);

// Directional verdicts of `candidate` against `reference` as JSON text.
std::string verdict_json(const RunConfig& config, const std::vector<ModelEval>& evals);

}  // namespace resalign
