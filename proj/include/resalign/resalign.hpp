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

// Resilient unlearning outer loop and the plain unlearning baseline.
//
// Each outer step descends
//     (1 - beta) grad L_harmful(theta) + alpha grad R(theta)
//       + (beta / J) sum_j hypergrad_j
// where every hypergrad_j comes from one simulated fine-tuning run with a
// freshly sampled recipe and data subset. Hypergradients are plain vectors at
// aggregation time: nothing is differentiated through recipe sampling.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "resalign/adapt.hpp"
#include "resalign/hypergrad.hpp"
#include "resalign/testbed.hpp"

namespace resalign {

enum class OuterOptimizer { kSgd, kAdam };

std::string to_string(OuterOptimizer kind);
OuterOptimizer parse_outer_optimizer(const std::string& s);

struct ResalignSettings {
  double alpha = 1.0;
  double beta = 0.8;
  double outer_lr = 2e-4;
  int outer_steps = 120;
  int inner_samples = 4;
  HypergradSettings hypergrad;
  ConfigDistribution config_dist;
  std::uint64_t seed = 0;
  OuterOptimizer optimizer = OuterOptimizer::kSgd;
  std::size_t dft_size = 50;
  // When set, every inner sample uses this recipe instead of drawing one.
  std::optional<FinetuneConfig> fixed_config;
  int threads = 1;

  void validate() const;
};

// Outer optimizer state carried across steps (empty for sgd).
class OuterState {
 public:
  OuterState(OuterOptimizer kind, double lr, Eigen::Index dim);
  void apply(ParamVector& theta, const ParamVector& update);

 private:
  Optimizer opt_;
};

struct InnerSample {
  FinetuneConfig config;
  HypergradResult hypergrad;
  bool skipped = false;
};

struct StepDiagnostics {
  double harmful_loss = 0.0;
  double preserve_loss = 0.0;
  double mean_residual = 0.0;
  int skipped = 0;
  ParamVector grad_harmful;
  ParamVector grad_preserve;
  std::vector<InnerSample> inner;
  ParamVector update;  // direction handed to the outer optimizer
};

struct UnlearnRunRecord {
  std::vector<double> harmful_loss;
  std::vector<double> preserve_loss;
  std::vector<double> mean_residual;
  std::vector<int> skipped;
  ParamVector final_params;
};

// Seed for a named path within one outer step, e.g. outer_seed(s, 3, "harmful").
std::uint64_t outer_seed(std::uint64_t master, int step, const std::string& leaf);

// One descent step on L_harmful + alpha R with the given optimizer state.
ParamVector baseline_unlearn_step(const Testbed& testbed, const ParamVector& theta, double alpha,
                                  OuterState& state, std::uint64_t master_seed, int step_index,
                                  StepDiagnostics* diag = nullptr);

// Convenience form with plain sgd at learning rate lr.
ParamVector baseline_unlearn_step(const Testbed& testbed, const ParamVector& theta, double alpha,
                                  double lr, std::uint64_t master_seed, int step_index);

std::pair<ParamVector, StepDiagnostics> resalign_step(const Testbed& testbed,
                                                      const ParamVector& theta,
                                                      const ResalignSettings& settings,
                                                      int step_index, OuterState& state);

using CheckpointHook = std::function<void(int step, const ParamVector& theta)>;

std::pair<ParamVector, UnlearnRunRecord> run_resalign(const Testbed& testbed,
                                                      const ParamVector& theta0,
                                                      const ResalignSettings& settings,
                                                      const CheckpointHook& hook = {},
                                                      int checkpoint_every = 0);

// Outer loop without the resilience term (beta forced to 0).
std::pair<ParamVector, UnlearnRunRecord> run_baseline(const Testbed& testbed,
                                                      const ParamVector& theta0,
                                                      const ResalignSettings& settings,
                                                      const CheckpointHook& hook = {},
                                                      int checkpoint_every = 0);

}  // namespace resalign
