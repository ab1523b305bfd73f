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

// Run configuration: an INI file with the sections below. Every key is
// optional; missing keys keep the RunConfig defaults, which configs/default.ini
// spells out. Unknown sections or keys are rejected.
//
//   [run]       seed, run_id
//   [data]      benign_concepts, harmful_concepts, ring_radius, mode_std,
//               train_per_concept, harmful_per_concept, heldout_per_concept,
//               finetune_per_concept, attack_benign, attack_harmful
//   [arch]      time_embed, concept_embed, hidden, activation
//   [schedule]  steps, beta_min, beta_max
//   [objective] batch_size, clamp_max, prior_weight, reference_per_concept
//   [pretrain]  steps, lr, batch_size
//   [unlearn]   alpha, beta, outer_lr, outer_steps, inner_samples, optimizer,
//               dft_size, threads, checkpoint_every, gamma, K, iteration_form,
//               residual_tol, hvp_batch, lr_choices, step_choices,
//               loss_choices, param_choices, optimizer_choices, sim_batch_size,
//               fixed_config
//   [attack]    optimizer, lr, steps, loss, parameterization, batch_size
//   [eval]      n_samples, radius_stds, checkpoints, contamination_ratios,
//               trace_probes, trace_batch, gamma_sweep
//
// Lists are comma separated. Parameterizations are "full" or "low-rank:<r>".

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "resalign/adapt.hpp"
#include "resalign/evalharness.hpp"
#include "resalign/resalign.hpp"
#include "resalign/testbed.hpp"

namespace resalign {

struct EvalConfig {
  EvalSettings settings;
  std::vector<int> checkpoints = {0, 25, 50, 100, 200};
  std::vector<double> contamination_ratios = {0.0, 0.25, 0.5, 1.0};
  int trace_probes = 64;
  std::size_t trace_batch = 64;
  std::vector<double> gamma_sweep = {0.1, 0.5, 1.0};
};

ResalignSettings toy_unlearn_defaults();

struct RunConfig {
  std::uint64_t seed = 0;
  std::string run_id = "run";
  TestbedSpec testbed;
  PretrainSettings pretrain;
  // unlearn.seed is derived from `seed`. On the toy testbed the outer loop
  // defaults to adam and gamma to 0.01 (see README).
  ResalignSettings unlearn = toy_unlearn_defaults();
  int checkpoint_every = 0;
  FinetuneConfig attack;     // attack.seed is derived from `seed`
  EvalConfig eval;

  void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& config);

std::string to_string(const Parameterization& p);
Parameterization parse_parameterization(const std::string& s);

}  // namespace resalign
