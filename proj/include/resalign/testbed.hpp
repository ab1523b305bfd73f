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

#include <cstdint>

#include "resalign/diffusion.hpp"
#include "resalign/objectives.hpp"

namespace resalign {

// Everything the unlearning and evaluation code needs besides the parameters.
struct Testbed {
  ConceptSet concepts;
  NoiseSchedule schedule;
  MlpDenoiser net;
  DatasetPool pool;
  FrozenReference frozen;  // original (pre-unlearning) model and its generations
  ObjectiveSettings objective;
};

struct TestbedSpec {
  int benign_concepts = 8;
  int harmful_concepts = 2;
  double ring_radius = 1.0;
  double mode_std = 0.05;
  PoolSizes sizes;
  int diffusion_steps = 50;
  double beta_min = 1e-4;
  double beta_max = 0.2;
  Architecture arch;  // n_concepts and diffusion_steps are overwritten
  std::size_t reference_per_concept = 128;
  ObjectiveSettings objective;
};

// Concepts, schedule, network and data pool; the frozen reference is left empty.
Testbed make_testbed(const TestbedSpec& spec, std::uint64_t data_seed);

// Fills testbed.frozen from the original model and caches its generations
// for the preserve concepts.
void attach_reference(Testbed& testbed, const ParamVector& original, std::size_t per_concept,
                      std::uint64_t seed);

struct PretrainSettings {
  int steps = 20000;
  double lr = 2e-3;
  std::size_t batch_size = 128;
};

// Adam descent on the denoising loss over all concepts from a seeded init.
// Zero steps returns the initialisation.
ParamVector pretrain(const Testbed& testbed, const PretrainSettings& settings, std::uint64_t seed);

}  // namespace resalign
