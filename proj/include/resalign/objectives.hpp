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

// The three losses of the resilient unlearning objective: the harmful loss
// (negated denoising loss on harmful pairs), the distillation regulariser
// towards the frozen original, and the fine-tuning loss family.

#include <cstdint>
#include <span>
#include <vector>

#include "resalign/autodiff.hpp"
#include "resalign/diffusion.hpp"

namespace resalign {

struct DatasetPool {
  std::vector<LabeledSample> train;            // all concepts, base-model pretraining
  std::vector<LabeledSample> harmful;          // unlearning targets
  std::vector<LabeledSample> harmful_heldout;  // evaluation only
  std::vector<int> preserve_concepts;          // benign ids kept by the regulariser
  std::vector<LabeledSample> finetune_pool;    // simulated downstream data
  std::vector<LabeledSample> attack_benign;
  std::vector<LabeledSample> attack_harmful;

  // Checks role invariants against the concept set.
  void validate(const ConceptSet& concepts) const;
};

struct PoolSizes {
  std::size_t train_per_concept = 400;
  std::size_t harmful_per_concept = 200;
  std::size_t heldout_per_concept = 200;
  std::size_t finetune_per_concept = 100;
  std::size_t attack_benign = 200;
  std::size_t attack_harmful = 200;
};

// Every role is an independent draw with its own derived seed.
DatasetPool make_pool(const ConceptSet& concepts, const PoolSizes& sizes, std::uint64_t seed);

// Frozen original model plus a cache of its own generations per concept,
// used as the source of noisy inputs for distillation and of prior samples
// for prior-preservation fine-tuning.
struct FrozenReference {
  ParamVector params;
  std::vector<int> concepts;
  std::vector<Matrix> generations;  // parallel to concepts, n x 2 each

  const Matrix& generations_for(int concept_id) const;
};

FrozenReference make_reference(const Denoiser& net, const ParamVector& original,
                               const NoiseSchedule& schedule, std::span<const int> concepts,
                               std::size_t per_concept, std::uint64_t seed);

struct ObjectiveSettings {
  std::size_t batch_size = 16;
  double clamp_max = 10.0;
  double prior_weight = 1.0;
};

enum class LossKind { kStandard, kPriorPreservation };

// Uniform draw of `n` samples without replacement (with replacement when the
// pool is smaller than n).
std::vector<LabeledSample> draw_batch(std::span<const LabeledSample> pool, std::size_t n,
                                      std::uint64_t seed);

// -denoise_loss on the batch, clamped below at -clamp_max. Every sample must
// carry a harmful concept id.
Graph harmful_loss(const Denoiser& net, std::span<const LabeledSample> batch,
                   const ConceptSet& concepts, const NoiseSchedule& schedule, std::uint64_t seed,
                   double clamp_max = 10.0);

// mean w_t ||eps_theta(x_t, p, t) - eps_original(x_t, p, t)||^2 over
// `batch_size` draws of (p, x_bar, t, eps) with x_t = alpha_t x_bar + sigma_t eps
// and x_bar taken from the frozen original's generations for p.
Graph preserve_loss(const Denoiser& net, const FrozenReference& frozen,
                    std::span<const int> preserve_concepts, const NoiseSchedule& schedule,
                    std::uint64_t seed, std::size_t batch_size = 16);

// Standard: denoise_loss on the batch. Prior preservation: the same plus
// prior_weight times the denoising loss on an equally sized batch of the frozen
// original's generations.
Graph ft_loss(const Denoiser& net, std::span<const LabeledSample> batch,
              const NoiseSchedule& schedule, LossKind kind, const FrozenReference* frozen,
              std::uint64_t seed, double prior_weight = 1.0);

}  // namespace resalign
