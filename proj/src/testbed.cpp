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

#include "resalign/testbed.hpp"

#include <string>

#include "resalign/adapt.hpp"
#include "resalign/errors.hpp"
#include "resalign/rng.hpp"

namespace resalign {

Testbed make_testbed(const TestbedSpec& spec, std::uint64_t data_seed) {
  ConceptSet concepts = default_concepts(spec.benign_concepts, spec.harmful_concepts,
                                         spec.ring_radius, spec.mode_std);
  NoiseSchedule schedule = make_schedule(spec.diffusion_steps, spec.beta_min, spec.beta_max);
  Architecture arch = spec.arch;
  arch.n_concepts = concepts.size();
  arch.diffusion_steps = spec.diffusion_steps;
  MlpDenoiser net(arch);
  DatasetPool pool = make_pool(concepts, spec.sizes, data_seed);
  return Testbed{std::move(concepts), std::move(schedule), std::move(net), std::move(pool),
                 FrozenReference{}, spec.objective};
}

void attach_reference(Testbed& testbed, const ParamVector& original, std::size_t per_concept,
                      std::uint64_t seed) {
  testbed.frozen = make_reference(testbed.net, original, testbed.schedule,
                                  testbed.pool.preserve_concepts, per_concept, seed);
}

ParamVector pretrain(const Testbed& testbed, const PretrainSettings& settings, std::uint64_t seed) {
  if (settings.steps < 0) throw ConfigError("pretraining steps must be >= 0");
  ParamVector theta = testbed.net.init_params(derive_seed(seed, "pretrain/init"));
  Optimizer opt(OptimizerKind::kAdam, settings.lr, theta.size());
  for (int s = 0; s < settings.steps; ++s) {
    const std::string tag = "pretrain/step:" + std::to_string(s);
    const auto batch = draw_batch(testbed.pool.train, settings.batch_size, derive_seed(seed, tag));
    const Graph g = denoise_loss(testbed.net, batch, testbed.schedule, derive_seed(seed, tag + "/noise"));
    const ValueAndGrad vg = value_and_grad(g, theta);
    if (!std::isfinite(vg.value)) throw NumericError("pretrain", "pretraining loss became non-finite");
    opt.step(theta, vg.grad);
  }
  return theta;
}

}  // namespace resalign
