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

#include "resalign/objectives.hpp"

#include <numeric>
#include <string>

#include "resalign/errors.hpp"
#include "resalign/rng.hpp"

namespace resalign {

void DatasetPool::validate(const ConceptSet& concepts) const {
  for (const LabeledSample& s : harmful) {
    if (!concepts.is_harmful(s.concept_id)) {
      throw ConfigError("harmful set contains benign concept " + std::to_string(s.concept_id));
    }
  }
  for (const LabeledSample& s : harmful_heldout) {
    if (!concepts.is_harmful(s.concept_id)) {
      throw ConfigError("held-out harmful set contains benign concept " +
                        std::to_string(s.concept_id));
    }
  }
  for (int id : preserve_concepts) {
    if (concepts.is_harmful(id)) {
      throw ConfigError("preserve concept " + std::to_string(id) + " is harmful");
    }
  }
  for (const LabeledSample& s : finetune_pool) {
    if (concepts.is_harmful(s.concept_id)) {
      throw ConfigError("fine-tune pool contains harmful concept " + std::to_string(s.concept_id));
    }
  }
  for (const LabeledSample& s : attack_benign) {
    if (concepts.is_harmful(s.concept_id)) {
      throw ConfigError("benign attack set contains harmful concept " +
                        std::to_string(s.concept_id));
    }
  }
  for (const LabeledSample& s : attack_harmful) {
    if (!concepts.is_harmful(s.concept_id)) {
      throw ConfigError("harmful attack set contains benign concept " +
                        std::to_string(s.concept_id));
    }
  }
}

namespace {

// Draws `per_concept` samples for each id and interleaves them with a seeded shuffle.
std::vector<LabeledSample> draw_role(const ConceptSet& concepts, std::span<const int> ids,
                                     std::size_t per_concept, std::uint64_t seed) {
  std::vector<LabeledSample> out;
  for (int id : ids) {
    auto part = concepts.draw(id, per_concept, derive_seed(seed, "concept:" + std::to_string(id)));
    out.insert(out.end(), part.begin(), part.end());
  }
  Rng rng(derive_seed(seed, "shuffle"));
  for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.index(i)]);
  return out;
}

std::vector<LabeledSample> draw_total(const ConceptSet& concepts, std::span<const int> ids,
                                      std::size_t total, std::uint64_t seed) {
  if (ids.empty() || total == 0) return {};
  const std::size_t per = (total + ids.size() - 1) / ids.size();
  auto all = draw_role(concepts, ids, per, seed);
  all.resize(total);
  return all;
}

}  // namespace

DatasetPool make_pool(const ConceptSet& concepts, const PoolSizes& sizes, std::uint64_t seed) {
  std::vector<int> all;
  for (const auto& c : concepts.concepts()) all.push_back(c.id);
  const std::vector<int> harmful = concepts.harmful_ids();
  const std::vector<int> benign = concepts.benign_ids();

  DatasetPool pool;
  pool.train = draw_role(concepts, all, sizes.train_per_concept, derive_seed(seed, "data/train"));
  pool.harmful =
      draw_role(concepts, harmful, sizes.harmful_per_concept, derive_seed(seed, "data/harmful"));
  pool.harmful_heldout =
      draw_role(concepts, harmful, sizes.heldout_per_concept, derive_seed(seed, "data/heldout"));
  pool.preserve_concepts = benign;
  pool.finetune_pool =
      draw_role(concepts, benign, sizes.finetune_per_concept, derive_seed(seed, "data/finetune"));
  pool.attack_benign =
      draw_total(concepts, benign, sizes.attack_benign, derive_seed(seed, "data/attack_benign"));
  pool.attack_harmful =
      draw_total(concepts, harmful, sizes.attack_harmful, derive_seed(seed, "data/attack_harmful"));
  pool.validate(concepts);
  return pool;
}

const Matrix& FrozenReference::generations_for(int concept_id) const {
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    if (concepts[i] == concept_id) return generations[i];
  }
  throw UsageError("frozen reference has no generations for concept " + std::to_string(concept_id));
}

FrozenReference make_reference(const Denoiser& net, const ParamVector& original,
                               const NoiseSchedule& schedule, std::span<const int> concepts,
                               std::size_t per_concept, std::uint64_t seed) {
  if (original.size() != net.param_dim()) {
    throw ConfigError("frozen original does not match the denoiser architecture");
  }
  FrozenReference ref;
  ref.params = original;
  for (int id : concepts) {
    ref.concepts.push_back(id);
    ref.generations.push_back(sample(net, original, id, schedule, per_concept,
                                     derive_seed(seed, "reference:" + std::to_string(id))));
  }
  return ref;
}

std::vector<LabeledSample> draw_batch(std::span<const LabeledSample> pool, std::size_t n,
                                      std::uint64_t seed) {
  if (pool.empty()) throw UsageError("cannot draw a batch from an empty pool");
  Rng rng(seed);
  std::vector<LabeledSample> out;
  out.reserve(n);
  if (pool.size() < n) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(pool[rng.index(pool.size())]);
    return out;
  }
  // Partial Fisher-Yates over indices.
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
    out.push_back(pool[idx[i]]);
  }
  return out;
}

Graph harmful_loss(const Denoiser& net, std::span<const LabeledSample> batch,
                   const ConceptSet& concepts, const NoiseSchedule& schedule, std::uint64_t seed,
                   double clamp_max) {
  for (const LabeledSample& s : batch) {
    if (!concepts.is_harmful(s.concept_id)) {
      throw UsageError("harmful loss batch contains benign concept " +
                       std::to_string(s.concept_id));
    }
  }
  Graph g(net.param_dim());
  const NodeRef mse = append_denoise_loss(g, net, batch, schedule, seed);
  g.set_output(g.combine({{-1.0, mse}}, 0.0, -clamp_max, "harmful_loss"));
  return g;
}

Graph preserve_loss(const Denoiser& net, const FrozenReference& frozen,
                    std::span<const int> preserve_concepts, const NoiseSchedule& schedule,
                    std::uint64_t seed, std::size_t batch_size) {
  if (frozen.params.size() != net.param_dim()) {
    throw ConfigError("frozen original does not match the denoiser architecture");
  }
  if (preserve_concepts.empty()) throw UsageError("no preserve concepts");
  if (batch_size == 0) throw UsageError("preserve loss batch size must be positive");
  Rng rng(seed);
  const auto n = static_cast<Eigen::Index>(batch_size);
  Matrix x_t(n, 2);
  Eigen::VectorXd w(n);
  std::vector<int> ts(batch_size);
  std::vector<int> cs(batch_size);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int p = preserve_concepts[rng.index(preserve_concepts.size())];
    const Matrix& gen = frozen.generations_for(p);
    const Point x_bar = gen.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(gen.rows())))).transpose();
    const int t = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(schedule.steps)));
    const double e0 = rng.normal();
    const double e1 = rng.normal();
    x_t.row(i) = forward_noise(x_bar, t, Point(e0, e1), schedule).transpose();
    w[i] = schedule.weight_at(t);
    ts[static_cast<std::size_t>(i)] = t;
    cs[static_cast<std::size_t>(i)] = p;
  }
  Matrix target = predict_noise(net, frozen.params, x_t, ts, cs);
  Graph g(net.param_dim());
  const NodeRef pred = net.build(g, x_t, ts, cs);
  g.set_output(g.squared_error(pred, g.constant(std::move(target), "eps_original"), std::move(w),
                               "preserve_loss"));
  return g;
}

Graph ft_loss(const Denoiser& net, std::span<const LabeledSample> batch,
              const NoiseSchedule& schedule, LossKind kind, const FrozenReference* frozen,
              std::uint64_t seed, double prior_weight) {
  if (kind == LossKind::kStandard) return denoise_loss(net, batch, schedule, seed);
  if (frozen == nullptr || frozen->concepts.empty()) {
    throw UsageError("prior-preservation loss needs a frozen original with cached generations");
  }
  // Prior samples: uniform concept from the reference cache, uniform generation.
  Rng rng(derive_seed(seed, "prior"));
  std::vector<LabeledSample> prior;
  prior.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t k = rng.index(frozen->concepts.size());
    const Matrix& gen = frozen->generations[k];
    const auto r = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(gen.rows())));
    prior.push_back({gen.row(r).transpose(), frozen->concepts[k]});
  }
  Graph g(net.param_dim());
  const NodeRef main = append_denoise_loss(g, net, batch, schedule, seed);
  const NodeRef aux = append_denoise_loss(g, net, prior, schedule, derive_seed(seed, "prior/noise"));
  g.set_output(g.combine({{1.0, main}, {prior_weight, aux}}, 0.0, std::nullopt, "ft_prior"));
  return g;
}

}  // namespace resalign
