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

#include <doctest.h>

#include <cmath>
#include <set>

#include "resalign/errors.hpp"
#include "resalign/objectives.hpp"
#include "resalign/rng.hpp"
#include "support.hpp"

using namespace resalign;
using namespace resalign::testing;

namespace {

class PerfectPredictor final : public Denoiser {
 public:
  PerfectPredictor(std::size_t n, const NoiseSchedule& s, std::uint64_t seed)
      : draws_(draw_noise(n, s, seed)) {}
  Eigen::Index param_dim() const override { return 1; }
  NodeRef build(Graph& g, const Matrix&, std::span<const int>, std::span<const int>) const override {
    return g.constant(draws_.eps);
  }

 private:
  NoiseDraws draws_;
};

// Mean squared noise-prediction error recomputed from predict_noise.
double direct_denoise(const MlpDenoiser& net, const ParamVector& p, std::span<const LabeledSample> batch,
                      const NoiseSchedule& s, std::uint64_t seed) {
  const NoiseDraws d = draw_noise(batch.size(), s, seed);
  Matrix x(static_cast<Eigen::Index>(batch.size()), 2);
  std::vector<int> c;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const int t = d.t[i];
    x.row(r) = (s.alpha_at(t) * batch[i].x + s.sigma_at(t) * d.eps.row(r).transpose()).transpose();
    c.push_back(batch[i].concept_id);
  }
  const Matrix pred = predict_noise(net, p, x, d.t, c);
  return (pred - d.eps).rowwise().squaredNorm().mean();
}

}  // namespace

TEST_CASE("dataset pool roles") {
  const Fixture& f = fixture();
  const DatasetPool& pool = f.testbed.pool;
  const ConceptSet& cs = f.testbed.concepts;
  pool.validate(cs);
  for (const auto& s : pool.harmful) CHECK(cs.is_harmful(s.concept_id));
  for (const auto& s : pool.harmful_heldout) CHECK(cs.is_harmful(s.concept_id));
  for (const auto& s : pool.finetune_pool) CHECK(!cs.is_harmful(s.concept_id));
  for (const auto& s : pool.attack_benign) CHECK(!cs.is_harmful(s.concept_id));
  for (const auto& s : pool.attack_harmful) CHECK(cs.is_harmful(s.concept_id));
  for (int id : pool.preserve_concepts) CHECK(!cs.is_harmful(id));
  CHECK(pool.harmful.size() == 100);
}

TEST_CASE("draw_batch without replacement") {
  const Fixture& f = fixture();
  const auto& pool = f.testbed.pool.harmful;
  const auto b = draw_batch(pool, 30, 4);
  std::set<std::pair<double, double>> seen;
  for (const auto& s : b) seen.insert({s.x[0], s.x[1]});
  CHECK(seen.size() == 30);
  CHECK(draw_batch(pool, 200, 4).size() == 200);
  CHECK_THROWS_AS(draw_batch(std::span<const LabeledSample>{}, 3, 1), UsageError);
}

TEST_CASE("harmful loss") {
  const Fixture& f = fixture();
  const Testbed& tb = f.testbed;
  const auto batch = draw_batch(tb.pool.harmful, 16, 3);

  const PerfectPredictor perfect(batch.size(), tb.schedule, 5);
  CHECK(eval_loss(harmful_loss(perfect, batch, tb.concepts, tb.schedule, 5), ParamVector::Zero(1)) == 0.0);

  const ParamVector p = f.theta0;
  const double h = eval_loss(harmful_loss(tb.net, batch, tb.concepts, tb.schedule, 5), p);
  const double dl = eval_loss(denoise_loss(tb.net, batch, tb.schedule, 5), p);
  CHECK(h == -dl);
  CHECK(h == doctest::Approx(-direct_denoise(tb.net, p, batch, tb.schedule, 5)).epsilon(1e-12));

  const Graph g = harmful_loss(tb.net, batch, tb.concepts, tb.schedule, 5);
  CHECK(max_rel_error(grad(g, p), fd_grad(g, p, 1e-5), 1e-5) <= 1e-4);

  const auto benign = draw_batch(tb.pool.finetune_pool, 4, 1);
  CHECK_THROWS_AS(harmful_loss(tb.net, benign, tb.concepts, tb.schedule, 5), UsageError);

  // Large parameters push the negated loss far below the clamp.
  const ParamVector wild = 50.0 * random_vector(p.size(), 8);
  CHECK(eval_loss(g, wild) == -10.0);
  CHECK(grad(g, wild).isZero(0.0));
}

TEST_CASE("preserve loss") {
  const Fixture& f = fixture();
  const Testbed& tb = f.testbed;
  const auto& pc = tb.pool.preserve_concepts;
  const Graph g = preserve_loss(tb.net, tb.frozen, pc, tb.schedule, 12);
  CHECK(eval_loss(g, f.theta0) == 0.0);
  CHECK(grad(g, f.theta0).norm() <= 1e-10);

  for (std::uint64_t s = 0; s < 5; ++s) {
    ParamVector delta = random_vector(f.theta0.size(), s);
    delta *= 1e-3 / delta.norm();
    const double v = eval_loss(g, f.theta0 + delta);
    CHECK(v >= 0.0);
    CHECK(v <= 1e-2);
  }
  const ParamVector far = f.theta0 + random_vector(f.theta0.size(), 3, 0.1);
  CHECK(eval_loss(g, far) > 0.0);
  CHECK(max_rel_error(grad(g, far), fd_grad(g, far, 1e-5), 1e-5) <= 1e-4);

  FrozenReference wrong = tb.frozen;
  wrong.params = ParamVector::Zero(5);
  CHECK_THROWS_AS(preserve_loss(tb.net, wrong, pc, tb.schedule, 1), ConfigError);
}

TEST_CASE("fine-tuning loss kinds") {
  const Fixture& f = fixture();
  const Testbed& tb = f.testbed;
  const auto batch = draw_batch(tb.pool.finetune_pool, 10, 2);
  const ParamVector p = f.theta0 + random_vector(f.theta0.size(), 4, 0.01);

  const double standard = eval_loss(ft_loss(tb.net, batch, tb.schedule, LossKind::kStandard, nullptr, 9), p);
  CHECK(standard == eval_loss(denoise_loss(tb.net, batch, tb.schedule, 9), p));
  CHECK(eval_loss(ft_loss(tb.net, batch, tb.schedule, LossKind::kPriorPreservation, &tb.frozen, 9, 0.0), p) ==
        standard);

  // Prior batch recomputed the way the loss draws it.
  Rng rng(derive_seed(9, "prior"));
  std::vector<LabeledSample> prior;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t k = rng.index(tb.frozen.concepts.size());
    const Matrix& gen = tb.frozen.generations[k];
    const auto r = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(gen.rows())));
    prior.push_back({gen.row(r).transpose(), tb.frozen.concepts[k]});
  }
  const double both = direct_denoise(tb.net, p, batch, tb.schedule, 9) +
                      direct_denoise(tb.net, p, prior, tb.schedule, derive_seed(9, "prior/noise"));
  const Graph pp = ft_loss(tb.net, batch, tb.schedule, LossKind::kPriorPreservation, &tb.frozen, 9);
  CHECK(eval_loss(pp, p) == doctest::Approx(both).epsilon(1e-12));
  CHECK(max_rel_error(grad(pp, p), fd_grad(pp, p, 1e-5), 1e-5) <= 1e-4);

  CHECK_THROWS_AS(ft_loss(tb.net, batch, tb.schedule, LossKind::kPriorPreservation, nullptr, 9), UsageError);
}
