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

#include "resalign/errors.hpp"
#include "resalign/resalign.hpp"
#include "resalign/rng.hpp"
#include "support.hpp"

using namespace resalign;
using namespace resalign::testing;

namespace {

ResalignSettings small_settings() {
  ResalignSettings s = fixture().config.unlearn;
  s.seed = 31;
  s.outer_steps = 2;
  s.inner_samples = 2;
  s.config_dist.step_choices = {2, 3};
  return s;
}

// A point away from the frozen reference, so the preserve gradient is nonzero.
ParamVector moved_theta() {
  const Fixture& f = fixture();
  return f.theta0 + random_vector(f.theta0.size(), 77, 0.02);
}

}  // namespace

TEST_CASE("settings validation and names") {
  ResalignSettings s;
  s.beta = 1.5;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.alpha = -1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.inner_samples = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.outer_steps = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  for (auto k : {OuterOptimizer::kSgd, OuterOptimizer::kAdam}) CHECK(parse_outer_optimizer(to_string(k)) == k);
  CHECK(outer_seed(1, 2, "harmful") == outer_seed(1, 2, "harmful"));
  CHECK(outer_seed(1, 2, "harmful") != outer_seed(1, 3, "harmful"));
  CHECK(outer_seed(1, 2, "harmful") == derive_seed(1, "unlearn/outer:2/harmful"));
}

TEST_CASE("baseline step with zero preserve weight and no harmful signal") {
  const Fixture& f = fixture();
  Testbed tb = f.testbed;
  // Clamp everything: the harmful loss is then constant at -clamp_max.
  tb.objective.clamp_max = -1e9;
  const ParamVector theta = moved_theta();
  CHECK(baseline_unlearn_step(tb, theta, 0.0, 1e-3, 5, 0) == theta);
}

TEST_CASE("baseline step is the sum of the two term gradients") {
  const Fixture& f = fixture();
  const Testbed& tb = f.testbed;
  const ParamVector theta = moved_theta();
  const double alpha = 0.7, lr = 1e-3;
  const std::uint64_t master = 9;
  const int step = 4;
  OuterState state(OuterOptimizer::kSgd, lr, theta.size());
  StepDiagnostics diag;
  const ParamVector next = baseline_unlearn_step(tb, theta, alpha, state, master, step, &diag);

  const std::uint64_t hseed = outer_seed(master, step, "harmful");
  const auto hb = draw_batch(tb.pool.harmful, tb.objective.batch_size, hseed);
  const Graph h = harmful_loss(tb.net, hb, tb.concepts, tb.schedule, derive_seed(hseed, "noise"));
  const Graph r = preserve_loss(tb.net, tb.frozen, tb.pool.preserve_concepts, tb.schedule,
                                outer_seed(master, step, "preserve"), tb.objective.batch_size);
  const ParamVector g = grad(h, theta) + alpha * grad(r, theta);
  CHECK(rel_error(diag.update, g) <= 1e-12);
  CHECK(next == theta - lr * diag.update);

  // With a huge preserve weight the step points along -grad R.
  const ParamVector big = baseline_unlearn_step(tb, theta, 1e6, lr, master, step);
  CHECK(cosine(big - theta, -grad(r, theta)) >= 0.999);
}

TEST_CASE("beta = 0 is the baseline, bit for bit") {
  const Fixture& f = fixture();
  for (auto opt : {OuterOptimizer::kSgd, OuterOptimizer::kAdam}) {
    ResalignSettings s = small_settings();
    s.optimizer = opt;
    s.beta = 0.0;
    s.outer_steps = 3;
    std::vector<ParamVector> a_traj, b_traj;
    const auto a = run_resalign(f.testbed, f.theta0, s, [&](int, const ParamVector& t) { a_traj.push_back(t); }, 1);
    s.beta = 0.8;
    const auto b = run_baseline(f.testbed, f.theta0, s, [&](int, const ParamVector& t) { b_traj.push_back(t); }, 1);
    CHECK(a.first == b.first);
    CHECK(a_traj == b_traj);
    CHECK(a_traj.size() == 3);
  }
}

TEST_CASE("duplicate inner samples average to one") {
  const Fixture& f = fixture();
  ResalignSettings s = small_settings();
  // lr 0 keeps theta_ft = theta and K = 1 returns the harmful gradient, so
  // every inner sample yields the same vector.
  FinetuneConfig fixed;
  fixed.lr = 0.0;
  fixed.steps = 1;
  s.fixed_config = fixed;
  s.hypergrad.K = 1;
  s.inner_samples = 2;
  OuterState st2(s.optimizer, s.outer_lr, f.theta0.size());
  const auto two = resalign_step(f.testbed, f.theta0, s, 0, st2);
  REQUIRE(two.second.inner.size() == 2);
  CHECK(two.second.inner[0].hypergrad.x == two.second.inner[1].hypergrad.x);
  s.inner_samples = 1;
  OuterState st1(s.optimizer, s.outer_lr, f.theta0.size());
  const auto one = resalign_step(f.testbed, f.theta0, s, 0, st1);
  CHECK(two.second.update == one.second.update);
  CHECK(two.first == one.first);
}

TEST_CASE("update is reconstructed from logged components") {
  const Fixture& f = fixture();
  ResalignSettings s = small_settings();
  s.inner_samples = 3;
  s.optimizer = OuterOptimizer::kSgd;
  // At gamma = 1 the fine-tuning Hessian (eigenvalues well above 1) makes
  // every sample diverge within five iterations, so gamma = 1 runs with a
  // single iteration, which cannot be flagged as divergent.
  const ParamVector theta = moved_theta();
  for (const auto& [gamma, K] : {std::pair{1.0, 1}, std::pair{0.01, 5}}) {
    CAPTURE(gamma);
    s.hypergrad.gamma = gamma;
    s.hypergrad.K = K;
    OuterState state(s.optimizer, s.outer_lr, theta.size());
    const auto [next, d] = resalign_step(f.testbed, theta, s, 1, state);
    ParamVector sum = ParamVector::Zero(theta.size());
    int n = 0;
    for (const InnerSample& in : d.inner) {
      if (in.skipped) continue;
      sum += in.hypergrad.x;
      ++n;
    }
    REQUIRE(n > 0);
    CHECK(d.skipped == 3 - n);
    const ParamVector expect = (1.0 - s.beta) * d.grad_harmful + s.alpha * d.grad_preserve + (s.beta / n) * sum;
    CHECK(rel_error(d.update, expect) <= 1e-10);
    CHECK(rel_error(next, theta - s.outer_lr * d.update) <= 1e-14);
  }
  s.hypergrad = {};
  s.hypergrad.gamma = 1.0;
  OuterState state(s.optimizer, s.outer_lr, theta.size());
  CHECK_THROWS_AS(resalign_step(f.testbed, theta, s, 1, state), OuterStepError);
}

TEST_CASE("run_resalign is deterministic and one step equals resalign_step") {
  const Fixture& f = fixture();
  ResalignSettings s = small_settings();
  const auto a = run_resalign(f.testbed, f.theta0, s);
  const auto b = run_resalign(f.testbed, f.theta0, s);
  CHECK(a.first == b.first);
  CHECK(a.second.harmful_loss == b.second.harmful_loss);
  CHECK(a.second.harmful_loss.size() == 2);
  CHECK(a.second.mean_residual.size() == 2);

  s.outer_steps = 1;
  const auto one = run_resalign(f.testbed, f.theta0, s);
  OuterState state(s.optimizer, s.outer_lr, f.theta0.size());
  CHECK(one.first == resalign_step(f.testbed, f.theta0, s, 0, state).first);

  s.threads = 2;
  s.outer_steps = 2;
  CHECK(run_resalign(f.testbed, f.theta0, s).first == a.first);
}

TEST_CASE("all inner samples diverging aborts with the step index") {
  const Fixture& f = fixture();
  ResalignSettings s = small_settings();
  s.hypergrad.gamma = 1e4;
  s.hypergrad.K = 8;
  try {
    run_resalign(f.testbed, f.theta0, s);
    FAIL("expected an outer step error");
  } catch (const OuterStepError& e) {
    CHECK(e.step() == 0);
  }
}
