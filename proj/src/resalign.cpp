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

#include "resalign/resalign.hpp"

#include <future>
#include <string>

#include "resalign/errors.hpp"
#include "resalign/rng.hpp"

namespace resalign {

std::string to_string(OuterOptimizer kind) { return kind == OuterOptimizer::kSgd ? "sgd" : "adam"; }

OuterOptimizer parse_outer_optimizer(const std::string& s) {
  if (s == "sgd") return OuterOptimizer::kSgd;
  if (s == "adam") return OuterOptimizer::kAdam;
  throw ConfigError("unknown outer optimizer '" + s + "' (expected sgd or adam)");
}

void ResalignSettings::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
  if (!(outer_lr >= 0.0)) throw ConfigError("outer learning rate must be >= 0");
  if (outer_steps < 1) throw ConfigError("outer steps must be >= 1");
  if (inner_samples < 1) throw ConfigError("inner samples must be >= 1");
  if (dft_size < 1) throw ConfigError("simulated fine-tune subset size must be positive");
  if (threads < 1) throw ConfigError("thread count must be positive");
  hypergrad.validate();
  config_dist.validate();
  if (fixed_config) fixed_config->validate();
}

OuterState::OuterState(OuterOptimizer kind, double lr, Eigen::Index dim)
    : opt_(kind == OuterOptimizer::kSgd ? OptimizerKind::kSgd : OptimizerKind::kAdam, lr, dim) {}

void OuterState::apply(ParamVector& theta, const ParamVector& update) { opt_.step(theta, update); }

std::uint64_t outer_seed(std::uint64_t master, int step, const std::string& leaf) {
  return derive_seed(master, "unlearn/outer:" + std::to_string(step) + "/" + leaf);
}

namespace {

InnerSample run_inner(const Testbed& tb, const ParamVector& theta, const ResalignSettings& s,
                      int step, int j) {
  const std::uint64_t jseed = outer_seed(s.seed, step, "inner:" + std::to_string(j));
  const auto d_ft = draw_batch(tb.pool.finetune_pool, s.dft_size, derive_seed(jseed, "data"));
  InnerSample out;
  if (s.fixed_config) {
    out.config = *s.fixed_config;
    out.config.seed = derive_seed(jseed, "config/seed");
  } else {
    out.config = sample_config(s.config_dist, derive_seed(jseed, "config"));
  }
  ParamVector theta_ft;
  try {
    theta_ft = adapt(tb.net, theta, d_ft, out.config, tb.schedule, &tb.frozen);
  } catch (const AdaptationDiverged&) {
    out.skipped = true;
    return out;
  }
  out.hypergrad = get_hypergrad(tb.net, theta, theta_ft, d_ft, tb.pool.harmful, tb.concepts,
                                tb.schedule, out.config.loss_kind, &tb.frozen, s.hypergrad,
                                outer_seed(s.seed, step, "harmful"), derive_seed(jseed, "hvp"),
                                tb.objective);
  out.skipped = out.hypergrad.diverged;
  return out;
}

// Shared by the baseline and the resilient step; beta = 0 skips the inner loop.
ParamVector outer_step(const Testbed& tb, const ParamVector& theta, double alpha, double beta,
                       const ResalignSettings* settings, std::uint64_t master, int step,
                       OuterState& state, StepDiagnostics& diag) {
  if (theta.size() != tb.net.param_dim()) {
    throw ConfigError("parameter vector does not match the denoiser architecture");
  }
  const std::uint64_t hseed = outer_seed(master, step, "harmful");
  const auto hb = draw_batch(tb.pool.harmful, tb.objective.batch_size, hseed);
  const Graph h = harmful_loss(tb.net, hb, tb.concepts, tb.schedule, derive_seed(hseed, "noise"),
                               tb.objective.clamp_max);
  const Graph r = preserve_loss(tb.net, tb.frozen, tb.pool.preserve_concepts, tb.schedule,
                                outer_seed(master, step, "preserve"), tb.objective.batch_size);
  ValueAndGrad vh = value_and_grad(h, theta);
  ValueAndGrad vr = value_and_grad(r, theta);
  diag.harmful_loss = vh.value;
  diag.preserve_loss = vr.value;
  ParamVector update = (1.0 - beta) * vh.grad + alpha * vr.grad;
  diag.grad_harmful = std::move(vh.grad);
  diag.grad_preserve = std::move(vr.grad);

  if (beta > 0.0) {
    const int J = settings->inner_samples;
    diag.inner.resize(static_cast<std::size_t>(J));
    if (settings->threads <= 1) {
      for (int j = 0; j < J; ++j) diag.inner[static_cast<std::size_t>(j)] = run_inner(tb, theta, *settings, step, j);
    } else {
      for (int j0 = 0; j0 < J; j0 += settings->threads) {
        std::vector<std::future<InnerSample>> futs;
        for (int j = j0; j < std::min(J, j0 + settings->threads); ++j) {
          futs.push_back(std::async(std::launch::async, run_inner, std::cref(tb), std::cref(theta),
                                    std::cref(*settings), step, j));
        }
        for (int j = j0; j < std::min(J, j0 + settings->threads); ++j) {
          diag.inner[static_cast<std::size_t>(j)] = futs[static_cast<std::size_t>(j - j0)].get();
        }
      }
    }
    // Ordered reduction over surviving samples.
    ParamVector sum = ParamVector::Zero(theta.size());
    int survivors = 0;
    double residual = 0.0;
    for (const InnerSample& s : diag.inner) {
      if (s.skipped) continue;
      sum += s.hypergrad.x;
      residual += s.hypergrad.residual_norm;
      ++survivors;
    }
    diag.skipped = J - survivors;
    if (survivors == 0) {
      throw OuterStepError(static_cast<std::size_t>(step),
                           "all inner samples diverged at outer step " + std::to_string(step));
    }
    diag.mean_residual = residual / survivors;
    update += (beta / survivors) * sum;
  }
  if (!update.allFinite()) {
    throw OuterStepError(static_cast<std::size_t>(step),
                         "non-finite outer update at step " + std::to_string(step));
  }
  ParamVector next = theta;
  state.apply(next, update);
  diag.update = std::move(update);
  return next;
}

}  // namespace

ParamVector baseline_unlearn_step(const Testbed& testbed, const ParamVector& theta, double alpha,
                                  OuterState& state, std::uint64_t master_seed, int step_index,
                                  StepDiagnostics* diag) {
  StepDiagnostics local;
  return outer_step(testbed, theta, alpha, 0.0, nullptr, master_seed, step_index, state,
                    diag ? *diag : local);
}

ParamVector baseline_unlearn_step(const Testbed& testbed, const ParamVector& theta, double alpha,
                                  double lr, std::uint64_t master_seed, int step_index) {
  OuterState state(OuterOptimizer::kSgd, lr, theta.size());
  return baseline_unlearn_step(testbed, theta, alpha, state, master_seed, step_index);
}

std::pair<ParamVector, StepDiagnostics> resalign_step(const Testbed& testbed,
                                                      const ParamVector& theta,
                                                      const ResalignSettings& settings,
                                                      int step_index, OuterState& state) {
  settings.validate();
  StepDiagnostics diag;
  ParamVector next = outer_step(testbed, theta, settings.alpha, settings.beta, &settings,
                                settings.seed, step_index, state, diag);
  return {std::move(next), std::move(diag)};
}

std::pair<ParamVector, UnlearnRunRecord> run_resalign(const Testbed& testbed,
                                                      const ParamVector& theta0,
                                                      const ResalignSettings& settings,
                                                      const CheckpointHook& hook,
                                                      int checkpoint_every) {
  settings.validate();
  OuterState state(settings.optimizer, settings.outer_lr, theta0.size());
  UnlearnRunRecord rec;
  ParamVector theta = theta0;
  for (int i = 0; i < settings.outer_steps; ++i) {
    StepDiagnostics diag;
    try {
      theta = outer_step(testbed, theta, settings.alpha, settings.beta, &settings, settings.seed, i,
                         state, diag);
    } catch (const OuterStepError&) {
      throw;
    } catch (const Error& e) {
      throw OuterStepError(static_cast<std::size_t>(i),
                           "outer step " + std::to_string(i) + " failed: " + e.what());
    }
    rec.harmful_loss.push_back(diag.harmful_loss);
    rec.preserve_loss.push_back(diag.preserve_loss);
    rec.mean_residual.push_back(diag.mean_residual);
    rec.skipped.push_back(diag.skipped);
    if (hook && checkpoint_every > 0 && (i + 1) % checkpoint_every == 0) hook(i + 1, theta);
  }
  rec.final_params = theta;
  return {std::move(theta), std::move(rec)};
}

std::pair<ParamVector, UnlearnRunRecord> run_baseline(const Testbed& testbed,
                                                      const ParamVector& theta0,
                                                      const ResalignSettings& settings,
                                                      const CheckpointHook& hook,
                                                      int checkpoint_every) {
  ResalignSettings s = settings;
  s.beta = 0.0;
  return run_resalign(testbed, theta0, s, hook, checkpoint_every);
}

}  // namespace resalign
