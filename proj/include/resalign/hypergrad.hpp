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

// Implicit hypergradient of the harmful loss through a proximal (Moreau
// envelope) model of fine-tuning.
//
// The fine-tuned point satisfies grad L_ft(theta_ft) + (theta_ft - theta)/gamma = 0.
// Differentiating through that condition gives
//
//     (H + I/gamma) x = g/gamma,   H = hess L_ft(theta_ft),  g = grad L_harmful(theta_ft)
//
// which is solved matrix-free by Richardson iteration from x = 0 using one
// Hessian-vector product per step. Two independent references are provided:
// a dense factorisation of the same system and exact differentiation through
// an unrolled SGD trajectory.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "resalign/adapt.hpp"
#include "resalign/autodiff.hpp"
#include "resalign/diffusion.hpp"
#include "resalign/objectives.hpp"

namespace resalign {

enum class IterationForm {
  // x <- g - gamma H x; fixed point (I + gamma H) x = g.
  kIdentityPlusGammaH,
  // x <- g/gamma - H x / gamma; fixed point (gamma I + H) x = g. Agrees with
  // the form above only at gamma = 1.
  kGammaIdentityPlusH,
};

std::string to_string(IterationForm form);
IterationForm parse_iteration_form(const std::string& s);

struct HypergradSettings {
  double gamma = 1.0;
  int K = 5;
  IterationForm form = IterationForm::kIdentityPlusGammaH;
  double residual_tol = 0.0;
  std::size_t hvp_batch = 16;

  void validate() const;
};

struct HypergradResult {
  ParamVector x;
  double residual_norm = 0.0;          // ||A x - b|| at the returned x
  std::vector<double> residuals;       // residual of x^(0), x^(1), ...
  int iterations_run = 0;
  bool diverged = false;
};

// The linear system behind a given iteration form, with all 1/gamma scaling
// kept in one place: A = diag I + hess_coef H and b = g/gamma. The Richardson
// step x <- x + relaxation (b - A x) is applied in the equivalent form
// x <- offset - step_coef H x, so that H = 0 returns g exactly.
struct RichardsonSystem {
  double diag = 1.0;
  double hess_coef = 1.0;
  double relaxation = 1.0;
  ParamVector rhs;
  ParamVector offset;  // relaxation * rhs
  double step_coef = 1.0;  // relaxation * hess_coef

  static RichardsonSystem make(const ParamVector& g, double gamma, IterationForm form);

  ParamVector residual(const ParamVector& x, const ParamVector& hx) const {
    return diag * x + hess_coef * hx - rhs;
  }
  ParamVector step(const ParamVector& hx) const { return offset - step_coef * hx; }
};

// Core solver over explicit graphs: `harmful` is the outer loss (its gradient
// is taken at theta_ft), `finetune` supplies the Hessian at theta_ft.
HypergradResult solve_hypergrad(const Graph& harmful, const Graph& finetune,
                                const ParamVector& theta, const ParamVector& theta_ft,
                                const HypergradSettings& settings);

// Toy-denoiser form: builds the harmful loss at theta_ft on a seeded batch of
// the harmful set, and the fine-tuning loss (of `kind`) on a fixed seeded
// batch of d_ft for the Hessian.
HypergradResult get_hypergrad(const MlpDenoiser& net, const ParamVector& theta,
                              const ParamVector& theta_ft, std::span<const LabeledSample> d_ft,
                              std::span<const LabeledSample> harmful_set,
                              const ConceptSet& concepts, const NoiseSchedule& schedule,
                              LossKind kind, const FrozenReference* frozen,
                              const HypergradSettings& settings, std::uint64_t harmful_seed,
                              std::uint64_t hvp_seed, const ObjectiveSettings& objective = {});

// Direct solve of (I + gamma H) x = g (or (gamma I + H) x = g for the other
// form). Oracle scale only.
ParamVector dense_solve_oracle(const Matrix& H, const ParamVector& g, double gamma,
                               IterationForm form = IterationForm::kIdentityPlusGammaH);

// Dense Hessian assembled column by column from Hessian-vector products.
Matrix dense_hessian(const Graph& graph, const ParamVector& params);

// Exact gradient of harmful(Adapt(theta)) for full-parameter SGD, by reverse
// accumulation of (I - lr H_t) over the stored trajectory.
ParamVector unrolled_grad_oracle(const ParamVector& theta, std::span<const LabeledSample> d_ft,
                                 const FinetuneConfig& config, const BatchLoss& loss,
                                 const Graph& harmful);

}  // namespace resalign
