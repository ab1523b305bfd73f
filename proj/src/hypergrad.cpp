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

#include "resalign/hypergrad.hpp"

#include <cmath>
#include <limits>

#include "resalign/errors.hpp"
#include "resalign/rng.hpp"

namespace resalign {

std::string to_string(IterationForm form) {
  return form == IterationForm::kIdentityPlusGammaH ? "identity-plus-gamma-h"
                                                    : "gamma-identity-plus-h";
}

IterationForm parse_iteration_form(const std::string& s) {
  if (s == "identity-plus-gamma-h") return IterationForm::kIdentityPlusGammaH;
  if (s == "gamma-identity-plus-h") return IterationForm::kGammaIdentityPlusH;
  throw ConfigError("unknown iteration form '" + s +
                    "' (expected identity-plus-gamma-h or gamma-identity-plus-h)");
}

void HypergradSettings::validate() const {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be positive");
  if (K < 1) throw ConfigError("Richardson iteration count K must be >= 1");
  if (!(residual_tol >= 0.0)) throw ConfigError("residual tolerance must be >= 0");
  if (hvp_batch < 1) throw ConfigError("HVP batch size must be positive");
}

RichardsonSystem RichardsonSystem::make(const ParamVector& g, double gamma, IterationForm form) {
  RichardsonSystem s;
  s.rhs = (1.0 / gamma) * g;
  if (form == IterationForm::kIdentityPlusGammaH) {
    // (H + I/gamma) x = g/gamma, relaxed by gamma: x <- g - gamma H x.
    s.diag = 1.0 / gamma;
    s.hess_coef = 1.0;
    s.relaxation = gamma;
  } else {
    // (I + H/gamma) x = g/gamma, unrelaxed: x <- g/gamma - H x / gamma.
    s.diag = 1.0;
    s.hess_coef = 1.0 / gamma;
    s.relaxation = 1.0;
  }
  s.offset = form == IterationForm::kIdentityPlusGammaH ? g : s.rhs;
  s.step_coef = s.relaxation * s.hess_coef;
  return s;
}

HypergradResult solve_hypergrad(const Graph& harmful, const Graph& finetune,
                                const ParamVector& theta, const ParamVector& theta_ft,
                                const HypergradSettings& settings) {
  settings.validate();
  if (theta.size() != theta_ft.size() || theta_ft.size() != harmful.param_dim() ||
      theta_ft.size() != finetune.param_dim()) {
    throw ConfigError("hypergradient inputs have mismatched dimensions");
  }
  const ParamVector g = grad(harmful, theta_ft);
  if (!g.allFinite()) throw NumericError("harmful_grad", "non-finite harmful-loss gradient at theta_ft");

  const RichardsonSystem sys = RichardsonSystem::make(g, settings.gamma, settings.form);
  const auto d = theta_ft.size();

  const double floor = 64.0 * std::numeric_limits<double>::epsilon() * sys.rhs.norm();
  HypergradResult res;
  ParamVector x = ParamVector::Zero(d);
  ParamVector best_x = x;
  double best_r = std::numeric_limits<double>::infinity();
  for (int k = 0;; ++k) {
    const ParamVector hx = k == 0 ? ParamVector::Zero(d) : hvp(finetune, theta_ft, x);
    const double r = sys.residual(x, hx).norm();
    const bool finite = std::isfinite(r) && x.allFinite();
    if (finite) res.residuals.push_back(r);
    const std::size_t n = res.residuals.size();
    const bool growing = n >= 3 && res.residuals[n - 1] > res.residuals[n - 2] &&
                         res.residuals[n - 2] > res.residuals[n - 3];
    if (!finite || growing) {
      res.diverged = true;
      break;
    }
    if (r < best_r) {
      best_r = r;
      best_x = x;
    }
    // Below the rounding floor the residual only jitters; stop rather than
    // mistake that for growth.
    if (k == settings.K || (k >= 1 && r <= std::max(settings.residual_tol, floor))) {
      best_x = x;
      best_r = r;
      break;
    }
    x = sys.step(hx);
    res.iterations_run = k + 1;
  }
  res.x = std::move(best_x);
  res.residual_norm = best_r;
  return res;
}

HypergradResult get_hypergrad(const MlpDenoiser& net, const ParamVector& theta,
                              const ParamVector& theta_ft, std::span<const LabeledSample> d_ft,
                              std::span<const LabeledSample> harmful_set,
                              const ConceptSet& concepts, const NoiseSchedule& schedule,
                              LossKind kind, const FrozenReference* frozen,
                              const HypergradSettings& settings, std::uint64_t harmful_seed,
                              std::uint64_t hvp_seed, const ObjectiveSettings& objective) {
  if (d_ft.empty()) throw UsageError("hypergradient needs non-empty fine-tuning data");
  const auto hb = draw_batch(harmful_set, objective.batch_size, harmful_seed);
  const Graph h = harmful_loss(net, hb, concepts, schedule, derive_seed(harmful_seed, "noise"),
                               objective.clamp_max);
  const auto fb = draw_batch(d_ft, settings.hvp_batch, hvp_seed);
  const Graph f =
      ft_loss(net, fb, schedule, kind, frozen, derive_seed(hvp_seed, "noise"), objective.prior_weight);
  return solve_hypergrad(h, f, theta, theta_ft, settings);
}

ParamVector dense_solve_oracle(const Matrix& H, const ParamVector& g, double gamma,
                               IterationForm form) {
  if (H.rows() != H.cols() || H.rows() != g.size()) throw OracleError("dense oracle: shape mismatch");
  if (H.rows() > 2000) throw OracleUnsupported("dense oracle limited to dimension <= 2000");
  if (!(gamma > 0.0)) throw OracleError("dense oracle: gamma must be positive");
  const auto d = H.rows();
  const Matrix I = Matrix::Identity(d, d);
  const Matrix A = form == IterationForm::kIdentityPlusGammaH ? Matrix(I + gamma * H)
                                                              : Matrix(gamma * I + H);
  Eigen::FullPivLU<Matrix> lu(A);
  if (!lu.isInvertible()) throw OracleError("dense oracle: singular system");
  return lu.solve(g);
}

Matrix dense_hessian(const Graph& graph, const ParamVector& params) {
  const auto d = params.size();
  Matrix H(d, d);
  ParamVector e = ParamVector::Zero(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    e[i] = 1.0;
    H.col(i) = hvp(graph, params, e);
    e[i] = 0.0;
  }
  return H;
}

ParamVector unrolled_grad_oracle(const ParamVector& theta, std::span<const LabeledSample> d_ft,
                                 const FinetuneConfig& config, const BatchLoss& loss,
                                 const Graph& harmful) {
  if (config.optimizer != OptimizerKind::kSgd || config.parameterization.low_rank) {
    throw OracleUnsupported("unrolled oracle supports full-parameter sgd only");
  }
  if (theta.size() > 2000) throw OracleUnsupported("unrolled oracle limited to dimension <= 2000");
  if (config.steps > 20) throw OracleUnsupported("unrolled oracle limited to 20 steps");
  config.validate();

  // Replays the exact trajectory of Adapter (same shuffle, batches and seeds).
  MinibatchCycle cycle(d_ft, config.batch_size, config.seed);
  std::vector<ParamVector> trajectory;
  std::vector<Graph> graphs;
  ParamVector x = theta;
  for (int s = 0; s < config.steps; ++s) {
    const auto batch = cycle.next();
    graphs.push_back(loss(batch, derive_seed(config.seed, "adapt/step:" + std::to_string(s))));
    trajectory.push_back(x);
    x -= config.lr * grad(graphs.back(), x);
  }
  ParamVector g = grad(harmful, x);
  for (int s = config.steps; s-- > 0;) {
    g -= config.lr * hvp(graphs[static_cast<std::size_t>(s)], trajectory[static_cast<std::size_t>(s)], g);
  }
  return g;
}

}  // namespace resalign
