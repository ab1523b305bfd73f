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

// Measurements: harmful fraction of generations, resilience under attack
// fine-tuning, contamination sweeps, and curvature estimates of the harmful
// loss (Hutchinson trace and the second-order Taylor gap).

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "resalign/adapt.hpp"
#include "resalign/autodiff.hpp"
#include "resalign/testbed.hpp"

namespace resalign {

struct HarmfulnessReport {
  double harmful_fraction = 0.0;
  double harmful_loss_heldout = 0.0;
  std::size_t n_samples = 0;  // per harmful concept
  std::uint64_t seed = 0;
};

struct EvalSettings {
  std::size_t n_samples = 1000;
  double radius_stds = 3.0;
  std::uint64_t heldout_noise_seed = 0x5eed;
  int threads = 1;
};

// Draws n points for a concept.
using Sampler = std::function<Matrix(int concept_id, std::size_t n, std::uint64_t seed)>;

// Share of points whose nearest declared mode (over all concepts) is harmful
// and lies within radius. Draws n per harmful concept.
double classified_fraction(const ConceptSet& concepts, const Sampler& sampler, std::size_t n,
                           std::uint64_t seed, double radius);

// harmful_loss_heldout is left at 0 for an arbitrary sampler.
HarmfulnessReport harmful_fraction(const ConceptSet& concepts, const Sampler& sampler,
                                   std::size_t n_samples, std::uint64_t seed,
                                   double radius_stds = 3.0);

HarmfulnessReport harmful_fraction(const Testbed& testbed, const ParamVector& theta,
                                   std::uint64_t seed, const EvalSettings& settings = {});

// Plain denoising loss over the whole held-out harmful set.
double heldout_harmful_loss(const Testbed& testbed, const ParamVector& theta,
                            std::uint64_t noise_seed);

struct CurvePoint {
  int step = 0;
  HarmfulnessReport report;
};

struct ResilienceCurve {
  std::vector<CurvePoint> points;
  bool truncated = false;  // adaptation diverged before the last checkpoint
  int diverged_step = -1;
};

// Fine-tunes with the attack recipe, evaluating at each checkpoint (step
// counts, ascending). Evaluation at every checkpoint uses the same seed.
ResilienceCurve resilience_curve(const Testbed& testbed, const ParamVector& theta,
                                 std::span<const LabeledSample> attack_data,
                                 const FinetuneConfig& attack, std::span<const int> checkpoints,
                                 std::uint64_t seed, const EvalSettings& settings = {});

// Trapezoidal area under fraction-vs-step.
double curve_area(const ResilienceCurve& curve);

// Attack set of the benign set's size with round(ratio * n) harmful samples.
// Ratio 0 returns the benign set unchanged.
std::vector<LabeledSample> mix_attack_set(std::span<const LabeledSample> benign,
                                          std::span<const LabeledSample> harmful, double ratio,
                                          std::uint64_t seed);

struct SweepPoint {
  double ratio = 0.0;
  HarmfulnessReport report;
  bool diverged = false;
};

std::vector<SweepPoint> contamination_sweep(const Testbed& testbed, const ParamVector& theta,
                                            std::span<const LabeledSample> benign,
                                            std::span<const LabeledSample> harmful,
                                            std::span<const double> ratios,
                                            const FinetuneConfig& attack, std::uint64_t seed,
                                            const EvalSettings& settings = {});

struct TraceEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  int n_probes = 0;
};

// Mean of z' H z over Rademacher probes.
TraceEstimate hutchinson_trace(const Graph& loss, const ParamVector& params, int n_probes,
                               std::uint64_t seed);

struct TaylorCheckResult {
  double lhs = 0.0;
  double lhs_std_error = 0.0;
  double rhs = 0.0;
  double rhs_std_error = 0.0;
  double sigma = 0.0;
  Eigen::Index d = 0;
  int n_draws = 0;
};

// lhs: Monte-Carlo mean of L(theta + sigma z) - L(theta) with z ~ N(0, I/d),
// drawn in antithetic pairs. rhs: sigma^2 / (2d) times a Hutchinson trace.
TaylorCheckResult taylor_gap_check(const Graph& loss, const ParamVector& params, double sigma,
                                   int n_draws, std::uint64_t seed, int n_probes = 64);

// Fixed harmful-loss graph used for curvature measurements: a batch from the
// held-out harmful set with fixed noise.
Graph curvature_loss(const Testbed& testbed, std::size_t batch_size, std::uint64_t seed);

}  // namespace resalign
