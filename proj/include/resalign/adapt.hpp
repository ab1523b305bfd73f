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

// Simulated downstream fine-tuning: optimizers, low-rank parameterisation,
// cyclic minibatching, and sampling of fine-tuning recipes.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "resalign/autodiff.hpp"
#include "resalign/diffusion.hpp"
#include "resalign/objectives.hpp"

namespace resalign {

enum class OptimizerKind { kSgd, kAdam, kAdamW };

struct Parameterization {
  bool low_rank = false;
  int rank = 4;

  bool operator==(const Parameterization&) const = default;
};

struct FinetuneConfig {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr = 1e-5;
  int steps = 200;
  LossKind loss_kind = LossKind::kStandard;
  Parameterization parameterization;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;

  void validate() const;
  std::string describe() const;
  bool operator==(const FinetuneConfig&) const = default;
};

struct ConfigDistribution {
  std::vector<double> lr_choices = {1e-4, 1e-5, 1e-6};
  std::vector<int> step_choices = {5, 10, 20, 30};
  std::vector<LossKind> loss_choices = {LossKind::kStandard, LossKind::kPriorPreservation};
  std::vector<Parameterization> param_choices = {{false, 4}, {true, 4}};
  std::vector<OptimizerKind> optimizer_choices = {OptimizerKind::kSgd, OptimizerKind::kAdam};
  std::size_t batch_size = 10;

  void validate() const;
};

// Independent uniform draw per factor; the returned config's own seed is
// derived from `seed` as well.
FinetuneConfig sample_config(const ConfigDistribution& dist, std::uint64_t seed);

std::string to_string(OptimizerKind kind);
std::string to_string(LossKind kind);
OptimizerKind parse_optimizer(const std::string& s);
LossKind parse_loss_kind(const std::string& s);

struct OptimizerHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // adamw only
};

// Optimizer with fresh state; one instance per adaptation run.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, Eigen::Index dim, OptimizerHyper hyper = {});
  void step(ParamVector& x, const ParamVector& g);

 private:
  OptimizerKind kind_;
  double lr_;
  OptimizerHyper hyper_;
  ParamVector m_;
  ParamVector v_;
  long t_ = 0;
};

// Fine-tuning loss for one minibatch.
using BatchLoss =
    std::function<Graph(std::span<const LabeledSample> batch, std::uint64_t seed)>;

// Minibatch schedule: one seeded shuffle of the data, then cyclic slices.
class MinibatchCycle {
 public:
  MinibatchCycle(std::span<const LabeledSample> data, std::size_t batch_size, std::uint64_t seed);
  std::vector<LabeledSample> next();

 private:
  std::vector<LabeledSample> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
};

// Weight blocks W (rows x cols, column-major) that receive W + B A updates.
using LowRankBlocks = std::vector<Architecture::Block>;

LowRankBlocks hidden_weight_blocks(const Architecture& arch);

// Resumable adaptation. Optimizer state lives as long as the object.
class Adapter {
 public:
  Adapter(ParamVector theta, std::span<const LabeledSample> d_ft, FinetuneConfig config,
          BatchLoss loss, LowRankBlocks blocks = {});

  // Runs up to `steps` further optimizer steps (not beyond config.steps).
  void run(int steps);
  void run_to_end() { run(config_.steps - steps_done_); }

  int steps_done() const noexcept { return steps_done_; }
  const FinetuneConfig& config() const noexcept { return config_; }
  // Current fine-tuned parameters (base plus expanded low-rank delta).
  ParamVector params() const;

  // Per-step loss values seen so far.
  const std::vector<double>& losses() const noexcept { return losses_; }

 private:
  ParamVector expand() const;

  ParamVector base_;
  ParamVector theta_;   // full-parameter mode
  ParamVector factors_; // low-rank mode: [B_1 A_1 | B_2 A_2 | ...]
  FinetuneConfig config_;
  BatchLoss loss_;
  LowRankBlocks blocks_;
  MinibatchCycle cycle_;
  Optimizer opt_;
  int steps_done_ = 0;
  std::vector<double> losses_;
};

ParamVector adapt(const ParamVector& theta, std::span<const LabeledSample> d_ft,
                  const FinetuneConfig& config, const BatchLoss& loss,
                  const LowRankBlocks& blocks = {});

// ft_loss of the given kind on the toy denoiser. The denoiser and schedule
// are copied into the closure; `frozen` must outlive it.
BatchLoss make_ft_loss(const MlpDenoiser& net, const NoiseSchedule& schedule, LossKind kind,
                       const FrozenReference* frozen, double prior_weight = 1.0);

ParamVector adapt(const MlpDenoiser& net, const ParamVector& theta,
                  std::span<const LabeledSample> d_ft, const FinetuneConfig& config,
                  const NoiseSchedule& schedule, const FrozenReference* frozen);

}  // namespace resalign
