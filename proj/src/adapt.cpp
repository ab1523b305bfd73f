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

#include "resalign/adapt.hpp"

#include <cmath>
#include <cstdio>

#include "resalign/errors.hpp"
#include "resalign/rng.hpp"

namespace resalign {

// ---------------------------------------------------------------------------
// Configs

void FinetuneConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("fine-tune lr must be finite and >= 0");
  if (steps < 0) throw ConfigError("fine-tune steps must be >= 0");
  if (batch_size < 1) throw ConfigError("fine-tune batch size must be positive");
  if (parameterization.low_rank && parameterization.rank < 1) {
    throw ConfigError("low-rank adaptation needs rank >= 1");
  }
}

std::string FinetuneConfig::describe() const {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%s lr=%g steps=%d loss=%s param=%s batch=%zu",
                to_string(optimizer).c_str(), lr, steps, to_string(loss_kind).c_str(),
                parameterization.low_rank
                    ? ("low-rank(" + std::to_string(parameterization.rank) + ")").c_str()
                    : "full",
                batch_size);
  return buf;
}

void ConfigDistribution::validate() const {
  if (lr_choices.empty() || step_choices.empty() || loss_choices.empty() ||
      param_choices.empty() || optimizer_choices.empty()) {
    throw ConfigError("every fine-tune configuration factor needs at least one choice");
  }
  if (batch_size < 1) throw ConfigError("simulated fine-tune batch size must be positive");
}

FinetuneConfig sample_config(const ConfigDistribution& dist, std::uint64_t seed) {
  dist.validate();
  Rng rng(seed);
  FinetuneConfig c;
  c.lr = dist.lr_choices[rng.index(dist.lr_choices.size())];
  c.steps = dist.step_choices[rng.index(dist.step_choices.size())];
  c.loss_kind = dist.loss_choices[rng.index(dist.loss_choices.size())];
  c.parameterization = dist.param_choices[rng.index(dist.param_choices.size())];
  c.optimizer = dist.optimizer_choices[rng.index(dist.optimizer_choices.size())];
  c.batch_size = dist.batch_size;
  c.seed = derive_seed(seed, "config/seed");
  return c;
}

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kAdam: return "adam";
    case OptimizerKind::kAdamW: return "adamw";
  }
  return "?";
}

std::string to_string(LossKind kind) {
  return kind == LossKind::kStandard ? "standard" : "prior-preservation";
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "adamw") return OptimizerKind::kAdamW;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd, adam or adamw)");
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "standard") return LossKind::kStandard;
  if (s == "prior-preservation") return LossKind::kPriorPreservation;
  throw ConfigError("unknown fine-tune loss '" + s + "' (expected standard or prior-preservation)");
}

// ---------------------------------------------------------------------------
// Optimizer

Optimizer::Optimizer(OptimizerKind kind, double lr, Eigen::Index dim, OptimizerHyper hyper)
    : kind_(kind), lr_(lr), hyper_(hyper) {
  if (kind_ != OptimizerKind::kSgd) {
    m_ = ParamVector::Zero(dim);
    v_ = ParamVector::Zero(dim);
  }
}

void Optimizer::step(ParamVector& x, const ParamVector& g) {
  if (kind_ == OptimizerKind::kSgd) {
    x -= lr_ * g;
    return;
  }
  ++t_;
  if (kind_ == OptimizerKind::kAdamW) x *= 1.0 - lr_ * hyper_.weight_decay;
  m_ = hyper_.beta1 * m_ + (1.0 - hyper_.beta1) * g;
  v_ = hyper_.beta2 * v_ + (1.0 - hyper_.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
  x.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + hyper_.eps);
}

// ---------------------------------------------------------------------------
// Minibatches

MinibatchCycle::MinibatchCycle(std::span<const LabeledSample> data, std::size_t batch_size,
                               std::uint64_t seed)
    : order_(data.begin(), data.end()), batch_size_(batch_size) {
  if (order_.empty()) throw UsageError("fine-tuning data must be non-empty");
  if (batch_size_ < 1) throw UsageError("batch size must be positive");
  Rng rng(derive_seed(seed, "adapt/shuffle"));
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng.index(i)]);
}

std::vector<LabeledSample> MinibatchCycle::next() {
  std::vector<LabeledSample> out;
  out.reserve(batch_size_);
  for (std::size_t i = 0; i < batch_size_; ++i) {
    out.push_back(order_[cursor_]);
    cursor_ = (cursor_ + 1) % order_.size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adaptation

LowRankBlocks hidden_weight_blocks(const Architecture& arch) {
  LowRankBlocks blocks;
  const auto layers = arch.layers();
  for (std::size_t k = 0; k + 1 < layers.size(); ++k) blocks.push_back(layers[k].weight);
  return blocks;
}

namespace {

Eigen::Index factor_size(const LowRankBlocks& blocks, int rank) {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += rank * (b.rows + b.cols);
  return n;
}

}  // namespace

Adapter::Adapter(ParamVector theta, std::span<const LabeledSample> d_ft, FinetuneConfig config,
                 BatchLoss loss, LowRankBlocks blocks)
    : base_(std::move(theta)),
      config_(config),
      loss_(std::move(loss)),
      blocks_(std::move(blocks)),
      cycle_(d_ft, config.batch_size, config.seed),
      opt_(config.optimizer, config.lr,
           config.parameterization.low_rank ? factor_size(blocks_, config.parameterization.rank)
                                            : base_.size()) {
  config_.validate();
  if (config_.parameterization.low_rank) {
    if (blocks_.empty()) throw ConfigError("low-rank adaptation needs designated weight blocks");
    const int r = config_.parameterization.rank;
    factors_ = ParamVector::Zero(factor_size(blocks_, r));
    Rng rng(derive_seed(config_.seed, "adapt/lowrank-init"));
    Eigen::Index off = 0;
    for (const auto& b : blocks_) {
      if (b.offset + b.size() > base_.size()) throw ConfigError("low-rank block exceeds parameters");
      for (Eigen::Index i = 0; i < b.rows * r; ++i) factors_[off + i] = 1e-3 * rng.normal();
      off += r * (b.rows + b.cols);  // A stays zero
    }
  } else {
    theta_ = base_;
  }
}

ParamVector Adapter::expand() const {
  ParamVector out = base_;
  const int r = config_.parameterization.rank;
  Eigen::Index off = 0;
  for (const auto& b : blocks_) {
    Eigen::Map<const Matrix> B(factors_.data() + off, b.rows, r);
    Eigen::Map<const Matrix> A(factors_.data() + off + b.rows * r, r, b.cols);
    Eigen::Map<Matrix>(out.data() + b.offset, b.rows, b.cols) += B * A;
    off += r * (b.rows + b.cols);
  }
  return out;
}

ParamVector Adapter::params() const {
  return config_.parameterization.low_rank ? expand() : theta_;
}

void Adapter::run(int steps) {
  const int target = std::min(config_.steps, steps_done_ + std::max(steps, 0));
  const bool low_rank = config_.parameterization.low_rank;
  const int r = config_.parameterization.rank;
  while (steps_done_ < target) {
    const auto s = static_cast<std::size_t>(steps_done_);
    const std::vector<LabeledSample> batch = cycle_.next();
    const Graph graph = loss_(batch, derive_seed(config_.seed, "adapt/step:" + std::to_string(s)));
    ValueAndGrad vg;
    try {
      vg = value_and_grad(graph, low_rank ? expand() : theta_);
    } catch (const NumericError& e) {
      throw AdaptationDiverged(s, "adaptation diverged at step " + std::to_string(s) + ": " + e.what());
    }
    if (!std::isfinite(vg.value) || !vg.grad.allFinite()) {
      throw AdaptationDiverged(s, "adaptation diverged at step " + std::to_string(s) +
                                      ": non-finite loss or gradient");
    }
    losses_.push_back(vg.value);
    if (low_rank) {
      ParamVector gf(factors_.size());
      Eigen::Index off = 0;
      for (const auto& b : blocks_) {
        Eigen::Map<const Matrix> G(vg.grad.data() + b.offset, b.rows, b.cols);
        Eigen::Map<const Matrix> B(factors_.data() + off, b.rows, r);
        Eigen::Map<const Matrix> A(factors_.data() + off + b.rows * r, r, b.cols);
        Eigen::Map<Matrix>(gf.data() + off, b.rows, r) = G * A.transpose();
        Eigen::Map<Matrix>(gf.data() + off + b.rows * r, r, b.cols) = B.transpose() * G;
        off += r * (b.rows + b.cols);
      }
      opt_.step(factors_, gf);
    } else {
      opt_.step(theta_, vg.grad);
    }
    ++steps_done_;
  }
}

ParamVector adapt(const ParamVector& theta, std::span<const LabeledSample> d_ft,
                  const FinetuneConfig& config, const BatchLoss& loss, const LowRankBlocks& blocks) {
  Adapter a(theta, d_ft, config, loss, blocks);
  a.run_to_end();
  return a.params();
}

BatchLoss make_ft_loss(const MlpDenoiser& net, const NoiseSchedule& schedule, LossKind kind,
                       const FrozenReference* frozen, double prior_weight) {
  return [net, schedule, kind, frozen, prior_weight](std::span<const LabeledSample> batch,
                                                     std::uint64_t seed) {
    return ft_loss(net, batch, schedule, kind, frozen, seed, prior_weight);
  };
}

ParamVector adapt(const MlpDenoiser& net, const ParamVector& theta,
                  std::span<const LabeledSample> d_ft, const FinetuneConfig& config,
                  const NoiseSchedule& schedule, const FrozenReference* frozen) {
  if (theta.size() != net.param_dim()) {
    throw ConfigError("parameter vector does not match the denoiser architecture");
  }
  return adapt(theta, d_ft, config, make_ft_loss(net, schedule, config.loss_kind, frozen),
               hidden_weight_blocks(net.arch()));
}

}  // namespace resalign
