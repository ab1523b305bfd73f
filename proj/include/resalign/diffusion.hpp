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

// Toy conditional diffusion testbed: concept-labelled 2-D Gaussian mixtures,
// a variance-preserving noise schedule, an epsilon-prediction MLP and its
// denoising loss, and an ancestral sampler.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "resalign/autodiff.hpp"

namespace resalign {

using Point = Eigen::Vector2d;

// Per-timestep coefficients, stored for t = 1..steps at index t-1.
struct NoiseSchedule {
  int steps = 0;
  double beta_min = 0.0;
  double beta_max = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;
  std::vector<double> alpha;
  std::vector<double> sigma;
  std::vector<double> weight;

  double alpha_at(int t) const { return alpha.at(static_cast<std::size_t>(t - 1)); }
  double sigma_at(int t) const { return sigma.at(static_cast<std::size_t>(t - 1)); }
  double beta_at(int t) const { return beta.at(static_cast<std::size_t>(t - 1)); }
  double weight_at(int t) const { return weight.at(static_cast<std::size_t>(t - 1)); }
  double alpha_bar_at(int t) const { return alpha_bar.at(static_cast<std::size_t>(t - 1)); }

  std::string descriptor() const;
};

// Linearly spaced betas in [beta_min, beta_max]; alpha_t = sqrt(prod(1 - beta)),
// sigma_t = sqrt(1 - alpha_t^2), w_t = 1.
NoiseSchedule make_schedule(int steps, double beta_min, double beta_max);

// alpha_t x + sigma_t eps.
Point forward_noise(const Point& x, int t, const Point& eps, const NoiseSchedule& schedule);

struct ConceptSpec {
  int id = 0;
  std::vector<Point> mode_centers;
  std::vector<double> mode_weights;
  bool is_harmful = false;
};

struct LabeledSample {
  Point x = Point::Zero();
  int concept_id = 0;
};

class ConceptSet {
 public:
  ConceptSet(std::vector<ConceptSpec> concepts, double mode_std);

  const std::vector<ConceptSpec>& concepts() const noexcept { return concepts_; }
  double mode_std() const noexcept { return mode_std_; }
  const ConceptSpec& find(int id) const;
  bool contains(int id) const noexcept;
  bool is_harmful(int id) const { return find(id).is_harmful; }
  std::vector<int> harmful_ids() const;
  std::vector<int> benign_ids() const;
  int size() const noexcept { return static_cast<int>(concepts_.size()); }

  std::vector<LabeledSample> draw(int concept_id, std::size_t n, std::uint64_t seed) const;

 private:
  std::vector<ConceptSpec> concepts_;
  double mode_std_;
};

// Benign concepts take ids [0, benign), harmful ones [benign, benign + harmful).
// Mode counts cycle through 1..3; all modes sit evenly on a ring and are handed
// out round-robin so neighbouring slots belong to different concepts.
ConceptSet default_concepts(int benign = 8, int harmful = 2, double radius = 1.0,
                            double mode_std = 0.05);

// Text table with header "x0,x1,concept_id", one sample per row.
void write_samples(std::ostream& out, std::span<const LabeledSample> samples);
std::vector<LabeledSample> read_samples(std::istream& in);

enum class Activation { kSilu, kTanh };

// Layer widths and embedding sizes of the epsilon-prediction MLP. Parameters
// are laid out as [concept table | W1 b1 | W2 b2 | ... | Wout bout], each
// weight column-major with shape out x in.
struct Architecture {
  int n_concepts = 10;
  int time_embed = 8;
  int concept_embed = 4;
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::kSilu;
  int diffusion_steps = 50;

  struct Block {
    Eigen::Index offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index size() const { return rows * cols; }
  };
  struct Layer {
    Block weight;
    Block bias;
  };

  int input_width() const { return 2 + time_embed + concept_embed; }
  Block concept_table() const;
  std::vector<Layer> layers() const;  // hidden layers then output layer
  Eigen::Index param_count() const;

  std::string descriptor() const;
  static Architecture parse(const std::string& descriptor);
  void validate() const;

  bool operator==(const Architecture&) const = default;
};

// Sinusoidal embedding of integer timesteps (n x dim).
Matrix timestep_embedding(std::span<const int> t, int dim, int diffusion_steps);

// Noise predictor interface; build() appends nodes predicting eps (n x 2).
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Eigen::Index param_dim() const = 0;
  virtual NodeRef build(Graph& graph, const Matrix& x_t, std::span<const int> t,
                        std::span<const int> concept_ids) const = 0;
};

class MlpDenoiser final : public Denoiser {
 public:
  explicit MlpDenoiser(Architecture arch);

  const Architecture& arch() const noexcept { return arch_; }
  Eigen::Index param_dim() const override { return arch_.param_count(); }
  NodeRef build(Graph& graph, const Matrix& x_t, std::span<const int> t,
                std::span<const int> concept_ids) const override;

  // Embeddings ~ N(0, 1), weights ~ N(0, 1/fan_in), biases zero.
  ParamVector init_params(std::uint64_t seed) const;

 private:
  Architecture arch_;
};

// Forward-only noise prediction.
Matrix predict_noise(const Denoiser& net, const ParamVector& params, const Matrix& x_t,
                     std::span<const int> t, std::span<const int> concept_ids);

// Timestep and noise draws for a batch; row i belongs to sample i.
struct NoiseDraws {
  std::vector<int> t;
  Matrix eps;  // n x 2
};
NoiseDraws draw_noise(std::size_t n, const NoiseSchedule& schedule, std::uint64_t seed);

// Denoising score-matching loss: mean_i w_t ||eps_hat(x_t, c, t) - eps||^2
// with t uniform on 1..T and eps ~ N(0, I), drawn from seed.
Graph denoise_loss(const Denoiser& net, std::span<const LabeledSample> batch,
                   const NoiseSchedule& schedule, std::uint64_t seed);

// Same loss appended to an existing graph; returns its scalar node.
NodeRef append_denoise_loss(Graph& graph, const Denoiser& net,
                            std::span<const LabeledSample> batch, const NoiseSchedule& schedule,
                            std::uint64_t seed);

// Ancestral sampling from x_T ~ N(0, I) down to t = 1 (n x 2).
Matrix sample(const Denoiser& net, const ParamVector& params, int concept_id,
              const NoiseSchedule& schedule, std::size_t n, std::uint64_t seed);

}  // namespace resalign
