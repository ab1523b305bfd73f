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

#include "resalign/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "resalign/errors.hpp"
#include "resalign/rng.hpp"

namespace resalign {

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Schedule

std::string NoiseSchedule::descriptor() const {
  return "vp-linear;T=" + std::to_string(steps) + ";beta_min=" + format_double(beta_min) +
         ";beta_max=" + format_double(beta_max);
}

NoiseSchedule make_schedule(int steps, double beta_min, double beta_max) {
  if (steps < 1) throw ConfigError("schedule needs at least one timestep");
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
    throw ConfigError("schedule betas must satisfy 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    const double b = beta_min + (beta_max - beta_min) * frac;
    prod *= 1.0 - b;
    s.beta.push_back(b);
    s.alpha_bar.push_back(prod);
    s.alpha.push_back(std::sqrt(prod));
    s.sigma.push_back(std::sqrt(1.0 - prod));
    s.weight.push_back(1.0);
  }
  return s;
}

Point forward_noise(const Point& x, int t, const Point& eps, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps) {
    throw UsageError("timestep " + std::to_string(t) + " outside 1.." +
                     std::to_string(schedule.steps));
  }
  return schedule.alpha_at(t) * x + schedule.sigma_at(t) * eps;
}

// ---------------------------------------------------------------------------
// Concepts and data

ConceptSet::ConceptSet(std::vector<ConceptSpec> concepts, double mode_std)
    : concepts_(std::move(concepts)), mode_std_(mode_std) {
  if (concepts_.empty()) throw ConfigError("no concepts declared");
  if (!(mode_std > 0.0)) throw ConfigError("mode std must be positive");
  int max_benign = -1;
  int min_harmful = INT32_MAX;
  for (std::size_t i = 0; i < concepts_.size(); ++i) {
    const ConceptSpec& c = concepts_[i];
    if (c.mode_centers.empty()) {
      throw ConfigError("concept " + std::to_string(c.id) + " has no modes");
    }
    if (c.mode_weights.size() != c.mode_centers.size()) {
      throw ConfigError("concept " + std::to_string(c.id) + ": one weight per mode required");
    }
    double total = 0.0;
    for (double w : c.mode_weights) {
      if (w < 0.0) throw ConfigError("negative mode weight");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ConfigError("concept " + std::to_string(c.id) + ": mode weights must sum to 1");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (concepts_[j].id == c.id) throw ConfigError("duplicate concept id");
    }
    if (c.is_harmful) {
      min_harmful = std::min(min_harmful, c.id);
    } else {
      max_benign = std::max(max_benign, c.id);
    }
  }
  if (max_benign >= min_harmful) {
    throw ConfigError("harmful and benign concept ids must occupy disjoint ranges");
  }
}

bool ConceptSet::contains(int id) const noexcept {
  return std::any_of(concepts_.begin(), concepts_.end(),
                     [id](const ConceptSpec& c) { return c.id == id; });
}

const ConceptSpec& ConceptSet::find(int id) const {
  for (const ConceptSpec& c : concepts_) {
    if (c.id == id) return c;
  }
  throw UsageError("unknown concept id " + std::to_string(id));
}

std::vector<int> ConceptSet::harmful_ids() const {
  std::vector<int> ids;
  for (const ConceptSpec& c : concepts_) {
    if (c.is_harmful) ids.push_back(c.id);
  }
  return ids;
}

std::vector<int> ConceptSet::benign_ids() const {
  std::vector<int> ids;
  for (const ConceptSpec& c : concepts_) {
    if (!c.is_harmful) ids.push_back(c.id);
  }
  return ids;
}

std::vector<LabeledSample> ConceptSet::draw(int concept_id, std::size_t n,
                                            std::uint64_t seed) const {
  const ConceptSpec& c = find(concept_id);
  Rng rng(seed);
  std::vector<LabeledSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t m = 0;
    double acc = c.mode_weights[0];
    while (u >= acc && m + 1 < c.mode_weights.size()) acc += c.mode_weights[++m];
    const double dx = rng.normal();
    const double dy = rng.normal();
    out.push_back({c.mode_centers[m] + mode_std_ * Point(dx, dy), concept_id});
  }
  return out;
}

ConceptSet default_concepts(int benign, int harmful, double radius, double mode_std) {
  if (benign < 1 || harmful < 1) throw ConfigError("need at least one benign and one harmful concept");
  const int total = benign + harmful;
  std::vector<int> modes(static_cast<std::size_t>(total));
  int slots = 0;
  for (int id = 0; id < total; ++id) {
    modes[static_cast<std::size_t>(id)] = 1 + id % 3;
    slots += modes[static_cast<std::size_t>(id)];
  }
  std::vector<ConceptSpec> concepts(static_cast<std::size_t>(total));
  for (int id = 0; id < total; ++id) {
    concepts[static_cast<std::size_t>(id)].id = id;
    concepts[static_cast<std::size_t>(id)].is_harmful = id >= benign;
  }
  int slot = 0;
  while (slot < slots) {
    for (int id = 0; id < total && slot < slots; ++id) {
      ConceptSpec& c = concepts[static_cast<std::size_t>(id)];
      if (static_cast<int>(c.mode_centers.size()) >= modes[static_cast<std::size_t>(id)]) continue;
      const double a = 2.0 * std::numbers::pi * slot / slots;
      c.mode_centers.emplace_back(radius * std::cos(a), radius * std::sin(a));
      ++slot;
    }
  }
  for (ConceptSpec& c : concepts) {
    c.mode_weights.assign(c.mode_centers.size(), 1.0 / static_cast<double>(c.mode_centers.size()));
  }
  return ConceptSet(std::move(concepts), mode_std);
}

void write_samples(std::ostream& out, std::span<const LabeledSample> samples) {
  out << "x0,x1,concept_id\n";
  for (const LabeledSample& s : samples) {
    out << format_double(s.x.x()) << ',' << format_double(s.x.y()) << ',' << s.concept_id << '\n';
  }
}

std::vector<LabeledSample> read_samples(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "x0,x1,concept_id") {
    throw ConfigError("sample table must start with header 'x0,x1,concept_id'");
  }
  std::vector<LabeledSample> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ss(line);
    LabeledSample s;
    char c1 = 0;
    char c2 = 0;
    if (!(ss >> s.x.x() >> c1 >> s.x.y() >> c2 >> s.concept_id) || c1 != ',' || c2 != ',') {
      throw ConfigError("malformed sample table row " + std::to_string(row));
    }
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Architecture

Architecture::Block Architecture::concept_table() const {
  return {0, concept_embed, n_concepts};
}

std::vector<Architecture::Layer> Architecture::layers() const {
  std::vector<Layer> out;
  Eigen::Index off = concept_table().size();
  int in = input_width();
  std::vector<int> widths = hidden;
  widths.push_back(2);
  for (int w : widths) {
    Layer l;
    l.weight = {off, w, in};
    off += l.weight.size();
    l.bias = {off, 1, w};
    off += w;
    out.push_back(l);
    in = w;
  }
  return out;
}

Eigen::Index Architecture::param_count() const {
  const Layer last = layers().back();
  return last.bias.offset + last.bias.size();
}

std::string Architecture::descriptor() const {
  std::string s = std::string("mlp-") + (activation == Activation::kSilu ? "silu" : "tanh") +
                  ";concepts=" + std::to_string(n_concepts) +
                  ";temb=" + std::to_string(time_embed) +
                  ";cemb=" + std::to_string(concept_embed) + ";hidden=";
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(hidden[i]);
  }
  return s + ";T=" + std::to_string(diffusion_steps);
}

Architecture Architecture::parse(const std::string& descriptor) {
  Architecture a;
  std::istringstream ss(descriptor);
  std::string field;
  bool first = true;
  auto int_of = [&](const std::string& v) {
    try {
      std::size_t used = 0;
      const int x = std::stoi(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("bad integer '" + v + "' in architecture descriptor '" + descriptor + "'");
    }
  };
  while (std::getline(ss, field, ';')) {
    if (first) {
      first = false;
      if (field == "mlp-silu") {
        a.activation = Activation::kSilu;
      } else if (field == "mlp-tanh") {
        a.activation = Activation::kTanh;
      } else {
        throw ConfigError("unknown architecture kind '" + field + "'");
      }
      continue;
    }
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ConfigError("bad architecture field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string val = field.substr(eq + 1);
    if (key == "concepts") {
      a.n_concepts = int_of(val);
    } else if (key == "temb") {
      a.time_embed = int_of(val);
    } else if (key == "cemb") {
      a.concept_embed = int_of(val);
    } else if (key == "T") {
      a.diffusion_steps = int_of(val);
    } else if (key == "hidden") {
      a.hidden.clear();
      std::istringstream hs(val);
      std::string w;
      while (std::getline(hs, w, ',')) a.hidden.push_back(int_of(w));
    } else {
      throw ConfigError("unknown architecture field '" + key + "'");
    }
  }
  if (first) throw ConfigError("empty architecture descriptor");
  a.validate();
  return a;
}

void Architecture::validate() const {
  if (n_concepts < 1) throw ConfigError("architecture needs at least one concept");
  if (time_embed < 2 || time_embed % 2 != 0) throw ConfigError("time embedding size must be even and >= 2");
  if (concept_embed < 1) throw ConfigError("concept embedding size must be positive");
  if (hidden.empty()) throw ConfigError("architecture needs at least one hidden layer");
  for (int w : hidden) {
    if (w < 1) throw ConfigError("hidden widths must be positive");
  }
  if (diffusion_steps < 1) throw ConfigError("architecture diffusion steps must be positive");
}

Matrix timestep_embedding(std::span<const int> t, int dim, int diffusion_steps) {
  // Timesteps are rescaled to a 0..1000 range before the usual geometric
  // frequency ladder.
  const int half = dim / 2;
  const double scale = 1000.0 / diffusion_steps;
  Matrix out(static_cast<Eigen::Index>(t.size()), dim);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double phase = scale * t[i] * freq;
      out(static_cast<Eigen::Index>(i), k) = std::sin(phase);
      out(static_cast<Eigen::Index>(i), half + k) = std::cos(phase);
    }
  }
  return out;
}

MlpDenoiser::MlpDenoiser(Architecture arch) : arch_(std::move(arch)) { arch_.validate(); }

NodeRef MlpDenoiser::build(Graph& graph, const Matrix& x_t, std::span<const int> t,
                           std::span<const int> concept_ids) const {
  const auto n = x_t.rows();
  if (x_t.cols() != 2 || static_cast<std::size_t>(n) != t.size() ||
      t.size() != concept_ids.size()) {
    throw UsageError("denoiser inputs must be n x 2 with one timestep and concept per row");
  }
  if (graph.param_dim() != param_dim()) {
    throw ConfigError("graph parameter dimension does not match the architecture");
  }
  Matrix onehot = Matrix::Zero(n, arch_.n_concepts);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = concept_ids[static_cast<std::size_t>(i)];
    if (c < 0 || c >= arch_.n_concepts) {
      throw UsageError("concept id " + std::to_string(c) + " outside the embedding table");
    }
    onehot(i, c) = 1.0;
  }
  const auto table = arch_.concept_table();
  const NodeRef cemb = graph.affine(graph.constant(std::move(onehot), "onehot"),
                                    graph.param(table.offset, table.rows, table.cols, "concept_table"),
                                    std::nullopt, "concept_embed");
  const NodeRef temb =
      graph.constant(timestep_embedding(t, arch_.time_embed, arch_.diffusion_steps), "t_embed");
  NodeRef h = graph.concat({graph.constant(x_t, "x_t"), temb, cemb}, "input");
  const auto layers = arch_.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    const std::string tag = k + 1 == layers.size() ? "out" : "h" + std::to_string(k + 1);
    h = graph.affine(h, graph.param(l.weight.offset, l.weight.rows, l.weight.cols, "W_" + tag),
                     graph.param(l.bias.offset, 1, l.bias.cols, "b_" + tag), "affine_" + tag);
    if (k + 1 < layers.size()) {
      h = arch_.activation == Activation::kSilu ? graph.silu(h, "act_" + tag)
                                                : graph.tanh(h, "act_" + tag);
    }
  }
  return h;
}

ParamVector MlpDenoiser::init_params(std::uint64_t seed) const {
  Rng rng(seed);
  ParamVector p = ParamVector::Zero(param_dim());
  const auto table = arch_.concept_table();
  for (Eigen::Index i = 0; i < table.size(); ++i) p[table.offset + i] = rng.normal();
  for (const auto& l : arch_.layers()) {
    const double std = 1.0 / std::sqrt(static_cast<double>(l.weight.cols));
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) p[l.weight.offset + i] = std * rng.normal();
  }
  return p;
}

Matrix predict_noise(const Denoiser& net, const ParamVector& params, const Matrix& x_t,
                     std::span<const int> t, std::span<const int> concept_ids) {
  Graph g(net.param_dim());
  const NodeRef out = net.build(g, x_t, t, concept_ids);
  return eval_node(g, params, out);
}

// ---------------------------------------------------------------------------
// Loss and sampler

NoiseDraws draw_noise(std::size_t n, const NoiseSchedule& schedule, std::uint64_t seed) {
  Rng rng(seed);
  NoiseDraws d;
  d.t.resize(n);
  d.eps.resize(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    d.t[i] = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(schedule.steps)));
    d.eps(static_cast<Eigen::Index>(i), 0) = rng.normal();
    d.eps(static_cast<Eigen::Index>(i), 1) = rng.normal();
  }
  return d;
}

NodeRef append_denoise_loss(Graph& graph, const Denoiser& net,
                            std::span<const LabeledSample> batch, const NoiseSchedule& schedule,
                            std::uint64_t seed) {
  if (batch.empty()) throw UsageError("denoising loss needs a non-empty batch");
  const NoiseDraws d = draw_noise(batch.size(), schedule, seed);
  const auto n = static_cast<Eigen::Index>(batch.size());
  Matrix x_t(n, 2);
  Eigen::VectorXd w(n);
  std::vector<int> concepts(batch.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = batch[static_cast<std::size_t>(i)];
    const int t = d.t[static_cast<std::size_t>(i)];
    x_t.row(i) = forward_noise(s.x, t, d.eps.row(i).transpose(), schedule).transpose();
    w[i] = schedule.weight_at(t);
    concepts[static_cast<std::size_t>(i)] = s.concept_id;
  }
  const NodeRef pred = net.build(graph, x_t, d.t, concepts);
  return graph.squared_error(pred, graph.constant(d.eps, "eps"), std::move(w), "denoise_mse");
}

Graph denoise_loss(const Denoiser& net, std::span<const LabeledSample> batch,
                   const NoiseSchedule& schedule, std::uint64_t seed) {
  Graph g(net.param_dim());
  g.set_output(append_denoise_loss(g, net, batch, schedule, seed));
  return g;
}

Matrix sample(const Denoiser& net, const ParamVector& params, int concept_id,
              const NoiseSchedule& schedule, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw UsageError("sample count must be at least 1");
  Rng rng(seed);
  const auto rows = static_cast<Eigen::Index>(n);
  Matrix x(rows, 2);
  for (Eigen::Index i = 0; i < rows; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
  }
  const std::vector<int> concepts(n, concept_id);
  std::vector<int> ts(n);
  for (int t = schedule.steps; t >= 1; --t) {
    std::fill(ts.begin(), ts.end(), t);
    const Matrix eps = predict_noise(net, params, x, ts, concepts);
    const double beta = schedule.beta_at(t);
    const double coef = beta / schedule.sigma_at(t);
    x = (x - coef * eps) / std::sqrt(1.0 - beta);
    if (t > 1) {
      const double var = beta * (1.0 - schedule.alpha_bar_at(t - 1)) / (1.0 - schedule.alpha_bar_at(t));
      const double sd = std::sqrt(var);
      for (Eigen::Index i = 0; i < rows; ++i) {
        x(i, 0) += sd * rng.normal();
        x(i, 1) += sd * rng.normal();
      }
    }
  }
  return x;
}

}  // namespace resalign
