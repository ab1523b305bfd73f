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

#include "support.hpp"

#include <algorithm>
#include <cmath>

#include "resalign/pipeline.hpp"
#include "resalign/rng.hpp"

namespace resalign::testing {

Graph quadratic_graph(const Matrix& L, const ParamVector& b) {
  const auto d = L.rows();
  Graph g(d);
  const NodeRef theta = g.param(0, 1, d, "theta");
  // theta L as x W' with W = L'.
  const NodeRef proj = g.affine(theta, g.constant(L.transpose()));
  const NodeRef sq = g.squared_error(proj, g.constant(Matrix::Zero(1, L.cols())));
  const NodeRef lin = g.affine(theta, g.constant(b.transpose()));
  g.set_output(g.combine({{0.5, sq}, {-1.0, lin}}));
  return g;
}

Graph linear_graph(const ParamVector& b) {
  Graph g(b.size());
  const NodeRef theta = g.param(0, 1, b.size(), "theta");
  g.set_output(g.combine({{1.0, g.affine(theta, g.constant(b.transpose()))}}));
  return g;
}

Matrix spd_factor(const ParamVector& eigs, std::uint64_t seed) {
  const auto d = eigs.size();
  Rng rng(seed);
  Matrix a(d, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  const Matrix q = Eigen::HouseholderQR<Matrix>(a).householderQ();
  return q * eigs.cwiseSqrt().asDiagonal();
}

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

Eigen::Index rand_between(Rng& rng, int lo, int hi) {
  return lo + static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(hi - lo + 1)));
}

}  // namespace

RandomGraph random_graph(std::uint64_t seed) {
  Rng rng(seed);
  const Eigen::Index n = rand_between(rng, 2, 8);
  const Eigen::Index in = rand_between(rng, 1, 4);
  const Eigen::Index h1 = rand_between(rng, 2, 8);
  const Eigen::Index h2 = rand_between(rng, 1, 6);
  const Eigen::Index out = rand_between(rng, 1, 3);
  const bool branch = rng.uniform() < 0.5;
  const bool param_input = rng.uniform() < 0.3;
  const bool weighted = rng.uniform() < 0.5;
  const bool second_term = rng.uniform() < 0.5;

  // Parameter budget, in layout order.
  Eigen::Index off = 0;
  auto take = [&](Eigen::Index r, Eigen::Index c) {
    const Eigen::Index o = off;
    off += r * c;
    return std::pair{o, std::pair{r, c}};
  };
  const auto x_blk = param_input ? take(n, in) : take(0, 0);
  const auto w1 = take(h1, in);
  const auto b1 = take(1, h1);
  const auto w2 = branch ? take(h2, in) : take(0, 0);
  const Eigen::Index mid = h1 + (branch ? h2 : 0);
  const auto w3 = take(out, mid);
  const auto b3 = take(1, out);
  const Eigen::Index d = off;

  Graph g(d);
  auto param = [&](const auto& blk) {
    return g.param(blk.first, blk.second.first, blk.second.second);
  };
  const NodeRef x = param_input ? param(x_blk) : g.constant(random_matrix(rng, n, in, 1.0));
  NodeRef a = g.affine(x, param(w1), param(b1));
  a = rng.uniform() < 0.5 ? g.tanh(a) : g.silu(a);
  NodeRef hidden = a;
  if (branch) {
    NodeRef c = g.affine(x, param(w2));
    c = rng.uniform() < 0.5 ? g.tanh(c) : g.silu(c);
    hidden = g.concat({a, c});
  }
  const NodeRef pred = g.affine(hidden, param(w3), param(b3));
  const NodeRef target = g.constant(random_matrix(rng, n, out, 1.0));
  NodeRef loss = weighted ? g.squared_error(pred, target, random_matrix(rng, n, 1, 1.0).cwiseAbs().col(0))
                          : g.squared_error(pred, target);
  if (second_term) {
    const NodeRef reg = g.squared_error(hidden, g.constant(Matrix::Zero(n, mid)));
    loss = g.combine({{1.0, loss}, {0.5 * rng.uniform() - 0.25, reg}}, rng.normal());
  }
  g.set_output(loss);

  ParamVector params(d);
  for (Eigen::Index i = 0; i < d; ++i) params[i] = 0.7 * rng.normal();
  return {std::move(g), std::move(params)};
}

ParamVector fd_grad(const Graph& g, const ParamVector& params, double h) {
  ParamVector out(params.size());
  ParamVector p = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    p[i] = params[i] + h;
    const double up = eval_loss(g, p);
    p[i] = params[i] - h;
    const double down = eval_loss(g, p);
    p[i] = params[i];
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

ParamVector fd_hvp(const Graph& g, const ParamVector& params, const ParamVector& v, double h) {
  return (grad(g, params + h * v) - grad(g, params - h * v)) / (2.0 * h);
}

double max_rel_error(const ParamVector& a, const ParamVector& b, double floor) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

double rel_error(const ParamVector& a, const ParamVector& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

double cosine(const ParamVector& a, const ParamVector& b) {
  const double n = a.norm() * b.norm();
  return n == 0.0 ? 0.0 : a.dot(b) / n;
}

ParamVector random_vector(Eigen::Index d, std::uint64_t seed, double scale) {
  Rng rng(seed);
  ParamVector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = scale * rng.normal();
  return v;
}

RunConfig small_config(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.run_id = "unit";
  c.testbed.sizes = {100, 50, 50, 20, 40, 40};
  c.testbed.reference_per_concept = 16;
  c.pretrain.steps = 400;
  c.pretrain.batch_size = 64;
  c.unlearn.outer_steps = 3;
  c.unlearn.inner_samples = 2;
  c.attack.steps = 10;
  c.eval.settings.n_samples = 100;
  c.eval.checkpoints = {0, 5, 10};
  c.eval.contamination_ratios = {0.0, 1.0};
  c.eval.trace_probes = 4;
  c.eval.trace_batch = 16;
  return c;
}

const Fixture& fixture() {
  static const Fixture f = [] {
    RunConfig c = small_config();
    Testbed tb = build_testbed(c);
    ParamVector theta0 = train_base(c, tb);
    attach_reference(tb, theta0, c.testbed.reference_per_concept, derive_seed(c.seed, "reference"));
    return Fixture{c, std::move(tb), std::move(theta0)};
  }();
  return f;
}

}  // namespace resalign::testing
