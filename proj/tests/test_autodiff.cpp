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

#include <cmath>

#include "resalign/autodiff.hpp"
#include "resalign/errors.hpp"
#include "resalign/rng.hpp"
#include "support.hpp"

using namespace resalign;
using namespace resalign::testing;

namespace {

Graph sum_of_squares() {
  Graph g(2);
  const NodeRef p = g.param(0, 1, 2);
  g.set_output(g.squared_error(p, g.constant(Matrix::Zero(1, 2))));
  return g;
}

// 0.5 theta' diag(2, 4) theta.
Graph diag_quadratic() {
  Matrix L = Matrix::Zero(2, 2);
  L(0, 0) = std::sqrt(2.0);
  L(1, 1) = 2.0;
  return quadratic_graph(L, ParamVector::Zero(2));
}

double silu(double z) { return z / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("sum of squares value and gradient") {
  const Graph g = sum_of_squares();
  const ParamVector theta{{1.0, 2.0}};
  CHECK(eval_loss(g, theta) == doctest::Approx(5.0).epsilon(1e-15));
  const ParamVector gr = grad(g, theta);
  CHECK(gr[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(gr[1] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("empty reduction and constant loss") {
  Graph g(3);
  g.param(0, 1, 3);
  g.set_output(g.combine({}));
  const ParamVector theta = random_vector(3, 1);
  CHECK(eval_loss(g, theta) == 0.0);
  CHECK(grad(g, theta).isZero(0.0));

  Graph c(3);
  c.set_output(c.combine({}, 2.5));
  CHECK(eval_loss(c, theta) == 2.5);
  CHECK(grad(c, theta).isZero(0.0));
  CHECK(hvp(c, theta, random_vector(3, 2)).isZero(0.0));
}

TEST_CASE("hvp of an explicit quadratic") {
  const Graph g = diag_quadratic();
  const ParamVector theta = random_vector(2, 3);
  const ParamVector hv = hvp(g, theta, ParamVector::Ones(2));
  CHECK(hv[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(hv[1] == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(hvp(g, theta, ParamVector::Zero(2)).isZero(0.0));
}

TEST_CASE("two-layer network matches a hand-written forward pass") {
  // n x in input, tanh hidden layer, silu-free linear output, weighted mse.
  const Eigen::Index n = 6, in = 3, hid = 5, out = 2;
  Rng rng(11);
  Matrix x(n, in), y(n, out);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal();
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) w[i] = 0.5 + rng.uniform();

  const Eigen::Index o_w1 = 0, o_b1 = hid * in, o_w2 = o_b1 + hid, o_b2 = o_w2 + out * hid;
  const Eigen::Index d = o_b2 + out;
  Graph g(d);
  NodeRef h = g.affine(g.constant(x), g.param(o_w1, hid, in), g.param(o_b1, 1, hid));
  h = g.silu(g.tanh(h));
  const NodeRef pred = g.affine(h, g.param(o_w2, out, hid), g.param(o_b2, 1, out));
  g.set_output(g.squared_error(pred, g.constant(y), w));

  for (std::uint64_t s = 0; s < 5; ++s) {
    const ParamVector p = random_vector(d, 100 + s);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      std::vector<double> a(static_cast<std::size_t>(hid));
      for (Eigen::Index j = 0; j < hid; ++j) {
        double z = p[o_b1 + j];
        // Weights are column-major out x in.
        for (Eigen::Index k = 0; k < in; ++k) z += p[o_w1 + k * hid + j] * x(i, k);
        a[static_cast<std::size_t>(j)] = silu(std::tanh(z));
      }
      double row = 0.0;
      for (Eigen::Index j = 0; j < out; ++j) {
        double z = p[o_b2 + j];
        for (Eigen::Index k = 0; k < hid; ++k) z += p[o_w2 + k * out + j] * a[static_cast<std::size_t>(k)];
        row += (z - y(i, j)) * (z - y(i, j));
      }
      total += w[i] * row;
    }
    total /= static_cast<double>(n);
    CHECK(eval_loss(g, p) == doctest::Approx(total).epsilon(1e-12));
  }
}

TEST_CASE("gradient and hvp agree with finite differences on random graphs") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    CAPTURE(s);
    const RandomGraph rg = random_graph(s);
    REQUIRE(rg.params.size() <= 200);
    CHECK(max_rel_error(grad(rg.graph, rg.params), fd_grad(rg.graph, rg.params, 1e-5)) <= 1e-4);
    const ParamVector v = random_vector(rg.params.size(), 1000 + s);
    CHECK(rel_error(hvp(rg.graph, rg.params, v), fd_hvp(rg.graph, rg.params, v, 1e-4)) <= 1e-3);
  }
}

TEST_CASE("hvp is linear and symmetric") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const RandomGraph rg = random_graph(50 + s);
    const auto d = rg.params.size();
    const ParamVector v = random_vector(d, 1), w = random_vector(d, 2);
    Rng rng(s);
    const double a = rng.normal(), b = rng.normal();
    const ParamVector lhs = hvp(rg.graph, rg.params, a * v + b * w);
    const ParamVector rhs = a * hvp(rg.graph, rg.params, v) + b * hvp(rg.graph, rg.params, w);
    CHECK(rel_error(lhs, rhs) <= 1e-10);
    const double vhw = v.dot(hvp(rg.graph, rg.params, w));
    const double whv = w.dot(hvp(rg.graph, rg.params, v));
    CHECK(std::abs(vhw - whv) <= 1e-8 * std::max({std::abs(vhw), std::abs(whv), 1e-12}));
  }
}

TEST_CASE("grad_and_hvp agrees with separate calls and is deterministic") {
  const RandomGraph rg = random_graph(77);
  const ParamVector v = random_vector(rg.params.size(), 9);
  const GradAndHvp a = grad_and_hvp(rg.graph, rg.params, v);
  const GradAndHvp b = grad_and_hvp(rg.graph, rg.params, v);
  CHECK(a.grad == b.grad);
  CHECK(a.hvp == b.hvp);
  CHECK(a.value == b.value);
  CHECK(rel_error(a.grad, grad(rg.graph, rg.params)) <= 1e-14);
  CHECK(rel_error(a.hvp, hvp(rg.graph, rg.params, v)) <= 1e-14);
}

TEST_CASE("errors") {
  const Graph g = sum_of_squares();
  CHECK_THROWS_AS(eval_loss(g, ParamVector::Zero(3)), ConfigError);
  CHECK_THROWS_AS(hvp(g, ParamVector::Zero(2), ParamVector::Zero(3)), ConfigError);

  Graph bad(1);
  const NodeRef p = bad.param(0, 1, 1, "p");
  bad.set_output(bad.squared_error(p, bad.constant(Matrix::Zero(1, 1))));
  ParamVector inf(1);
  inf[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(eval_loss(bad, inf), NumericError);

  Graph none(2);
  none.param(0, 1, 2);
  CHECK_THROWS(eval_loss(none, ParamVector::Zero(2)));
}
