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

// Shared helpers for the unit and acceptance tests: explicit quadratic
// graphs, random composite graphs, finite differences and a small trained
// testbed.

#include <cstdint>
#include <vector>

#include "resalign/autodiff.hpp"
#include "resalign/config.hpp"
#include "resalign/testbed.hpp"

namespace resalign::testing {

// 0.5 theta' L L' theta - b' theta over params laid out as one 1 x d row.
Graph quadratic_graph(const Matrix& L, const ParamVector& b);

// b' theta only (zero Hessian).
Graph linear_graph(const ParamVector& b);

// Factor L with L L' = Q diag(eigs) Q' for a seeded random rotation Q.
Matrix spd_factor(const ParamVector& eigs, std::uint64_t seed);

struct RandomGraph {
  Graph graph;
  ParamVector params;
};

// Seeded composition of every primitive (affine with and without bias, tanh,
// silu, concat, weighted and plain squared error, combine) with d <= 200.
RandomGraph random_graph(std::uint64_t seed);

ParamVector fd_grad(const Graph& g, const ParamVector& params, double h);
ParamVector fd_hvp(const Graph& g, const ParamVector& params, const ParamVector& v, double h);

// Largest per-coordinate |a - b| / max(|a|, |b|, floor).
double max_rel_error(const ParamVector& a, const ParamVector& b, double floor = 1e-6);
double rel_error(const ParamVector& a, const ParamVector& b);
double cosine(const ParamVector& a, const ParamVector& b);

ParamVector random_vector(Eigen::Index d, std::uint64_t seed, double scale = 1.0);

// Reduced-size run configuration used by the unit tests.
RunConfig small_config(std::uint64_t seed = 7);

// Testbed from small_config, its briefly pretrained base model and a frozen
// reference attached from that model. Built once per process.
struct Fixture {
  RunConfig config;
  Testbed testbed;
  ParamVector theta0;
};
const Fixture& fixture();

}  // namespace resalign::testing
