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

// Reverse-mode differentiation over a flat parameter vector.
//
// A Graph is an ordered list of matrix-valued nodes. Leaves are constants or
// views into the parameter vector; interior nodes are one of a small fixed
// primitive set. Exactly one node is marked as the scalar (1x1) output.
//
// Hessian-vector products run the same forward and reverse sweeps over dual
// matrices (value plus tangent) with the parameter tangent seeded to v. The
// tangent of the gradient is H v. The Hessian is never formed.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace resalign {

using ParamVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct NodeRef {
  std::uint32_t index = 0;
};

enum class OpKind : std::uint8_t {
  kConstant,
  kParam,
  kAffine,
  kTanh,
  kSilu,
  kConcat,
  kSquaredError,
  kCombine,
};

const char* op_name(OpKind kind);

struct Node {
  OpKind kind = OpKind::kConstant;
  std::string label;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<NodeRef> inputs;

  Matrix constant;               // kConstant
  Eigen::Index offset = 0;       // kParam: first coordinate of the segment
  bool has_bias = false;         // kAffine: inputs = {x, weight[, bias]}
  Eigen::VectorXd row_weights;   // kSquaredError: per-row weight w_i
  std::vector<double> coeffs;    // kCombine: one per input
  double bias_term = 0.0;        // kCombine: additive constant
  std::optional<double> floor;   // kCombine: lower clamp
};

class Graph {
 public:
  explicit Graph(Eigen::Index param_dim);

  Eigen::Index param_dim() const noexcept { return param_dim_; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const Node& node(NodeRef ref) const { return nodes_.at(ref.index); }

  NodeRef constant(Matrix value, std::string label = {});

  // Column-major rows x cols view of params[offset, offset + rows*cols).
  NodeRef param(Eigen::Index offset, Eigen::Index rows, Eigen::Index cols,
                std::string label = {});

  // x W^T + b, with x: n x in, weight: out x in, bias: 1 x out.
  NodeRef affine(NodeRef x, NodeRef weight, std::optional<NodeRef> bias = {},
                 std::string label = {});

  NodeRef tanh(NodeRef x, std::string label = {});
  NodeRef silu(NodeRef x, std::string label = {});

  // Column-wise concatenation; all parts share the row count.
  NodeRef concat(const std::vector<NodeRef>& parts, std::string label = {});

  // (1/n) sum_i w_i ||pred_i - target_i||^2 over the n rows. Scalar output.
  NodeRef squared_error(NodeRef pred, NodeRef target, Eigen::VectorXd row_weights,
                        std::string label = {});
  NodeRef squared_error(NodeRef pred, NodeRef target, std::string label = {});

  // sum_i c_i s_i + bias_term, optionally clamped below at floor (zero
  // derivative while clamped). Every term must be a scalar node.
  NodeRef combine(const std::vector<std::pair<double, NodeRef>>& terms,
                  double bias_term = 0.0, std::optional<double> floor = {},
                  std::string label = {});

  void set_output(NodeRef ref);
  NodeRef output() const;
  bool has_output() const noexcept { return output_.has_value(); }

 private:
  NodeRef push(Node node);
  const Node& checked(NodeRef ref) const;

  Eigen::Index param_dim_;
  std::vector<Node> nodes_;
  std::optional<NodeRef> output_;
};

// Scalar loss at params.
double eval_loss(const Graph& graph, const ParamVector& params);

// Forward-only value of an arbitrary node.
Matrix eval_node(const Graph& graph, const ParamVector& params, NodeRef ref);

struct ValueAndGrad {
  double value = 0.0;
  ParamVector grad;
};

ValueAndGrad value_and_grad(const Graph& graph, const ParamVector& params);
ParamVector grad(const Graph& graph, const ParamVector& params);

// Exact Hessian-vector product of the output w.r.t. params.
ParamVector hvp(const Graph& graph, const ParamVector& params, const ParamVector& v);

// Gradient and Hv from the same dual sweep.
struct GradAndHvp {
  double value = 0.0;
  ParamVector grad;
  ParamVector hvp;
};
GradAndHvp grad_and_hvp(const Graph& graph, const ParamVector& params,
                        const ParamVector& v);

}  // namespace resalign
