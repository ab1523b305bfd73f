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

#include "resalign/autodiff.hpp"

#include <cmath>
#include <string>

#include "resalign/errors.hpp"

namespace resalign {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParam: return "param";
    case OpKind::kAffine: return "affine";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSilu: return "silu";
    case OpKind::kConcat: return "concat";
    case OpKind::kSquaredError: return "squared_error";
    case OpKind::kCombine: return "combine";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Graph construction

Graph::Graph(Eigen::Index param_dim) : param_dim_(param_dim) {
  if (param_dim < 0) throw ConfigError("graph parameter dimension must be non-negative");
}

NodeRef Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return NodeRef{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Node& Graph::checked(NodeRef ref) const {
  if (ref.index >= nodes_.size()) throw ConfigError("node reference out of range");
  return nodes_[ref.index];
}

NodeRef Graph::constant(Matrix value, std::string label) {
  Node n;
  n.kind = OpKind::kConstant;
  n.label = std::move(label);
  n.rows = value.rows();
  n.cols = value.cols();
  n.constant = std::move(value);
  return push(std::move(n));
}

NodeRef Graph::param(Eigen::Index offset, Eigen::Index rows, Eigen::Index cols,
                     std::string label) {
  if (offset < 0 || rows < 0 || cols < 0 || offset + rows * cols > param_dim_) {
    throw ConfigError("param segment [" + std::to_string(offset) + ", " +
                      std::to_string(offset + rows * cols) +
                      ") exceeds parameter dimension " + std::to_string(param_dim_));
  }
  Node n;
  n.kind = OpKind::kParam;
  n.label = std::move(label);
  n.rows = rows;
  n.cols = cols;
  n.offset = offset;
  return push(std::move(n));
}

NodeRef Graph::affine(NodeRef x, NodeRef weight, std::optional<NodeRef> bias,
                      std::string label) {
  const Node& xn = checked(x);
  const Node& wn = checked(weight);
  if (xn.cols != wn.cols) {
    throw ConfigError("affine: input has " + std::to_string(xn.cols) +
                      " columns but weight expects " + std::to_string(wn.cols));
  }
  Node n;
  n.kind = OpKind::kAffine;
  n.label = std::move(label);
  n.rows = xn.rows;
  n.cols = wn.rows;
  n.inputs = {x, weight};
  if (bias) {
    const Node& bn = checked(*bias);
    if (bn.rows != 1 || bn.cols != wn.rows) throw ConfigError("affine: bias must be 1 x out");
    n.inputs.push_back(*bias);
    n.has_bias = true;
  }
  return push(std::move(n));
}

NodeRef Graph::tanh(NodeRef x, std::string label) {
  const Node& xn = checked(x);
  Node n;
  n.kind = OpKind::kTanh;
  n.label = std::move(label);
  n.rows = xn.rows;
  n.cols = xn.cols;
  n.inputs = {x};
  return push(std::move(n));
}

NodeRef Graph::silu(NodeRef x, std::string label) {
  const Node& xn = checked(x);
  Node n;
  n.kind = OpKind::kSilu;
  n.label = std::move(label);
  n.rows = xn.rows;
  n.cols = xn.cols;
  n.inputs = {x};
  return push(std::move(n));
}

NodeRef Graph::concat(const std::vector<NodeRef>& parts, std::string label) {
  if (parts.empty()) throw ConfigError("concat: no inputs");
  Node n;
  n.kind = OpKind::kConcat;
  n.label = std::move(label);
  n.rows = checked(parts.front()).rows;
  for (NodeRef p : parts) {
    const Node& pn = checked(p);
    if (pn.rows != n.rows) throw ConfigError("concat: row counts differ");
    n.cols += pn.cols;
  }
  n.inputs = parts;
  return push(std::move(n));
}

NodeRef Graph::squared_error(NodeRef pred, NodeRef target, Eigen::VectorXd row_weights,
                             std::string label) {
  const Node& pn = checked(pred);
  const Node& tn = checked(target);
  if (pn.rows != tn.rows || pn.cols != tn.cols) {
    throw ConfigError("squared_error: prediction and target shapes differ");
  }
  if (row_weights.size() != pn.rows) {
    throw ConfigError("squared_error: need one weight per row");
  }
  Node n;
  n.kind = OpKind::kSquaredError;
  n.label = std::move(label);
  n.rows = 1;
  n.cols = 1;
  n.inputs = {pred, target};
  n.row_weights = std::move(row_weights);
  return push(std::move(n));
}

NodeRef Graph::squared_error(NodeRef pred, NodeRef target, std::string label) {
  const Eigen::Index rows = checked(pred).rows;
  return squared_error(pred, target, Eigen::VectorXd::Ones(rows), std::move(label));
}

NodeRef Graph::combine(const std::vector<std::pair<double, NodeRef>>& terms, double bias_term,
                       std::optional<double> floor, std::string label) {
  Node n;
  n.kind = OpKind::kCombine;
  n.label = std::move(label);
  n.rows = 1;
  n.cols = 1;
  n.bias_term = bias_term;
  n.floor = floor;
  for (const auto& [c, ref] : terms) {
    const Node& tn = checked(ref);
    if (tn.rows != 1 || tn.cols != 1) throw ConfigError("combine: every term must be scalar");
    n.coeffs.push_back(c);
    n.inputs.push_back(ref);
  }
  return push(std::move(n));
}

void Graph::set_output(NodeRef ref) {
  const Node& n = checked(ref);
  if (n.rows != 1 || n.cols != 1) throw ConfigError("graph output must be a scalar node");
  output_ = ref;
}

NodeRef Graph::output() const {
  if (!output_) throw ConfigError("graph has no output node");
  return *output_;
}

// ---------------------------------------------------------------------------
// Evaluation engine. One template, two value algebras: plain matrices for
// value/gradient, dual matrices for gradient tangents.

namespace {

struct Dual {
  Matrix v;
  Matrix t;
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double tanh_d1(double x) {
  const double y = std::tanh(x);
  return 1.0 - y * y;
}
double tanh_d2(double x) {
  const double y = std::tanh(x);
  return -2.0 * y * (1.0 - y * y);
}
double silu_f(double x) { return x * sigmoid(x); }
double silu_d1(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}
double silu_d2(double x) {
  const double s = sigmoid(x);
  return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s));
}

using ScalarFn = double (*)(double);

template <class V>
struct Algebra;

template <>
struct Algebra<Matrix> {
  static Matrix from_constant(const Matrix& m) { return m; }
  static Matrix from_param(const ParamVector& p, const ParamVector*, Eigen::Index off,
                           Eigen::Index rows, Eigen::Index cols) {
    return Eigen::Map<const Matrix>(p.data() + off, rows, cols);
  }
  static void scatter(const Matrix& g, Eigen::Index off, ParamVector& grad, ParamVector*) {
    grad.segment(off, g.size()) += Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
  }
  static Matrix scalar(double s) { return Matrix::Constant(1, 1, s); }
  static double value(const Matrix& m) { return m(0, 0); }
  static bool finite(const Matrix& m) { return m.allFinite(); }
  static Matrix mul(const Matrix& a, const Matrix& b) { return a * b; }
  static Matrix mul_nt(const Matrix& a, const Matrix& b) { return a * b.transpose(); }
  static Matrix mul_tn(const Matrix& a, const Matrix& b) { return a.transpose() * b; }
  static Matrix hadamard(const Matrix& a, const Matrix& b) { return a.cwiseProduct(b); }
  static Matrix unary(const Matrix& x, ScalarFn f, ScalarFn) { return x.unaryExpr(f); }
  static void add_row(Matrix& y, const Matrix& b) { y.rowwise() += b.row(0); }
  static Matrix colsum(const Matrix& a) { return a.colwise().sum(); }
  static Matrix sub(const Matrix& a, const Matrix& b) { return a - b; }
  static Matrix scale(const Matrix& a, double c) { return a * c; }
  static Matrix scale_rows(const Matrix& a, const Eigen::VectorXd& w) {
    return w.asDiagonal() * a;
  }
  static Matrix times_scalar(const Matrix& a, const Matrix& s) { return a * s(0, 0); }
  static Matrix row_weighted_total(const Matrix& a, const Eigen::VectorXd& w) {
    return scalar(w.dot(a.rowwise().sum()));
  }
  static void accumulate(Matrix& dst, const Matrix& src) { dst += src; }
  static Matrix cols(const Matrix& a, Eigen::Index c0, Eigen::Index n) {
    return a.middleCols(c0, n);
  }
  static Matrix hconcat(const std::vector<const Matrix*>& parts, Eigen::Index rows,
                        Eigen::Index cols) {
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (const Matrix* p : parts) {
      out.middleCols(c, p->cols()) = *p;
      c += p->cols();
    }
    return out;
  }
};

template <>
struct Algebra<Dual> {
  static Dual from_constant(const Matrix& m) { return {m, Matrix::Zero(m.rows(), m.cols())}; }
  static Dual from_param(const ParamVector& p, const ParamVector* dir, Eigen::Index off,
                         Eigen::Index rows, Eigen::Index cols) {
    return {Eigen::Map<const Matrix>(p.data() + off, rows, cols),
            Eigen::Map<const Matrix>(dir->data() + off, rows, cols)};
  }
  static void scatter(const Dual& g, Eigen::Index off, ParamVector& grad, ParamVector* tangent) {
    grad.segment(off, g.v.size()) += Eigen::Map<const Eigen::VectorXd>(g.v.data(), g.v.size());
    tangent->segment(off, g.t.size()) +=
        Eigen::Map<const Eigen::VectorXd>(g.t.data(), g.t.size());
  }
  static Dual scalar(double s) { return {Matrix::Constant(1, 1, s), Matrix::Zero(1, 1)}; }
  static double value(const Dual& m) { return m.v(0, 0); }
  static bool finite(const Dual& m) { return m.v.allFinite() && m.t.allFinite(); }
  static Dual mul(const Dual& a, const Dual& b) { return {a.v * b.v, a.t * b.v + a.v * b.t}; }
  static Dual mul_nt(const Dual& a, const Dual& b) {
    return {a.v * b.v.transpose(), a.t * b.v.transpose() + a.v * b.t.transpose()};
  }
  static Dual mul_tn(const Dual& a, const Dual& b) {
    return {a.v.transpose() * b.v, a.t.transpose() * b.v + a.v.transpose() * b.t};
  }
  static Dual hadamard(const Dual& a, const Dual& b) {
    return {a.v.cwiseProduct(b.v), a.t.cwiseProduct(b.v) + a.v.cwiseProduct(b.t)};
  }
  static Dual unary(const Dual& x, ScalarFn f, ScalarFn df) {
    return {x.v.unaryExpr(f), x.v.unaryExpr(df).cwiseProduct(x.t)};
  }
  static void add_row(Dual& y, const Dual& b) {
    y.v.rowwise() += b.v.row(0);
    y.t.rowwise() += b.t.row(0);
  }
  static Dual colsum(const Dual& a) { return {a.v.colwise().sum(), a.t.colwise().sum()}; }
  static Dual sub(const Dual& a, const Dual& b) { return {a.v - b.v, a.t - b.t}; }
  static Dual scale(const Dual& a, double c) { return {a.v * c, a.t * c}; }
  static Dual scale_rows(const Dual& a, const Eigen::VectorXd& w) {
    return {w.asDiagonal() * a.v, w.asDiagonal() * a.t};
  }
  static Dual times_scalar(const Dual& a, const Dual& s) {
    return {a.v * s.v(0, 0), a.t * s.v(0, 0) + a.v * s.t(0, 0)};
  }
  static Dual row_weighted_total(const Dual& a, const Eigen::VectorXd& w) {
    return {Matrix::Constant(1, 1, w.dot(a.v.rowwise().sum())),
            Matrix::Constant(1, 1, w.dot(a.t.rowwise().sum()))};
  }
  static void accumulate(Dual& dst, const Dual& src) {
    dst.v += src.v;
    dst.t += src.t;
  }
  static Dual cols(const Dual& a, Eigen::Index c0, Eigen::Index n) {
    return {a.v.middleCols(c0, n), a.t.middleCols(c0, n)};
  }
  static Dual hconcat(const std::vector<const Dual*>& parts, Eigen::Index rows,
                      Eigen::Index cols) {
    Dual out{Matrix(rows, cols), Matrix(rows, cols)};
    Eigen::Index c = 0;
    for (const Dual* p : parts) {
      out.v.middleCols(c, p->v.cols()) = p->v;
      out.t.middleCols(c, p->t.cols()) = p->t;
      c += p->v.cols();
    }
    return out;
  }
};

std::string describe(const Graph& graph, std::size_t i) {
  const Node& n = graph.nodes()[i];
  std::string s = "node " + std::to_string(i) + " (" + op_name(n.kind);
  if (!n.label.empty()) s += " '" + n.label + "'";
  return s + ")";
}

template <class V>
class Engine {
  using A = Algebra<V>;

 public:
  Engine(const Graph& graph, const ParamVector& params, const ParamVector* direction)
      : graph_(graph), params_(params), direction_(direction) {
    if (params.size() != graph.param_dim()) {
      throw ConfigError("parameter vector has dimension " + std::to_string(params.size()) +
                        " but graph expects " + std::to_string(graph.param_dim()));
    }
    if (direction != nullptr && direction->size() != params.size()) {
      throw ConfigError("direction vector dimension " + std::to_string(direction->size()) +
                        " does not match parameter dimension " + std::to_string(params.size()));
    }
  }

  // Evaluates nodes [0, last].
  void forward(std::size_t last) {
    const auto& nodes = graph_.nodes();
    values_.clear();
    values_.reserve(last + 1);
    floored_.assign(last + 1, false);
    for (std::size_t i = 0; i <= last; ++i) {
      values_.push_back(forward_node(i, nodes[i]));
      if (!A::finite(values_.back())) {
        throw NumericError(describe(graph_, i),
                           "non-finite value produced at " + describe(graph_, i));
      }
    }
  }

  const V& value(std::size_t i) const { return values_[i]; }

  // Reverse sweep from the output; gradient into grad, tangent (if any) into tangent.
  void backward(ParamVector& grad, ParamVector* tangent) {
    const auto& nodes = graph_.nodes();
    const std::size_t out = graph_.output().index;
    std::vector<char> needs(out + 1, false);
    for (std::size_t i = 0; i <= out; ++i) {
      if (nodes[i].kind == OpKind::kParam) {
        needs[i] = true;
      } else {
        for (NodeRef r : nodes[i].inputs) needs[i] = needs[i] || needs[r.index];
      }
    }
    std::vector<std::optional<V>> adj(out + 1);
    adj[out] = A::scalar(1.0);
    auto add_to = [&](NodeRef r, V g) {
      if (!needs[r.index]) return;
      if (adj[r.index]) {
        A::accumulate(*adj[r.index], g);
      } else {
        adj[r.index] = std::move(g);
      }
    };
    for (std::size_t ii = out + 1; ii-- > 0;) {
      if (!adj[ii]) continue;
      const Node& n = nodes[ii];
      const V& g = *adj[ii];
      switch (n.kind) {
        case OpKind::kConstant:
          break;
        case OpKind::kParam:
          A::scatter(g, n.offset, grad, tangent);
          break;
        case OpKind::kAffine: {
          const V& x = values_[n.inputs[0].index];
          const V& w = values_[n.inputs[1].index];
          add_to(n.inputs[0], A::mul(g, w));
          add_to(n.inputs[1], A::mul_tn(g, x));
          if (n.has_bias) add_to(n.inputs[2], A::colsum(g));
          break;
        }
        case OpKind::kTanh: {
          const V& x = values_[n.inputs[0].index];
          add_to(n.inputs[0], A::hadamard(g, A::unary(x, tanh_d1, tanh_d2)));
          break;
        }
        case OpKind::kSilu: {
          const V& x = values_[n.inputs[0].index];
          add_to(n.inputs[0], A::hadamard(g, A::unary(x, silu_d1, silu_d2)));
          break;
        }
        case OpKind::kConcat: {
          Eigen::Index c = 0;
          for (NodeRef r : n.inputs) {
            const Eigen::Index w = nodes[r.index].cols;
            add_to(r, A::cols(g, c, w));
            c += w;
          }
          break;
        }
        case OpKind::kSquaredError: {
          const V r = A::sub(values_[n.inputs[0].index], values_[n.inputs[1].index]);
          const Eigen::VectorXd w2 = n.row_weights * (2.0 / static_cast<double>(r_rows(n)));
          V dp = A::times_scalar(A::scale_rows(r, w2), g);
          add_to(n.inputs[1], A::scale(dp, -1.0));
          add_to(n.inputs[0], std::move(dp));
          break;
        }
        case OpKind::kCombine: {
          if (floored_[ii]) break;
          for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            add_to(n.inputs[k], A::scale(g, n.coeffs[k]));
          }
          break;
        }
      }
    }
  }

 private:
  static Eigen::Index r_rows(const Node& n) { return n.row_weights.size(); }

  V forward_node(std::size_t i, const Node& n) {
    switch (n.kind) {
      case OpKind::kConstant:
        return A::from_constant(n.constant);
      case OpKind::kParam:
        return A::from_param(params_, direction_, n.offset, n.rows, n.cols);
      case OpKind::kAffine: {
        V y = A::mul_nt(values_[n.inputs[0].index], values_[n.inputs[1].index]);
        if (n.has_bias) A::add_row(y, values_[n.inputs[2].index]);
        return y;
      }
      case OpKind::kTanh:
        return A::unary(values_[n.inputs[0].index], [](double x) { return std::tanh(x); },
                        tanh_d1);
      case OpKind::kSilu:
        return A::unary(values_[n.inputs[0].index], silu_f, silu_d1);
      case OpKind::kConcat: {
        std::vector<const V*> parts;
        for (NodeRef r : n.inputs) parts.push_back(&values_[r.index]);
        return A::hconcat(parts, n.rows, n.cols);
      }
      case OpKind::kSquaredError: {
        const V r = A::sub(values_[n.inputs[0].index], values_[n.inputs[1].index]);
        const Eigen::Index rows = n.row_weights.size();
        const Eigen::VectorXd w = rows > 0 ? Eigen::VectorXd(n.row_weights / rows)
                                           : Eigen::VectorXd(n.row_weights);
        return A::row_weighted_total(A::hadamard(r, r), w);
      }
      case OpKind::kCombine: {
        V y = A::scalar(n.bias_term);
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          A::accumulate(y, A::scale(values_[n.inputs[k].index], n.coeffs[k]));
        }
        if (n.floor && A::value(y) < *n.floor) {
          floored_[i] = true;
          return A::scalar(*n.floor);
        }
        return y;
      }
    }
    throw ConfigError("unknown node kind at " + describe(graph_, i));
  }

  const Graph& graph_;
  const ParamVector& params_;
  const ParamVector* direction_;
  std::vector<V> values_;
  std::vector<char> floored_;
};

}  // namespace

double eval_loss(const Graph& graph, const ParamVector& params) {
  Engine<Matrix> engine(graph, params, nullptr);
  const std::size_t out = graph.output().index;
  engine.forward(out);
  return engine.value(out)(0, 0);
}

Matrix eval_node(const Graph& graph, const ParamVector& params, NodeRef ref) {
  if (ref.index >= graph.nodes().size()) throw ConfigError("node reference out of range");
  Engine<Matrix> engine(graph, params, nullptr);
  engine.forward(ref.index);
  return engine.value(ref.index);
}

ValueAndGrad value_and_grad(const Graph& graph, const ParamVector& params) {
  Engine<Matrix> engine(graph, params, nullptr);
  const std::size_t out = graph.output().index;
  engine.forward(out);
  ValueAndGrad r;
  r.value = engine.value(out)(0, 0);
  r.grad = ParamVector::Zero(params.size());
  engine.backward(r.grad, nullptr);
  return r;
}

ParamVector grad(const Graph& graph, const ParamVector& params) {
  return value_and_grad(graph, params).grad;
}

GradAndHvp grad_and_hvp(const Graph& graph, const ParamVector& params, const ParamVector& v) {
  Engine<Dual> engine(graph, params, &v);
  const std::size_t out = graph.output().index;
  engine.forward(out);
  GradAndHvp r;
  r.value = engine.value(out).v(0, 0);
  r.grad = ParamVector::Zero(params.size());
  r.hvp = ParamVector::Zero(params.size());
  engine.backward(r.grad, &r.hvp);
  if (!r.hvp.allFinite()) {
    throw NumericError("hvp", "non-finite Hessian-vector product");
  }
  return r;
}

ParamVector hvp(const Graph& graph, const ParamVector& params, const ParamVector& v) {
  return grad_and_hvp(graph, params, v).hvp;
}

}  // namespace resalign
