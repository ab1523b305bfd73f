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

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "resalign/config.hpp"
#include "resalign/errors.hpp"
#include "resalign/hypergrad.hpp"
#include "resalign/pipeline.hpp"
#include "resalign/rng.hpp"

namespace py = pybind11;
using namespace resalign;

namespace {

IterationForm parse_form(const std::string& s) {
  if (s == "identity_plus_gamma_h") return IterationForm::kIdentityPlusGammaH;
  if (s == "gamma_identity_plus_h") return IterationForm::kGammaIdentityPlusH;
  throw UsageError("unknown iteration form '" + s +
                   "' (expected identity_plus_gamma_h or gamma_identity_plus_h)");
}

py::dict report_dict(const HarmfulnessReport& r) {
  py::dict d;
  d["harmful_fraction"] = r.harmful_fraction;
  d["harmful_loss_heldout"] = r.harmful_loss_heldout;
  d["n_samples"] = r.n_samples;
  d["seed"] = r.seed;
  return d;
}

py::dict eval_dict(const ModelEval& e) {
  py::dict d = report_dict(e.report);
  d["label"] = e.label;
  d["trace"] = e.trace.estimate;
  d["trace_std_error"] = e.trace.std_error;
  py::list curve;
  for (const CurvePoint& p : e.curve.points) curve.append(py::make_tuple(p.step, p.report.harmful_fraction));
  d["curve"] = curve;
  d["curve_truncated"] = e.curve.truncated;
  d["auc"] = e.curve.points.empty() ? 0.0 : curve_area(e.curve);
  py::list sweep;
  for (const SweepPoint& p : e.sweep) sweep.append(py::make_tuple(p.ratio, p.report.harmful_fraction));
  d["contamination"] = sweep;
  return d;
}

// 0.5 x'Hx - b'x written as 0.5 ||x L||^2 - b'x with H = L L'.
Graph quadratic(const Matrix& H, const ParamVector& b) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(H);
  const Matrix L = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  Graph g(H.rows());
  const NodeRef x = g.param(0, 1, H.rows(), "x");
  const NodeRef sq = g.squared_error(g.affine(x, g.constant(L.transpose())), g.constant(Matrix::Zero(1, H.rows())));
  g.set_output(g.combine({{0.5, sq}, {-1.0, g.affine(x, g.constant(b.transpose()))}}));
  return g;
}

Graph linear(const ParamVector& b) {
  Graph g(b.size());
  const NodeRef x = g.param(0, 1, b.size(), "x");
  g.set_output(g.combine({{1.0, g.affine(x, g.constant(b.transpose()))}}));
  return g;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Resilient unlearning on a toy conditional diffusion testbed";

  py::register_exception<Error>(m, "ResalignError", PyExc_RuntimeError);

  m.def("derive_seed", &derive_seed, py::arg("master"), py::arg("path"),
        "Child seed for a named path under a master seed.");

  py::class_<RunConfig>(m, "Config")
      .def(py::init<>())
      .def_static("load", &load_config, py::arg("path"))
      .def_static("parse", &parse_config, py::arg("text"))
      .def("text", &to_text)
      .def("validate", &RunConfig::validate)
      .def_readwrite("seed", &RunConfig::seed)
      .def_readwrite("run_id", &RunConfig::run_id)
      .def_property(
          "pretrain_steps", [](const RunConfig& c) { return c.pretrain.steps; },
          [](RunConfig& c, int v) { c.pretrain.steps = v; })
      .def_property(
          "outer_steps", [](const RunConfig& c) { return c.unlearn.outer_steps; },
          [](RunConfig& c, int v) { c.unlearn.outer_steps = v; })
      .def_property(
          "gamma", [](const RunConfig& c) { return c.unlearn.hypergrad.gamma; },
          [](RunConfig& c, double v) { c.unlearn.hypergrad.gamma = v; })
      .def_property(
          "beta", [](const RunConfig& c) { return c.unlearn.beta; },
          [](RunConfig& c, double v) { c.unlearn.beta = v; })
      .def("__repr__", [](const RunConfig& c) {
        return "<Config run_id='" + c.run_id + "' seed=" + std::to_string(c.seed) + ">";
      });

  py::class_<Testbed>(m, "Testbed")
      .def(py::init([](const RunConfig& c) {
             c.validate();
             return build_testbed(c);
           }),
           py::arg("config"))
      .def_property_readonly("param_dim", [](const Testbed& t) { return t.net.param_dim(); })
      .def_property_readonly("architecture", [](const Testbed& t) { return t.net.arch().descriptor(); });

  m.def(
      "train_base",
      [](const RunConfig& c, const Testbed& t) {
        py::gil_scoped_release nogil;
        return train_base(c, t);
      },
      py::arg("config"), py::arg("testbed"));

  m.def(
      "unlearn",
      [](const RunConfig& c, Testbed& t, const ParamVector& theta0, const std::string& method) {
        std::pair<ParamVector, UnlearnRunRecord> out;
        {
          py::gil_scoped_release nogil;
          out = unlearn(c, t, theta0, parse_method(method));
        }
        py::dict record;
        record["harmful_loss"] = out.second.harmful_loss;
        record["preserve_loss"] = out.second.preserve_loss;
        record["mean_residual"] = out.second.mean_residual;
        record["skipped"] = out.second.skipped;
        return py::make_tuple(out.first, record);
      },
      py::arg("config"), py::arg("testbed"), py::arg("theta0"), py::arg("method") = "resalign",
      "Runs the unlearner from theta0; returns (theta, per-step record).");

  m.def(
      "attack",
      [](const RunConfig& c, Testbed& t, const ParamVector& theta, double contamination) {
        py::gil_scoped_release nogil;
        return attack(c, t, theta, contamination);
      },
      py::arg("config"), py::arg("testbed"), py::arg("theta"), py::arg("contamination") = 0.0);

  m.def(
      "evaluate",
      [](const RunConfig& c, Testbed& t, const ParamVector& theta, const std::string& label, bool sweep) {
        ModelEval e;
        {
          py::gil_scoped_release nogil;
          e = evaluate_model(c, t, theta, label, sweep);
        }
        return eval_dict(e);
      },
      py::arg("config"), py::arg("testbed"), py::arg("theta"), py::arg("label") = "model",
      py::arg("with_sweep") = true);

  m.def(
      "harmful_fraction",
      [](const Testbed& t, const ParamVector& theta, std::uint64_t seed, std::size_t n_samples) {
        EvalSettings s;
        s.n_samples = n_samples;
        HarmfulnessReport r;
        {
          py::gil_scoped_release nogil;
          r = harmful_fraction(t, theta, seed, s);
        }
        return report_dict(r);
      },
      py::arg("testbed"), py::arg("theta"), py::arg("seed"), py::arg("n_samples") = 1000);

  m.def(
      "save_checkpoint",
      [](const std::filesystem::path& path, const Testbed& t, const ParamVector& theta) {
        if (theta.size() != t.net.param_dim()) throw UsageError("parameter vector does not match the testbed");
        write_checkpoint(path, make_checkpoint(t, theta));
      },
      py::arg("path"), py::arg("testbed"), py::arg("theta"));
  m.def("load_checkpoint", &load_params, py::arg("testbed"), py::arg("path"));

  m.def(
      "solve_quadratic_hypergrad",
      [](const Matrix& H, const ParamVector& g, double gamma, int K, const std::string& form) {
        if (H.rows() != H.cols() || H.rows() != g.size()) throw UsageError("H must be square and match g");
        HypergradSettings s;
        s.gamma = gamma;
        s.K = K;
        s.form = parse_form(form);
        const ParamVector at = ParamVector::Zero(g.size());
        const HypergradResult r = solve_hypergrad(linear(g), quadratic(H, ParamVector::Zero(g.size())), at, at, s);
        return py::make_tuple(r.x, r.residuals, r.diverged);
      },
      py::arg("H"), py::arg("g"), py::arg("gamma") = 1.0, py::arg("K") = 5,
      py::arg("form") = "identity_plus_gamma_h",
      "Richardson solve on the quadratic with Hessian H; returns (x, residuals, diverged).");
  m.def(
      "dense_solve",
      [](const Matrix& H, const ParamVector& g, double gamma, const std::string& form) {
        return dense_solve_oracle(H, g, gamma, parse_form(form));
      },
      py::arg("H"), py::arg("g"), py::arg("gamma") = 1.0, py::arg("form") = "identity_plus_gamma_h");
}
