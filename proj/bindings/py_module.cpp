#include <pybind11/iostream.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <iostream>

#include "mlso/cli.hpp"
#include "mlso/episodes.hpp"
#include "mlso/matching.hpp"
#include "mlso/objectives.hpp"
#include "mlso/sop.hpp"
#include "mlso/verify.hpp"

namespace py = pybind11;
using namespace mlso;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape;
  for (py::ssize_t d = 0; d < a.ndim(); ++d) shape.push_back(static_cast<int>(a.shape(d)));
  std::vector<double> values(a.data(), a.data() + a.size());
  return Tensor::from(std::move(shape), std::move(values));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape;
  for (int d : t.shape()) shape.push_back(d);
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::array_t<double> matrix_op(const py::array_t<double>& m,
                              const std::function<Tensor(const Tensor&)>& fn) {
  py::array_t<double, py::array::c_style | py::array::forcecast> a(m);
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  return array_from_tensor(fn(tensor_from_array(a)));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Second-order pooling, power normalization, matching, and episodic "
            "training primitives";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "autocorrelation",
      [](const py::array_t<double>& phi) {
        return matrix_op(phi, [](const Tensor& t) { return autocorrelation(t); });
      },
      py::arg("phi"), "(1/N) Phi Phi^T for a feature map [K, N].");

  m.def(
      "trace_normalize",
      [](const py::array_t<double>& mat, double lambda) {
        return matrix_op(mat, [&](const Tensor& t) { return trace_normalize(t, lambda); });
      },
      py::arg("m"), py::arg("lambda_") = 1e-6, "M / (trace(M) + lambda).");

  m.def(
      "pn_maxexp",
      [](const py::array_t<double>& mat, double eta) {
        return matrix_op(mat, [&](const Tensor& t) { return pn_maxexp(t, eta); });
      },
      py::arg("m"), py::arg("eta"), "min(eta * M, 1) elementwise.");

  m.def(
      "pn_maxexp_pm",
      [](const py::array_t<double>& mat, double eta, double rho, double alpha) {
        return matrix_op(mat,
                         [&](const Tensor& t) { return pn_maxexp_pm(t, eta, rho, alpha); });
      },
      py::arg("m"), py::arg("eta"), py::arg("rho") = 0.5, py::arg("alpha") = 400.0,
      "Smooth positive/negative co-occurrence pooling.");

  m.def(
      "pn_sigme",
      [](const py::array_t<double>& mat, double eta_prime, double lambda) {
        return matrix_op(mat, [&](const Tensor& t) { return pn_sigme(t, eta_prime, lambda); });
      },
      py::arg("m"), py::arg("eta_prime"), py::arg("lambda_") = 1e-6,
      "2 / (1 + exp(-eta' M / (tr M + lambda))) - 1.");

  m.def("maxexp", &pnref::maxexp, py::arg("p"), py::arg("eta"));
  m.def("maxexp_clamp", &pnref::maxexp_clamp, py::arg("p"), py::arg("eta"));
  m.def("maxexp_pm_hard", &pnref::maxexp_pm_hard, py::arg("p"), py::arg("eta"),
        py::arg("rho") = 0.5);
  m.def("maxexp_pm_soft", &pnref::maxexp_pm_soft, py::arg("p"), py::arg("eta"),
        py::arg("rho") = 0.5, py::arg("alpha") = 400.0);
  m.def("sigme", &pnref::sigme, py::arg("p"), py::arg("eta_prime"));
  m.def("cooccurrence_difference", &pnref::cooccurrence_difference, py::arg("n"), py::arg("p"),
        py::arg("q"), "(1-q)^n - (1-p)^n.");

  m.def("rbf_scale_prior", &rbf_scale_prior, py::arg("s"), py::arg("s_prime"),
        py::arg("num_scales"));

  m.def(
      "solve_transport",
      [](const py::array_t<double>& cost, std::vector<double> row_marginals,
         std::vector<double> col_marginals) {
        py::array_t<double, py::array::c_style | py::array::forcecast> c(cost);
        if (c.ndim() != 2) throw std::invalid_argument("cost must be 2-D");
        const int rows = static_cast<int>(c.shape(0));
        const int cols = static_cast<int>(c.shape(1));
        std::vector<double> flat(c.data(), c.data() + c.size());
        TransportPlan plan = solve_transport(flat, rows, cols, std::move(row_marginals),
                                             std::move(col_marginals));
        py::array_t<double> flow({rows, cols});
        std::copy(plan.flow.begin(), plan.flow.end(), flow.mutable_data());
        return py::make_tuple(flow, plan.objective);
      },
      py::arg("cost"), py::arg("row_marginals"), py::arg("col_marginals"),
      "Exact balanced transportation plan; returns (plan, objective).");

  m.def(
      "infer",
      [](const py::array_t<double>& scores) {
        py::array_t<double, py::array::c_style | py::array::forcecast> s(scores);
        if (s.ndim() != 2) throw std::invalid_argument("scores must be [way, votes]");
        std::vector<std::vector<std::pair<double, double>>> votes(
            static_cast<std::size_t>(s.shape(0)));
        for (py::ssize_t l = 0; l < s.shape(0); ++l) {
          for (py::ssize_t d = 0; d < s.shape(1); ++d) {
            votes[static_cast<std::size_t>(l)].emplace_back(1.0, s.at(l, d));
          }
        }
        return infer_class(votes);
      },
      py::arg("scores"),
      "Class index minimizing the summed squared deviation of its votes from 1.");

  m.def(
      "gen_synthetic",
      [](int num_classes, int samples_per_class, std::uint64_t seed) {
        Dataset ds = gen_synthetic(num_classes, samples_per_class, seed);
        py::array_t<double> out({num_classes, samples_per_class, ds.height, ds.width});
        double* dst = out.mutable_data();
        for (const auto& per_class : ds.samples) {
          for (const auto& img : per_class) {
            std::copy(img.pixels.begin(), img.pixels.end(), dst);
            dst += img.pixels.size();
          }
        }
        return out;
      },
      py::arg("num_classes"), py::arg("samples_per_class"), py::arg("seed"),
      "Deterministic Gaussian-blob dataset as [classes, samples, 32, 32].");

  m.def(
      "verify",
      [](std::uint64_t seed) {
        std::vector<std::string> failures;
        for (const auto& check : run_verification(seed)) {
          if (!check.passed) failures.push_back(check.suite + ": " + check.name);
        }
        return failures;
      },
      py::arg("seed") = 20240, "Runs the property suites; returns the failed check names.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        py::scoped_ostream_redirect out;
        py::scoped_ostream_redirect err(std::cerr, py::module_::import("sys").attr("stderr"));
        return run_cli(args, std::cout, std::cerr);
      },
      py::arg("args"),
      "Invokes the command-line driver (train/eval/verify); returns the exit code.");
}
