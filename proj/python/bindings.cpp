#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "metaiqa/evaluate.hpp"
#include "metaiqa/harness.hpp"
#include "metaiqa/metalearn.hpp"
#include "metaiqa/model.hpp"
#include "metaiqa/optimizer.hpp"

namespace py = pybind11;
using namespace metaiqa;

namespace {

py::dict row_dict(const ResultRow& r) {
  py::dict d;
  d["run_id"] = r.run_id;
  d["seed"] = r.seed;
  d["protocol"] = r.protocol;
  d["unit"] = r.unit;
  d["phase"] = r.phase;
  d["plcc"] = r.plcc;
  d["srocc"] = r.srocc;
  d["loss"] = r.loss;
  d["wall_ms"] = r.wall_ms;
  return d;
}

py::list rows(const ResultsTable& t) {
  py::list out;
  for (const auto& r : t.sorted().rows) out.append(row_dict(r));
  return out;
}

}  // namespace

PYBIND11_MODULE(_metaiqa, m) {
  m.doc() = "Meta-learned quality priors for no-reference image quality assessment";

  py::register_exception<Error>(m, "MetaIQAError", PyExc_RuntimeError);

  m.def("plcc", [](std::vector<double> truth, std::vector<double> pred) { return plcc(truth, pred); },
        py::arg("truth"), py::arg("predicted"));
  m.def("srocc", [](std::vector<double> truth, std::vector<double> pred) { return srocc(truth, pred); },
        py::arg("truth"), py::arg("predicted"));
  m.def("fractional_ranks", [](std::vector<double> v) { return fractional_ranks(v); });
  m.def("derive_seed", &derive_seed, py::arg("base"), py::arg("tag"));

  m.def(
      "adam_trajectory",
      [](double theta, double grad, double alpha, std::size_t steps, double mu1, double mu2, double epsilon) {
        AdamOptions o;
        o.mu1 = mu1;
        o.mu2 = mu2;
        o.epsilon = epsilon;
        o.validate();
        double mv = 0.0, vv = 0.0;
        std::vector<double> out;
        for (std::uint64_t t = 1; t <= steps; ++t) {
          adam_update<double>({&theta, 1}, {&grad, 1}, {&mv, 1}, {&vv, 1}, o, alpha, t);
          out.push_back(theta);
        }
        return out;
      },
      py::arg("theta"), py::arg("grad"), py::arg("alpha"), py::arg("steps"), py::arg("mu1") = 0.9,
      py::arg("mu2") = 0.99, py::arg("epsilon") = 1e-8);

  m.def(
      "outer_update",
      [](std::vector<double> theta, const std::vector<std::vector<double>>& adapted, double beta) {
        std::vector<std::span<const double>> spans;
        for (const auto& a : adapted) {
          require(a.size() == theta.size(), "adapted vectors must match theta in length");
          spans.emplace_back(a);
        }
        outer_update_buffer<double>(theta, spans, beta);
        return theta;
      },
      py::arg("theta"), py::arg("adapted"), py::arg("beta"));

  py::class_<ExperimentConfig>(m, "Config")
      .def(py::init<>())
      .def_static("parse", &parse_config, py::arg("text"))
      .def_static("load", &load_config, py::arg("path"))
      .def("canonical", &ExperimentConfig::canonical)
      .def("hash", &ExperimentConfig::hash)
      .def("validate", &ExperimentConfig::validate)
      .def_readwrite("seeds", &ExperimentConfig::seeds)
      .def_readwrite("held_out", &ExperimentConfig::held_out)
      .def_readwrite("jobs", &ExperimentConfig::jobs)
      .def_readwrite("protocol", &ExperimentConfig::protocol);

  m.def("run_protocol", [](const ExperimentConfig& c) { return rows(run_protocol(c)); }, py::arg("config"));
  m.def("run_protocol_csv", [](const ExperimentConfig& c) { return format_results(run_protocol(c)); },
        py::arg("config"), py::call_guard<py::gil_scoped_release>());
  m.attr("RESULTS_HEADER") = kResultsHeader;

  py::class_<ParamSet>(m, "Model")
      .def_static(
          "build", [](const ExperimentConfig& c, std::uint64_t seed) { return build_model(c.backbone, seed); },
          py::arg("config"), py::arg("seed"))
      .def_static(
          "load", [](const std::filesystem::path& p, const ExperimentConfig& c) { return load_checkpoint(p, c.backbone); },
          py::arg("path"), py::arg("config"))
      .def("save", [](const ParamSet& p, const std::filesystem::path& path) { save_checkpoint(p, path); }, py::arg("path"))
      .def_property_readonly("names",
                             [](const ParamSet& p) {
                               std::vector<std::string> out;
                               for (std::size_t i = 0; i < p.size(); ++i) out.push_back(p.name(i));
                               return out;
                             })
      .def_property_readonly("parameter_count", &ParamSet::parameter_count)
      .def_property_readonly("checksum", [](const ParamSet& p) { return to_hex(p.checksum()); })
      .def(
          "predict",
          [](const ParamSet& p, py::array_t<float, py::array::c_style | py::array::forcecast> images) {
            Shape shape(images.shape(), images.shape() + images.ndim());
            std::vector<float> data(images.data(), images.data() + images.size());
            return predict(p, Tensor(shape, std::move(data)));
          },
          py::arg("images"))
      .def("__eq__", [](const ParamSet& a, const ParamSet& b) { return a == b; });
}
