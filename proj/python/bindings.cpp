// Thin pybind11 layer. Structured arguments and results cross as JSON text;
// the python package converts to and from dicts.
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "didsnmm/acceptance.hpp"
#include "didsnmm/derived.hpp"
#include "didsnmm/error.hpp"
#include "didsnmm/parallel.hpp"
#include "didsnmm/regime.hpp"
#include "didsnmm/sensitivity.hpp"
#include "didsnmm/simulation.hpp"

namespace py = pybind11;
using namespace didsnmm;

namespace {

json parse(const std::string& s) { return s.empty() ? json::object() : json::parse(s); }

DgpConfig dgp_from(const std::string& s) {
  const auto p = s.find_first_not_of(" \t\r\n");
  if (p != std::string::npos && s[p] == '{') return DgpConfig::from_json(json::parse(s));
  return gallery(s);
}

FitOptions options(const std::string& method, double ridge, std::uint64_t seed) {
  FitOptions o;
  o.method = method_from_string(method);
  o.ridge = ridge;
  o.solver.seed = seed;
  return o;
}

// a fit together with everything needed to evaluate queries against it
struct Fit {
  PanelDataset data;
  BlipModel model;
  NuisanceSpec spec;
  FitOptions opts;
  GEstimate est;
};

Fit make_fit(const PanelDataset& d, const std::string& model, const std::string& nuisance, const std::string& method,
             double ridge, std::uint64_t seed, double bias_c0, const std::string& bias_family) {
  Fit f{d, BlipModel::from_json(parse(model), d, "/model"), NuisanceSpec::from_json(parse(nuisance), d, "/nuisance"),
        options(method, ridge, seed), {}};
  if (!bias_family.empty()) {
    json b = parse(bias_family);
    b["c0"] = bias_c0;
    f.est = sensitivity_fit(d, f.model, BiasFunction::from_json(b, "/bias"), f.spec, f.opts);
  } else {
    f.est = fit(d, f.model, f.spec, f.opts);
  }
  return f;
}

}  // namespace

PYBIND11_MODULE(_didsnmm, m) {
  m.doc() = "compiled core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<EstimationError>(m, "EstimationError", PyExc_RuntimeError);

  py::class_<PanelDataset>(m, "Panel")
      .def_static("parse_csv", [](const std::string& text) { return parse_csv(text); })
      .def_static("load_csv", [](const std::string& path) { return load_csv(path); })
      .def("to_csv", [](const PanelDataset& d) { return to_csv(d); })
      .def_property_readonly("n", &PanelDataset::n)
      .def_property_readonly("K", &PanelDataset::K)
      .def_property_readonly("treatment_names", &PanelDataset::treatment_names)
      .def_property_readonly("covariate_names", &PanelDataset::covariate_names)
      .def_property_readonly("time_labels", &PanelDataset::time_labels)
      .def("outcomes",
           [](const PanelDataset& d) {
             Eigen::MatrixXd y(d.n(), d.periods());
             for (int i = 0; i < d.n(); ++i)
               for (int t = 0; t < d.periods(); ++t) y(i, t) = d.y(i, t);
             return y;
           })
      .def("treatment",
           [](const PanelDataset& d, const std::string& name) {
             const int c = d.treatment_index(name);
             if (c < 0) throw ConfigError("no treatment named '" + name + "'");
             Eigen::MatrixXd a(d.n(), d.periods());
             for (int i = 0; i < d.n(); ++i)
               for (int t = 0; t < d.periods(); ++t) a(i, t) = d.a(i, c, t);
             return a;
           })
      .def("covariate",
           [](const PanelDataset& d, const std::string& name) {
             const int c = d.covariate_index(name);
             if (c < 0) throw ConfigError("no covariate named '" + name + "'");
             Eigen::MatrixXd z(d.n(), d.periods());
             for (int i = 0; i < d.n(); ++i)
               for (int t = 0; t < d.periods(); ++t) z(i, t) = d.z(i, c, t);
             return z;
           })
      .def("subset", &PanelDataset::subset);

  m.def("gallery_names", &gallery_names);
  m.def("gallery", [](const std::string& name) { return gallery(name).to_json().dump(); });
  m.def("simulate", [](const std::string& dgp, int n, std::uint64_t seed) { return simulate_panel(dgp_from(dgp), n, seed); });
  m.def("oracle_truth", [](const std::string& dgp, int mc, std::uint64_t seed) {
    return oracle_truth(dgp_from(dgp), mc, seed).to_json().dump();
  });
  m.def("set_threads", &set_thread_count);

  py::class_<Fit>(m, "Fit")
      .def_property_readonly("psi", [](const Fit& f) { return f.est.psi; })
      .def_property_readonly("se", [](const Fit& f) { return Eigen::VectorXd(f.est.se()); })
      .def_property_readonly("covariance", [](const Fit& f) { return f.est.covariance; })
      .def_property_readonly("influence", [](const Fit& f) { return f.est.influence; })
      .def_property_readonly("names", [](const Fit& f) { return f.est.names; })
      .def_property_readonly("method", [](const Fit& f) { return f.est.method; })
      .def("to_json", [](const Fit& f) { return f.est.to_json().dump(); })
      .def("query",
           [](const Fit& f, const std::string& q) {
             return evaluate_query(CounterfactualQuery::from_json(parse(q)), f.est, f.model, f.data).to_json().dump();
           })
      .def("pipeline_bootstrap",
           [](const Fit& f, const std::string& qs, int B, std::uint64_t seed) {
             std::vector<CounterfactualQuery> queries;
             for (auto& q : parse(qs)) queries.push_back(CounterfactualQuery::from_json(q));
             PipelineOptions po;
             po.B = B;
             po.seed = seed;
             json out = json::array();
             for (auto& e : pipeline_bootstrap(queries, f.est, f.data, f.model, f.spec, f.opts, po))
               out.push_back(e.to_json());
             return out.dump();
           })
      .def("cde", [](const Fit& f, const std::string& r, int mm, int k, int B, std::uint64_t seed) {
        CdeOptions co;
        co.fit = f.opts;
        co.bootstrap = B;
        co.seed = seed;
        return coarse_cde(f.data, f.model, f.spec, r, mm, k, co).to_json().dump();
      });

  m.def("fit", &make_fit, py::arg("data"), py::arg("model"), py::arg("nuisance"), py::arg("method"),
        py::arg("ridge") = 0.0, py::arg("seed") = 7, py::arg("bias_c0") = 0.0, py::arg("bias_family") = "",
        py::call_guard<py::gil_scoped_release>());

  m.def(
      "sensitivity",
      [](const PanelDataset& d, const std::string& model, const std::string& nuisance, const std::string& family,
         const std::vector<double>& grid, const std::string& targets, const std::string& method) {
        const BlipModel bm = BlipModel::from_json(parse(model), d, "/model");
        const NuisanceSpec spec = NuisanceSpec::from_json(parse(nuisance), d, "/nuisance");
        std::vector<SensitivityTarget> ts;
        for (auto& t : parse(targets)) ts.push_back(SensitivityTarget::from_json(t, bm));
        SensitivityOptions so;
        so.fit.method = method_from_string(method);
        return sensitivity_grid(d, bm, BiasFunction::from_json(parse(family), "/family"), grid, ts, spec, so)
            .to_json()
            .dump();
      },
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "optimal_regime",
      [](const PanelDataset& d, const std::string& model, const std::string& nuisance, const std::string& method,
         std::uint64_t seed) {
        const BlipModel bm = BlipModel::from_json(parse(model), d, "/model");
        const NuisanceSpec spec = NuisanceSpec::from_json(parse(nuisance), d, "/nuisance");
        RegimeOptions ro;
        ro.fit.method = method_from_string(method);
        ro.fit.solver.seed = seed;
        ro.seed = seed;
        return fit_optimal_regime(d, bm, spec, ro).to_json().dump();
      },
      py::call_guard<py::gil_scoped_release>());

  m.def("run_acceptance", [](const std::string& profile, const std::vector<int>& only) {
    AcceptanceOptions ao;
    ao.profile = profile;
    ao.only = only;
    json out = json::array();
    for (auto& r : run_acceptance(ao))
      out.push_back({{"id", r.id}, {"name", r.name}, {"status", r.status}, {"detail", r.detail}, {"data", r.data}});
    return out.dump();
  });
}
