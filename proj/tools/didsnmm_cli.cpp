// didsnmm command-line front end.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "didsnmm/acceptance.hpp"
#include "didsnmm/derived.hpp"
#include "didsnmm/error.hpp"
#include "didsnmm/parallel.hpp"
#include "didsnmm/regime.hpp"
#include "didsnmm/sensitivity.hpp"
#include "didsnmm/simulation.hpp"

#ifndef DIDSNMM_VERSION
#define DIDSNMM_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace didsnmm;

namespace {

struct Flags {
  std::string config, data, model, nuisance, method, out, dgp, queries, sensitivity, r_component;
  int bootstrap = 0, n = 0, oracle_mc = 0;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  double ridge = 0;
  bool quick = false;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + " is not valid JSON: " + e.what());
  }
}

// inline JSON ("{...}" / "[...]") or a path to a JSON file
json json_arg(const std::string& s, const std::string& what) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && (s[first] == '{' || s[first] == '[')) return parse_json_text(s, what);
  return parse_json_text(read_file(s), what + " '" + s + "'");
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << v;
  return s.str();
}

class Run {
 public:
  Run(std::string sub, const Flags& f, const CLI::App& app) : sub_(std::move(sub)) {
    if (!f.config.empty()) {
      json c = json_arg(f.config, "--config");
      if (c.contains("config") && c.contains("subcommand")) {  // a manifest
        if (c["subcommand"] != sub_)
          throw ConfigError("manifest is for '" + c["subcommand"].get<std::string>() + "', not '" + sub_ + "'",
                            "/subcommand");
        c = c["config"];
      }
      if (!c.is_object()) throw ConfigError("run config must be a JSON object");
      cfg_ = c;
    }
    auto given = [&](const char* flag) {
      const CLI::Option* o = app.get_option_no_throw(flag);
      return o != nullptr && o->count() > 0;
    };
    auto set = [&](const char* flag, const char* key, json v) {
      if (given(flag)) cfg_[key] = std::move(v);
    };
    set("--data", "data", f.data);
    set("--model", "model", f.model.empty() ? json() : json_arg(f.model, "--model"));
    set("--nuisance", "nuisance", f.nuisance.empty() ? json() : json_arg(f.nuisance, "--nuisance"));
    set("--method", "method", f.method);
    set("--bootstrap", "bootstrap", f.bootstrap);
    set("--seed", "seed", f.seed);
    set("--threads", "threads", f.threads);
    set("--out", "out", f.out);
    set("--ridge", "ridge", f.ridge);
    set("--n", "n", f.n);
    set("--oracle-mc", "oracle_mc", f.oracle_mc);
    set("--quick", "quick", f.quick);
    set("--r", "r_component", f.r_component);
    if (given("--dgp")) {
      const auto p = f.dgp.find_first_not_of(" \t");
      cfg_["dgp"] = p != std::string::npos && f.dgp[p] == '{' ? json_arg(f.dgp, "--dgp")
                    : fs::exists(f.dgp)                       ? json_arg(f.dgp, "--dgp")
                                                              : json(f.dgp);
    }
    if (given("--queries")) cfg_["queries"] = json_arg(f.queries, "--queries");
    if (given("--sensitivity")) cfg_["sensitivity"] = json_arg(f.sensitivity, "--sensitivity");
    if (!cfg_.contains("out")) cfg_["out"] = "didsnmm-" + sub_;
    if (!cfg_.contains("seed")) cfg_["seed"] = sub_ == "verify" ? AcceptanceOptions{}.seed : 1;
    set_thread_count(cfg_.value("threads", 0u));
    fs::create_directories(out());
  }

  json& cfg() { return cfg_; }
  std::string out() const { return cfg_["out"].get<std::string>(); }
  std::uint64_t seed() const { return cfg_["seed"].get<std::uint64_t>(); }

  std::optional<DgpConfig> dgp() const {
    if (!cfg_.contains("dgp")) return std::nullopt;
    const json& g = cfg_["dgp"];
    return g.is_string() ? gallery(g.get<std::string>()) : DgpConfig::from_json(g, "/dgp");
  }

  PanelDataset data() {
    if (!cfg_.contains("data")) throw ConfigError("--data is required", "/data");
    const std::string path = cfg_["data"].get<std::string>();
    if (!fs::is_regular_file(path)) throw DataError("cannot read data file '" + path + "'");
    const std::string bytes = read_file(path);
    inputs_["data"] = {{"path", path}, {"fnv1a64", hex(fnv1a(bytes))}};
    return parse_csv(bytes);
  }

  BlipModel model(const PanelDataset& d) {
    if (!cfg_.contains("model")) {
      if (auto g = dgp()) cfg_["model"] = g->analysis_model;
      else throw ConfigError("--model is required", "/model");
    }
    return BlipModel::from_json(cfg_["model"], d, "/model");
  }

  NuisanceSpec nuisance(const PanelDataset& d) {
    if (!cfg_.contains("nuisance")) {
      if (auto g = dgp()) cfg_["nuisance"] = g->analysis_nuisance;
      else cfg_["nuisance"] = json::object();
    }
    return NuisanceSpec::from_json(cfg_["nuisance"], d, "/nuisance");
  }

  FitOptions fit_options(Method fallback) {
    FitOptions o;
    o.method = cfg_.contains("method") ? method_from_string(cfg_["method"].get<std::string>(), "/method") : fallback;
    cfg_["method"] = to_string(o.method);
    o.ridge = cfg_.value("ridge", 0.0);
    if (o.ridge < 0) throw ConfigError("ridge must be non-negative", "/ridge");
    o.solver.seed = seed();
    return o;
  }

  int bootstrap() const {
    const int b = cfg_.value("bootstrap", 0);
    if (b < 0) throw ConfigError("bootstrap must be >= 0", "/bootstrap");
    return b;
  }

  void write(const std::string& name, const std::string& text) {
    const fs::path p = fs::path(out()) / name;
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + p.string() + "'", "/out");
    f << text;
    outputs_.push_back({{"file", name}, {"fnv1a64", hex(fnv1a(text))}});
  }
  void write(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  void manifest() {
    json m = {{"tool", "didsnmm"},
              {"version", DIDSNMM_VERSION},
              {"subcommand", sub_},
              {"config", cfg_},
              {"inputs", inputs_},
              {"outputs", outputs_},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"reproduce", "didsnmm " + sub_ + " --config " + (fs::path(out()) / "manifest.json").string()}};
    std::ofstream(fs::path(out()) / "manifest.json") << m.dump(2) << "\n";
  }

 private:
  std::string sub_;
  json cfg_ = json::object();
  json inputs_ = json::object();
  json outputs_ = json::array();
};

std::string psi_csv(const GEstimate& g) {
  const auto [lo, hi] = g.wald_ci();
  const Eigen::VectorXd se = g.se();
  std::ostringstream s;
  s << "parameter,estimate,se,lo,hi\n";
  for (int j = 0; j < g.psi.size(); ++j)
    s << "\"" << g.names[j] << "\"," << format_number(g.psi[j]) << "," << format_number(se[j]) << ","
      << format_number(lo[j]) << "," << format_number(hi[j]) << "\n";
  return s.str();
}

int cmd_simulate(Run& run) {
  auto g = run.dgp();
  if (!g) throw ConfigError("--dgp is required (a gallery name or a DGP JSON)", "/dgp");
  const int n = run.cfg().value("n", 1000);
  if (n < 1) throw ConfigError("n must be positive", "/n");
  run.cfg()["n"] = n;
  const PanelDataset d = simulate_panel(*g, n, run.seed());
  run.write("panel.csv", to_csv(d));
  run.write("dgp.json", g->to_json());
  const int mc = run.cfg().value("oracle_mc", 0);
  if (mc > 0) run.write("oracle.json", oracle_truth(*g, mc, run.seed() + 1).to_json());
  std::cout << "simulated " << n << " subjects x " << g->K + 1 << " periods (" << g->name << ") -> " << run.out()
            << "\n";
  return 0;
}

std::vector<DerivedEstimate> default_curves(const GEstimate& g, const BlipModel& m, const PanelDataset& d,
                                            std::vector<double>& ks, std::vector<DerivedEstimate>& lag_rows,
                                            std::vector<double>& lags) {
  std::vector<DerivedEstimate> rows;
  for (int k = 0; k <= d.K(); ++k) {
    rows.push_back(observed_vs_never(g, m, d, k));
    ks.push_back(k);
  }
  if (m.flavor == Flavor::coarse) {
    for (int t = 1; t <= d.K(); ++t) {
      try {
        lag_rows.push_back(lag_average_effect(g, m, d, t));
        lags.push_back(t);
      } catch (const DataError&) {
      }
    }
  }
  return rows;
}

int cmd_fit(Run& run) {
  const PanelDataset d = run.data();
  const BlipModel model = run.model(d);
  if (model.flavor == Flavor::regime) throw ConfigError("fit handles coarse, standard and multiplicative models; use 'optimal' for regimes", "/model/flavor");
  const NuisanceSpec spec = run.nuisance(d);
  const FitOptions o = run.fit_options(model.flavor == Flavor::multiplicative ? Method::iterative : Method::crossfit);
  const GEstimate g = fit(d, model, spec, o);
  json out = g.to_json();
  if (run.bootstrap() > 0) {
    const FitClosure closure = [&](const PanelDataset& db) { return fit(db, model, spec, o).psi; };
    out["bootstrap"] = bootstrap(d, closure, run.bootstrap(), run.seed(), g.psi).to_json();
  }
  run.write("fit.json", out);
  run.write("psi.csv", psi_csv(g));
  std::vector<double> ks, lags;
  std::vector<DerivedEstimate> lag_rows;
  const auto rows = default_curves(g, model, d, ks, lag_rows, lags);
  run.write("observed_vs_never.csv", plot_csv("k", ks, rows));
  if (!lag_rows.empty()) run.write("lag_average.csv", plot_csv("lag", lags, lag_rows));
  std::cout << "method " << g.method << ", " << g.psi.size() << " parameters\n" << psi_csv(g);
  return 0;
}

std::vector<json> query_list(const json& q) {
  const json& arr = q.is_object() && q.contains("queries") ? q["queries"] : q;
  if (!arr.is_array()) throw ConfigError("queries must be an array or {\"queries\": [...]}", "/queries");
  return arr.get<std::vector<json>>();
}

int cmd_derive(Run& run) {
  const PanelDataset d = run.data();
  const BlipModel model = run.model(d);
  const NuisanceSpec spec = run.nuisance(d);
  const FitOptions o = run.fit_options(model.flavor == Flavor::multiplicative || model.flavor == Flavor::regime
                                           ? Method::iterative
                                           : Method::crossfit);
  if (!run.cfg().contains("bootstrap")) run.cfg()["bootstrap"] = 200;
  const int B = run.bootstrap();
  if (!run.cfg().contains("queries")) {
    json q = json::array();
    for (int k = 0; k <= d.K(); ++k) q.push_back({{"target", "mean_never_treated"}, {"k", k}});
    for (int k = 1; k <= d.K(); ++k) q.push_back({{"target", "observed_vs_never"}, {"k", k}});
    run.cfg()["queries"] = q;
  }
  const auto items = query_list(run.cfg()["queries"]);

  std::vector<CounterfactualQuery> queries;
  std::vector<json> cde;
  for (size_t j = 0; j < items.size(); ++j) {
    const std::string ptr = "/queries/" + std::to_string(j);
    if (items[j].is_object() && items[j].value("target", "") == "cde") cde.push_back(items[j]);
    else queries.push_back(CounterfactualQuery::from_json(items[j], ptr));
  }

  const GEstimate g = fit(d, model, spec, o);
  std::vector<DerivedEstimate> rows;
  if (B > 0) {
    PipelineOptions po;
    po.B = B;
    po.seed = run.seed();
    rows = pipeline_bootstrap(queries, g, d, model, spec, o, po);
  } else {
    for (auto& q : queries) rows.push_back(evaluate_query(q, g, model, d));
  }

  json cde_out = json::array();
  for (auto& c : cde) {
    CdeOptions co;
    co.fit = o;
    co.bootstrap = B;
    co.seed = run.seed();
    if (c.contains("nuisance")) co.stage2_nuisance = c["nuisance"];
    const CdeResult r = coarse_cde(d, model, spec, c.value("r", run.cfg().value("r_component", std::string("r"))),
                                   c.at("m").get<int>(), c.at("k").get<int>(), co);
    rows.push_back(r.effect);
    cde_out.push_back(r.to_json());
  }

  json out = {{"fit", g.to_json()}, {"estimates", json::array()}};
  for (auto& r : rows) out["estimates"].push_back(r.to_json());
  if (!cde_out.empty()) out["cde"] = cde_out;
  run.write("derived.json", out);

  std::ostringstream csv;
  csv << "label,estimate,se,lo,hi,ci_method\n";
  for (auto& r : rows)
    csv << "\"" << r.label << "\"," << format_number(r.estimate) << "," << format_number(r.se) << ","
        << format_number(r.lo) << "," << format_number(r.hi) << ",\"" << r.ci_method << "\"\n";
  run.write("derived.csv", csv.str());

  // plot-ready curves for the targets indexed by a single horizon
  auto curve = [&](CounterfactualQuery::Target t, const char* file, const char* x) {
    std::vector<double> xs;
    std::vector<DerivedEstimate> sel;
    for (size_t j = 0; j < queries.size(); ++j)
      if (queries[j].target == t) {
        xs.push_back(t == CounterfactualQuery::Target::lag_average ? queries[j].lag : queries[j].k);
        sel.push_back(rows[j]);
      }
    if (!sel.empty()) run.write(file, plot_csv(x, xs, sel));
  };
  curve(CounterfactualQuery::Target::mean_never_treated, "mean_never_treated.csv", "k");
  curve(CounterfactualQuery::Target::observed_vs_never, "observed_vs_never.csv", "k");
  curve(CounterfactualQuery::Target::lag_average, "lag_average.csv", "lag");

  std::cout << csv.str();
  return 0;
}

int cmd_sensitivity(Run& run) {
  const PanelDataset d = run.data();
  const BlipModel model = run.model(d);
  const NuisanceSpec spec = run.nuisance(d);
  SensitivityOptions so;
  so.fit = run.fit_options(Method::closed_form);
  json& sc = run.cfg()["sensitivity"];
  if (sc.is_null()) sc = json::object();
  if (!sc.is_object()) throw ConfigError("sensitivity config must be an object", "/sensitivity");
  if (!sc.contains("family")) sc["family"] = {{"family", "constant"}};
  if (!sc.contains("grid")) sc["grid"] = {-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0};
  if (!sc.contains("targets")) {
    json t = json::array();
    for (auto& name : model.parameter_names()) t.push_back("psi:" + name);
    sc["targets"] = t;
  }
  const BiasFunction family = BiasFunction::from_json(sc["family"], "/sensitivity/family");
  if (!sc["grid"].is_array()) throw ConfigError("grid must be an array of numbers", "/sensitivity/grid");
  std::vector<double> grid;
  for (auto& v : sc["grid"]) {
    if (!v.is_number()) throw ConfigError("grid must be an array of numbers", "/sensitivity/grid");
    grid.push_back(v.get<double>());
  }
  std::vector<SensitivityTarget> targets;
  for (size_t j = 0; j < sc["targets"].size(); ++j)
    targets.push_back(
        SensitivityTarget::from_json(sc["targets"][j], model, "/sensitivity/targets/" + std::to_string(j)));
  so.breakdown = sc.value("breakdown", true);
  const SensitivityCurve curve = sensitivity_grid(d, model, family, grid, targets, spec, so);
  run.write("sensitivity.json", curve.to_json());
  run.write("sensitivity.csv", curve.csv());
  std::cout << curve.csv();
  for (auto& b : curve.breakdown)
    std::cout << "breakdown " << b.target << ": "
              << (b.found ? "c0 = " + format_number(b.c0) : std::string("not found")) << (b.note.empty() ? "" : " (" + b.note + ")")
              << "\n";
  return 0;
}

int cmd_optimal(Run& run) {
  const PanelDataset d = run.data();
  const BlipModel model = run.model(d);
  const NuisanceSpec spec = run.nuisance(d);
  RegimeOptions ro;
  ro.fit = run.fit_options(Method::iterative);
  ro.bootstrap = run.bootstrap();
  ro.seed = run.seed();
  const RegimeFit r = fit_optimal_regime(d, model, spec, ro);
  run.write("regime.json", r.to_json());
  std::cout << "value " << format_number(r.value.estimate) << " [" << format_number(r.value.lo) << ", "
            << format_number(r.value.hi) << "] (" << r.value.ci_method << "), " << r.table.size()
            << " decision rows\n";
  return 0;
}

int cmd_verify(Run& run) {
  AcceptanceOptions ao;
  ao.profile = run.cfg().value("quick", false) ? "quick" : "full";
  ao.seed = run.seed();
  ao.on_result = [](const CriterionResult& r) { std::cout << format_result(r) << std::endl; };
  const auto results = run_acceptance(ao);
  json out = json::array();
  bool failed = false;
  for (auto& r : results) {
    out.push_back({{"id", r.id}, {"name", r.name}, {"status", r.status}, {"detail", r.detail}, {"data", r.data}});
    failed = failed || r.status == "FAIL";
  }
  run.write("acceptance.json", out);
  return failed ? 5 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"g-estimation of structural nested mean models under conditional parallel trends"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DIDSNMM_VERSION);
  Flags f;

  auto common = [&](CLI::App* s, bool data) {
    s->add_option("--config", f.config, "run config JSON, or a manifest.json to reproduce");
    s->add_option("--out", f.out, "output directory");
    s->add_option("--seed", f.seed, "seed");
    s->add_option("--threads", f.threads, "worker threads (0: hardware)");
    if (data) {
      s->add_option("--data", f.data, "long-format panel CSV");
      s->add_option("--model", f.model, "blip model JSON (path or inline)");
      s->add_option("--nuisance", f.nuisance, "nuisance spec JSON (path or inline)");
      s->add_option("--method", f.method, "closed-form | iterative | crossfit");
      s->add_option("--ridge", f.ridge, "ridge penalty on the estimating equations");
      s->add_option("--dgp", f.dgp, "gallery name or DGP JSON supplying default model and nuisance");
    }
  };
  auto* sim = app.add_subcommand("simulate", "draw a panel from a gallery or custom DGP");
  common(sim, false);
  sim->add_option("--dgp", f.dgp, "gallery name, DGP JSON path or inline JSON");
  sim->add_option("--n", f.n, "subjects");
  sim->add_option("--oracle-mc", f.oracle_mc, "Monte Carlo size for oracle.json (0: skip)");

  auto* fitc = app.add_subcommand("fit", "estimate psi");
  common(fitc, true);
  fitc->add_option("--bootstrap", f.bootstrap, "nonparametric bootstrap replicates for psi");

  auto* der = app.add_subcommand("derive", "counterfactual means and contrasts");
  common(der, true);
  der->add_option("--queries", f.queries, "query list JSON (path or inline)");
  der->add_option("--bootstrap", f.bootstrap, "pipeline bootstrap replicates (default 200, 0: delta method)");
  der->add_option("--r", f.r_component, "second treatment for cde queries");

  auto* sens = app.add_subcommand("sensitivity", "bias-adjusted fits over a grid of c0");
  common(sens, true);
  sens->add_option("--sensitivity", f.sensitivity, "{family, grid, targets} JSON (path or inline)");

  auto* opt = app.add_subcommand("optimal", "optimal treatment regime");
  common(opt, true);
  opt->add_option("--bootstrap", f.bootstrap, "pipeline bootstrap replicates for the regime value");

  auto* ver = app.add_subcommand("verify", "run the acceptance checks");
  common(ver, false);
  ver->add_flag("--quick", f.quick, "small replicate counts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    for (auto* s : app.get_subcommands()) {
      Run run(s->get_name(), f, *s);
      int rc = 0;
      if (s == sim) rc = cmd_simulate(run);
      else if (s == fitc) rc = cmd_fit(run);
      else if (s == der) rc = cmd_derive(run);
      else if (s == sens) rc = cmd_sensitivity(run);
      else if (s == opt) rc = cmd_optimal(run);
      else rc = cmd_verify(run);
      run.manifest();
      return rc;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const EstimationError& e) {
    std::cerr << "estimation error: " << e.what() << "\n";
    return 4;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
