#include "vppflex/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>

#include "CLI11.hpp"
#include "vppflex/artifacts.hpp"
#include "vppflex/error.hpp"
#include "vppflex/log.hpp"
#include "vppflex/parallel.hpp"

#ifndef VPPFLEX_VERSION
#define VPPFLEX_VERSION "0.0.0"
#endif
#ifndef VPPFLEX_DATA_DIR
#define VPPFLEX_DATA_DIR "data"
#endif

namespace vppflex::cli {

namespace fs = std::filesystem;
using io::json;

namespace {

// Flags shared by the stage subcommands. Unset optionals keep the case
// file's configuration.
struct Flags {
  std::string case_path;
  std::string out;
  std::string out_dir = "vppflex-demo";
  int jobs = 0;
  bool quiet = false;
  std::vector<double> gamma_grid;
  std::vector<double> polygon_gammas;
  std::optional<double> gamma, theta, eps;
  std::optional<int> angles, partitions, max_iter, cost_samples, grid, scenarios, period;
  std::optional<std::uint64_t> seed;
  bool selective = false;
  bool nonlinear = false;
  int lin_samples = 500;
  bool quick = false;
  // gmm-fit
  std::string samples_path;
  std::string components = "";
  std::optional<int> max_components;
};

std::uint64_t fnv1a(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// "dir/name.json" -> "dir/name<suffix>".
std::string sibling(const std::string& out, const std::string& suffix) {
  fs::path p(out);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

json config_to_json(const io::RunConfig& c) {
  return {{"gamma_grid", c.gamma_grid},
          {"angles", c.angles},
          {"partitions", c.partitions},
          {"outside_margin", c.outside_margin},
          {"gamma", c.gamma},
          {"theta", c.theta},
          {"eps", c.eps},
          {"max_iter", c.max_iter},
          {"cost_samples", c.cost_samples},
          {"cost_partitions", c.cost_partitions},
          {"mc_grid", c.mc_grid},
          {"mc_scenarios", c.mc_scenarios},
          {"seed", c.seed},
          {"components", c.components},
          {"max_components", c.max_components}};
}

class Run {
 public:
  Run(std::string command, const Flags& f, std::ostream& out) : command_(std::move(command)), f_(f), out_(out) {
    jobs_ = f.jobs > 0 ? f.jobs : default_jobs();
  }

  int jobs() const { return jobs_; }
  std::ostream& out() { return out_; }

  void input(const std::string& path) {
    for (const auto& i : inputs_)
      if (i["path"] == path) return;
    inputs_.push_back({{"path", path}, {"bytes", fs::file_size(path)}, {"fnv1a64", fnv1a(path)}});
  }
  void output(const std::string& path) { outputs_.push_back(path); }
  void timing(const std::string& stage, double seconds) { timings_[stage] = seconds; }

  // Case bundle with flag overrides applied.
  const io::CaseBundle& bundle() {
    if (!bundle_) {
      if (f_.case_path.empty()) throw RangeError("--case is required");
      auto b = io::read_case(f_.case_path);
      auto& c = b.config;
      if (!f_.gamma_grid.empty()) c.gamma_grid = f_.gamma_grid;
      if (f_.gamma) c.gamma = *f_.gamma;
      if (f_.theta) c.theta = *f_.theta;
      if (f_.eps) c.eps = *f_.eps;
      if (f_.angles) c.angles = *f_.angles;
      if (f_.max_iter) c.max_iter = *f_.max_iter;
      if (f_.grid) c.mc_grid = *f_.grid;
      if (f_.scenarios) c.mc_scenarios = *f_.scenarios;
      if (f_.seed) c.seed = *f_.seed;
      if (f_.partitions) {
        if (command_ == "cost")
          c.cost_partitions = *f_.partitions;
        else
          c.partitions = *f_.partitions;
      }
      if (f_.cost_samples) c.cost_samples = *f_.cost_samples;
      c.validate();
      for (const auto& p : {b.path, b.network_file, b.fleet_file, b.profiles_file, b.samples_file, b.gmm_file})
        if (!p.empty()) input(p);
      bundle_ = std::move(b);
    }
    return *bundle_;
  }

  const cc::VppModel& model() {
    if (!model_) {
      const auto t0 = std::chrono::steady_clock::now();
      model_ = io::load_model(bundle());
      timing("load", seconds_since(t0));
    }
    return *model_;
  }

  art::Base base() {
    return {model().network.base_mva(), model().network.base_kv()};
  }

  pfr::SurfaceOptions surface_options() {
    const auto& c = bundle().config;
    pfr::SurfaceOptions o;
    o.gammas = c.gamma_grid;
    o.n_angles = c.angles;
    o.pieces = c.partitions;
    o.outside_margin = c.outside_margin;
    o.fit.seed = c.seed;
    o.jobs = jobs_;
    return o;
  }

  std::vector<pfr::PfrSurface> surfaces() {
    if (surfaces_.empty()) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto o = surface_options();
      for (int t = 0; t < model().periods; ++t) surfaces_.push_back(pfr::build_surface(model(), t, o));
      timing("pfr", seconds_since(t0));
    }
    return surfaces_;
  }

  tcf::RobustResult envelope() {
    if (!envelope_) {
      const auto& c = bundle().config;
      tcf::RobustOptions o;
      o.theta = c.theta;
      o.eps = c.eps;
      o.max_iter = c.max_iter;
      o.selective = f_.selective;
      o.violation.seed = c.seed;
      o.violation.jobs = jobs_;
      const auto t0 = std::chrono::steady_clock::now();
      envelope_ = tcf::robust_modify(model(), c.gamma, o);
      timing("tcf", seconds_since(t0));
    }
    return *envelope_;
  }

  std::vector<cost::CostCurve> costs() {
    if (costs_.empty()) {
      const auto& c = bundle().config;
      const auto t0 = std::chrono::steady_clock::now();
      costs_ = cost::build_cost_curves(model(), c.gamma, {c.cost_samples, c.cost_partitions, jobs_});
      timing("cost", seconds_since(t0));
    }
    return costs_;
  }

  void write(const std::string& path, const json& j) {
    art::write_json(path, j);
    output(path);
  }

  void manifest(const std::string& path, const std::vector<std::string>& argv) {
    json m = {{"format_version", io::kFormatVersion},
              {"kind", "run-manifest"},
              {"tool", "vppflex"},
              {"version", VPPFLEX_VERSION},
              {"command", command_},
              {"argv", argv},
              {"started_utc", started_},
              {"jobs", jobs_},
              {"inputs", inputs_},
              {"outputs", outputs_},
              {"timings_s", timings_}};
    if (bundle_) {
      m["case"] = bundle_->name;
      m["config"] = config_to_json(bundle_->config);
      m["seeds"] = {{"run", bundle_->config.seed}};
    }
    art::write_json(path, m);
  }

  static double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

 private:
  std::string command_;
  const Flags& f_;
  std::ostream& out_;
  int jobs_ = 1;
  std::string started_ = utc_now();
  json inputs_ = json::array();
  std::vector<std::string> outputs_;
  json timings_ = json::object();
  std::optional<io::CaseBundle> bundle_;
  std::optional<cc::VppModel> model_;
  std::vector<pfr::PfrSurface> surfaces_;
  std::optional<tcf::RobustResult> envelope_;
  std::vector<cost::CostCurve> costs_;
};

std::vector<double> polygon_levels(const Flags& f, const io::RunConfig& c) {
  return f.polygon_gammas.empty() ? std::vector<double>{c.gamma} : f.polygon_gammas;
}

void gmm_fit(Run& r, const Flags& f, const std::string& out) {
  if (f.samples_path.empty()) throw RangeError("--samples is required");
  r.input(f.samples_path);
  const auto table = io::read_samples_csv(f.samples_path);
  io::RunConfig c;
  if (f.seed) c.seed = *f.seed;
  if (f.max_components) c.max_components = *f.max_components;
  if (!f.components.empty() && f.components != "auto") {
    try {
      size_t used = 0;
      c.components = std::stoi(f.components, &used);
      if (used != f.components.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw RangeError("--components must be 'auto' or a positive integer");
    }
    if (c.components < 1) throw RangeError("--components must be 'auto' or a positive integer");
  }
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = io::fit_case_gmm(table, c);
  r.timing("em", Run::seconds_since(t0));
  auto j = io::gmm_to_json(res.model, table.labels);
  j["fit"] = {{"samples", table.values.rows()},
              {"bic", res.bic},
              {"log_likelihood", res.log_likelihood.empty() ? 0.0 : res.log_likelihood.back()},
              {"iterations", res.iterations},
              {"converged", res.converged},
              {"seed", c.seed}};
  r.write(out, j);
  r.out() << "gmm-fit: " << res.model.size() << " components, BIC " << res.bic << "\n";
}

void linearize(Run& r, const Flags& f, const std::string& out) {
  const auto& m = r.model();
  const auto check = cc::check_linearization(m, f.lin_samples, r.bundle().config.seed, r.jobs());
  auto j = art::header("linear-model", r.base());
  j["case"] = r.bundle().name;
  j.update(art::linearization_to_json(m, check));
  r.write(out, j);
  r.out() << "linearize: max voltage error " << 100.0 * check.max_voltage_error << "% over " << check.samples
          << " points\n";
}

void pfr_cmd(Run& r, const Flags& f, const std::string& out) {
  const auto surfaces = r.surfaces();
  auto j = art::header("pfr", r.base());
  j["case"] = r.bundle().name;
  j["surfaces"] = json::array();
  j["polygons"] = json::array();
  for (const auto& s : surfaces) {
    if (f.period && s.period != *f.period) continue;
    j["surfaces"].push_back(art::surface_to_json(s));
    for (double g : polygon_levels(f, r.bundle().config)) j["polygons"].push_back(art::polygon_to_json(pfr::polygon_at(s, g)));
  }
  r.write(out, j);
  const auto scatter = sibling(out, ".scatter.csv");
  art::write_scatter_csv(scatter, surfaces, r.base());
  r.output(scatter);
  for (const auto& s : surfaces)
    r.out() << "pfr: period " << s.period << " fit RMSE " << s.rmse << " R2 " << s.r2 << "\n";
}

void tcf_cmd(Run& r, const Flags&, const std::string& out) {
  const auto res = r.envelope();
  auto j = art::header("tcf-envelope", r.base());
  j["case"] = r.bundle().name;
  j["theta"] = r.bundle().config.theta;
  j["eps"] = r.bundle().config.eps;
  j["converged"] = res.converged;
  j["iterations"] = res.iterations;
  j["f_history"] = res.f_history;
  j["initial"] = art::envelope_to_json(res.history.empty() ? res.envelope : res.history.front());
  j["envelope"] = art::envelope_to_json(res.envelope);
  r.write(out, j);
  r.out() << "tcf: " << (res.converged ? "converged" : "not converged") << " after " << res.iterations
          << " iterations, final violation " << (res.f_history.empty() ? 0.0 : res.f_history.back()) << "\n";
}

void cost_cmd(Run& r, const Flags&, const std::string& out) {
  const auto curves = r.costs();
  auto j = art::header("cost-curves", r.base());
  j["case"] = r.bundle().name;
  j["curves"] = json::array();
  for (const auto& c : curves) j["curves"].push_back(art::cost_curve_to_json(c));
  r.write(out, j);
  const auto samples = sibling(out, ".samples.csv");
  art::write_cost_samples_csv(samples, curves, r.base());
  r.output(samples);
  for (const auto& c : curves) r.out() << "cost: period " << c.period << " R2 " << c.stats.r2 << "\n";
}

void mc_cmd(Run& r, const Flags& f, const std::string& out) {
  const auto& m = r.model();
  const auto& c = r.bundle().config;
  const int t = f.period.value_or(0);
  if (t < 0 || t >= m.periods) throw RangeError("--period out of range");
  auto t0 = std::chrono::steady_clock::now();
  const auto s = pfr::build_surface(m, t, r.surface_options());
  const double analytic_s = Run::seconds_since(t0);
  r.timing("analytic", analytic_s);
  mc::McOptions o;
  o.nonlinear = f.nonlinear;
  o.jobs = r.jobs();
  t0 = std::chrono::steady_clock::now();
  const auto grid = mc::mc_confidence_grid(m, t, mc::grid_around(s, c.mc_grid), c.mc_scenarios, c.seed, o);
  const double mc_s = Run::seconds_since(t0);
  r.timing("mc", mc_s);
  const auto cmp = mc::compare_surfaces(s, grid);
  auto j = art::header("mc-report", r.base());
  j["case"] = r.bundle().name;
  j["period"] = t;
  j["grid"] = c.mc_grid;
  j["scenarios"] = c.mc_scenarios;
  j["seed"] = c.seed;
  j["nonlinear"] = f.nonlinear;
  j["analytic_fit"] = {{"rmse", s.rmse}, {"r2", s.r2}};
  j["comparison"] = {{"rmse", cmp.rmse}, {"r2", cmp.r2}, {"max_abs", cmp.max_abs}, {"cells", cmp.cells}};
  r.write(out, j);
  const auto csv = sibling(out, ".grid.csv");
  art::write_grid_csv(csv, grid, s, r.base());
  r.output(csv);
  r.out() << "mc-verify: period " << t << " RMSE " << cmp.rmse << " R2 " << cmp.r2 << " (analytic " << analytic_s
          << " s, MC " << mc_s << " s)\n";
}

art::FlexBundle flex(Run& r) {
  const auto& m = r.model();
  art::FlexBundle b;
  b.case_name = r.bundle().name;
  b.base = r.base();
  b.periods = m.periods;
  b.dt = m.dt;
  b.gamma = r.bundle().config.gamma;
  for (const auto& s : r.surfaces()) b.polygons.push_back(pfr::polygon_at(s, b.gamma));
  b.envelope = r.envelope().envelope;
  for (const auto& c : r.costs()) b.costs.push_back(art::flex_cost(c));
  return b;
}

void export_cmd(Run& r, const Flags&, const std::string& out) {
  const auto b = flex(r);
  r.write(out, art::flex_to_json(b));
  r.out() << "export-flex: " << b.periods << " periods at confidence " << b.gamma << "\n";
}

void demo_cmd(Run& r, Flags& f) {
  if (f.case_path.empty()) f.case_path = VPPFLEX_DATA_DIR "/cases/four_bus/case.json";
  if (f.quick) {
    if (!f.grid) f.grid = 12;
    if (!f.scenarios) f.scenarios = 100;
  }
  fs::create_directories(f.out_dir);
  const auto at = [&](const char* name) { return (fs::path(f.out_dir) / name).string(); };
  const auto& b = r.bundle();
  if (!b.samples_file.empty()) {
    Flags g = f;
    g.samples_path = b.samples_file;
    g.components = b.config.components > 0 ? std::to_string(b.config.components) : "auto";
    g.max_components = b.config.max_components;
    g.seed = b.config.seed;
    gmm_fit(r, g, at("gmm.json"));
  }
  linearize(r, f, at("linear.json"));
  pfr_cmd(r, f, at("pfr.json"));
  tcf_cmd(r, f, at("tcf.json"));
  cost_cmd(r, f, at("cost.json"));
  mc_cmd(r, f, at("mc.json"));
  export_cmd(r, f, at("flex.json"));
}

json error_line(const std::exception& e) {
  json j;
  if (const auto* p = dynamic_cast<const ParseError*>(&e)) {
    j = {{"error", "parse"}, {"file", p->file()}, {"line", p->line()}, {"field", p->field()}};
  } else if (dynamic_cast<const InfeasibleError*>(&e)) {
    j = {{"error", "infeasible"}};
  } else if (dynamic_cast<const RangeError*>(&e)) {
    j = {{"error", "range"}};
  } else if (dynamic_cast<const DimensionError*>(&e)) {
    j = {{"error", "dimension"}};
  } else if (dynamic_cast<const StructuralError*>(&e)) {
    j = {{"error", "structural"}};
  } else if (const auto* d = dynamic_cast<const DivergenceError*>(&e)) {
    j = {{"error", "divergence"}, {"last_residual", d->last_residual()}};
  } else if (dynamic_cast<const PsdError*>(&e)) {
    j = {{"error", "psd"}};
  } else if (dynamic_cast<const Error*>(&e)) {
    j = {{"error", "stage"}};
  } else {
    j = {{"error", "internal"}};
  }
  j["message"] = e.what();
  return j;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Flags f;
  CLI::App app{"Stochastic flexibility of a virtual power plant at its point of common coupling", "vppflex"};
  app.set_version_flag("--version", VPPFLEX_VERSION);
  app.require_subcommand(1);
  app.add_option("--jobs", f.jobs, "Worker threads (default: VPPFLEX_JOBS or all cores)")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", f.quiet, "Suppress warnings");

  auto with_case = [&](CLI::App* s, bool required = true) {
    auto* o = s->add_option("--case", f.case_path, "Case file (case.json)");
    if (required) o->required();
  };
  auto with_out = [&](CLI::App* s) { s->add_option("--out", f.out, "Output file")->required(); };
  auto with_seed = [&](CLI::App* s) { s->add_option("--seed", f.seed, "Random seed (overrides the case)"); };

  auto* gmm = app.add_subcommand("gmm-fit", "Fit a Gaussian mixture to forecast-error samples");
  gmm->add_option("--samples", f.samples_path, "Samples CSV")->required();
  gmm->add_option("--components", f.components, "'auto' (BIC) or a component count")->default_str("auto");
  gmm->add_option("--max-components", f.max_components, "Upper bound for 'auto'");
  with_seed(gmm);
  with_out(gmm);

  auto* lin = app.add_subcommand("linearize", "Linear network model and its accuracy against the load flow");
  with_case(lin);
  lin->add_option("--points", f.lin_samples, "Accuracy check points")->check(CLI::PositiveNumber);
  with_seed(lin);
  with_out(lin);

  auto* pfr = app.add_subcommand("pfr", "Confidence surface and polygons of the PQ flexibility region");
  with_case(pfr);
  pfr->add_option("--gamma-grid", f.gamma_grid, "Confidence levels swept (comma separated)")->delimiter(',');
  pfr->add_option("--gamma", f.polygon_gammas, "Polygon confidence levels (comma separated)")->delimiter(',');
  pfr->add_option("--angles", f.angles, "Rays per level");
  pfr->add_option("--partitions", f.partitions, "Surface pieces");
  pfr->add_option("--period", f.period, "Only this period in the JSON (the scatter keeps all)");
  with_seed(pfr);
  with_out(pfr);

  auto* tcf = app.add_subcommand("tcf", "Robust time-coupling envelope");
  with_case(tcf);
  tcf->add_option("--gamma", f.gamma, "Confidence level");
  tcf->add_option("--theta", f.theta, "Shrink factor");
  tcf->add_option("--eps", f.eps, "Violation tolerance");
  tcf->add_option("--max-iter", f.max_iter, "Iteration limit");
  tcf->add_flag("--selective", f.selective, "Shrink only the bound families active at the worst trajectory");
  with_seed(tcf);
  with_out(tcf);

  auto* cst = app.add_subcommand("cost", "Aggregated cost curve per period");
  with_case(cst);
  cst->add_option("--gamma", f.gamma, "Confidence level");
  cst->add_option("--samples", f.cost_samples, "P targets per period");
  cst->add_option("--partitions", f.partitions, "Curve pieces");
  with_seed(cst);
  with_out(cst);

  auto* mcv = app.add_subcommand("mc-verify", "Monte-Carlo grid against the analytic surface");
  with_case(mcv);
  mcv->add_option("--grid", f.grid, "Cells per axis");
  mcv->add_option("--scenarios", f.scenarios, "Scenarios per cell");
  mcv->add_option("--period", f.period, "Period");
  mcv->add_flag("--nonlinear", f.nonlinear, "Also check the full load flow at each scenario dispatch");
  with_seed(mcv);
  with_out(mcv);

  auto* exf = app.add_subcommand("export-flex", "Flexibility model: polygons, envelope and cost curves");
  with_case(exf);
  exf->add_option("--gamma", f.gamma, "Confidence level");
  with_seed(exf);
  with_out(exf);

  auto* demo = app.add_subcommand("demo", "Every stage on one case into a directory");
  with_case(demo, false);
  demo->add_option("--out-dir", f.out_dir, "Output directory");
  demo->add_flag("--quick", f.quick, "Small Monte-Carlo grid");
  demo->add_option("--grid", f.grid, "Monte-Carlo cells per axis");
  demo->add_option("--scenarios", f.scenarios, "Scenarios per cell");
  with_seed(demo);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return kUsage;
  }

  std::optional<WarningHandler> prev;
  if (f.quiet) prev = set_warning_handler([](const std::string&) {});
  const auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  std::vector<std::string> args(argv, argv + argc);
  int status = kOk;
  try {
    Run r(name, f, out);
    if (name == "demo") {
      demo_cmd(r, f);
      r.manifest((fs::path(f.out_dir) / "manifest.json").string(), args);
    } else {
      const std::map<std::string, std::function<void(Run&, const Flags&, const std::string&)>> stages = {
          {"gmm-fit", gmm_fit}, {"linearize", linearize}, {"pfr", pfr_cmd},          {"tcf", tcf_cmd},
          {"cost", cost_cmd},   {"mc-verify", mc_cmd},    {"export-flex", export_cmd}};
      stages.at(name)(r, f, f.out);
      r.manifest(sibling(f.out, ".manifest.json"), args);
    }
  } catch (const std::exception& e) {
    err << error_line(e).dump() << "\n";
    if (dynamic_cast<const ParseError*>(&e))
      status = kParse;
    else if (dynamic_cast<const InfeasibleError*>(&e))
      status = kInfeasible;
    else
      status = kStageError;
  }
  if (prev) set_warning_handler(*prev);
  return status;
}

}  // namespace vppflex::cli
