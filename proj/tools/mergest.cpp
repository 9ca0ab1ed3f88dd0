// mergest: estimation from merged overlapping-source samples, and the simulation harness.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mergest/calibration.hpp"
#include "mergest/estimators.hpp"
#include "mergest/io.hpp"
#include "mergest/rho.hpp"
#include "mergest/simulate.hpp"

namespace fs = std::filesystem;
using namespace mergest;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> parse_fractions(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("'" + item + "' is not a number");
    }
  }
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw ValidationError("cannot create output directory " + dir.string());
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ValidationError(std::string("--") + what + " is required");
  if (!fs::exists(path)) throw ValidationError(std::string(what) + " file not found: " + path);
}

struct ModelFlags {
  std::string kind = "linear";
  std::string response = "y";
  std::string time = "time";
  std::string status = "status";
  std::string covariates;
  bool no_intercept = false;

  ModelSpec spec() const {
    const auto z = split_list(covariates);
    if (z.empty()) throw ValidationError("--covariates is required");
    switch (model_kind_from_name(kind)) {
      case ModelKind::Linear: return linear_model(response, z, !no_intercept);
      case ModelKind::Logistic: return logistic_model(response, z, !no_intercept);
      case ModelKind::Cox: return cox_model(time, status, z);
    }
    throw ValidationError("unknown model");
  }
};

void add_model_flags(CLI::App* cmd, ModelFlags& m) {
  cmd->add_option("--model", m.kind, "linear, logistic or cox")->check(CLI::IsMember({"linear", "logistic", "cox"}));
  cmd->add_option("--response", m.response, "response column (linear, logistic)");
  cmd->add_option("--time", m.time, "follow-up time column (cox)");
  cmd->add_option("--status", m.status, "event indicator column (cox)");
  cmd->add_option("--covariates", m.covariates, "comma-separated covariate columns");
  cmd->add_flag("--no-intercept", m.no_intercept, "omit the intercept (linear, logistic)");
}

struct CalibrationFlags {
  std::string method = "none";
  std::string variables;
  std::string g = "affine";

  CalibrationConfig config() const {
    CalibrationConfig c;
    if (method != "none") c.method = calibration_method_from_name(method);
    c.variables = split_list(variables);
    c.g = GFunction::from_name(g);
    if (c.method && c.variables.empty()) throw ValidationError("--calibrate-vars is required when calibrating");
    return c;
  }
};

void add_calibration_flags(CLI::App* cmd, CalibrationFlags& c) {
  cmd->add_option("--calibrate", c.method, "none, standard, source or sample")
      ->check(CLI::IsMember({"none", "standard", "source", "sample"}));
  cmd->add_option("--calibrate-vars", c.variables, "comma-separated auxiliary columns");
  cmd->add_option("--g", c.g, "calibration function: affine, logistic or exp-bounded")
      ->check(CLI::IsMember({"affine", "logistic", "exp-bounded"}));
}

DesignKind design_kind(SamplingMode m) {
  if (m == SamplingMode::Bernoulli) return DesignKind::Bernoulli;
  if (m == SamplingMode::StratifiedWor) return DesignKind::Stratified;
  return DesignKind::Wor;
}

WeightScheme scheme_for(RhoKind rho, const MergedSample& sample, const DesignFile& design, const ModelSpec& spec,
                        const FitOptions& options) {
  const int J = sample.sources();
  const auto cells = all_cells(J);
  switch (rho) {
    case RhoKind::Balanced: return balanced_rho(J, cells);
    case RhoKind::SingleFrame: {
      std::vector<double> pi;
      for (int j = 0; j < J; ++j) pi.push_back(sample.sampling_fraction(j));
      return single_frame_rho(pi, cells);
    }
    case RhoKind::OptBernoulli: {
      const auto p = design.fractions();
      return optimal_rho_bernoulli(p, cells);
    }
    case RhoKind::OptWor: {
      const auto pilot = balanced_rho(J, cells);
      const FitResult f = fit(HMeasure(sample, pilot), spec, options);
      return optimal_rho_wor(sample, f.influence, pilot);
    }
  }
  throw ValidationError("unknown rho recipe");
}

struct EstimateArgs {
  std::string data, design, rho = "opt-bernoulli", out = ".";
  bool unknown_n = false;
  ModelFlags model;
  CalibrationFlags calibration;
};

void cmd_estimate(const EstimateArgs& a) {
  require_file(a.data, "data");
  require_file(a.design, "design");
  const DesignFile design = read_design(a.design);
  const MergedSample sample = read_sample(a.data, design);
  const ModelSpec spec = a.model.spec();
  FitOptions opt;
  opt.design = design_kind(design.mode);
  opt.unknown_n = a.unknown_n || !design.N;
  const HMeasure meas(sample, scheme_for(rho_kind_from_name(a.rho), sample, design, spec, opt));
  const auto cal = a.calibration.config();
  FitResult result;
  if (cal.method) {
    CalibrationOptions co;
    co.variables = cal.variables;
    co.g = cal.g;
    result = fit(calibrate(meas, *cal.method, co), spec, opt);
  } else {
    result = fit(meas, spec, opt);
  }
  ensure_dir(a.out);
  write_fit(fs::path(a.out) / "fit.json", result);
  write_influence(fs::path(a.out) / "influence.csv", result, sample);
  for (const auto& w : result.diagnostics.warnings) std::cerr << "warning: " << w << '\n';
}

struct CalibrateArgs {
  std::string data, design, rho = "opt-bernoulli", out = ".";
  CalibrationFlags calibration;
};

void cmd_calibrate(const CalibrateArgs& a) {
  require_file(a.data, "data");
  require_file(a.design, "design");
  const DesignFile design = read_design(a.design);
  const MergedSample sample = read_sample(a.data, design);
  const auto cal = a.calibration.config();
  if (!cal.method) throw ValidationError("--calibrate must name a method");
  const auto rho = rho_kind_from_name(a.rho);
  if (rho == RhoKind::OptWor) throw ValidationError("calibrate does not fit a model; opt-wor needs one (use estimate)");
  const HMeasure meas(sample, scheme_for(rho, sample, design, ModelSpec{}, FitOptions{}));
  CalibrationOptions co;
  co.variables = cal.variables;
  co.g = cal.g;
  const CalibratedMeasure c = calibrate(meas, *cal.method, co);
  json j;
  j["method"] = calibration_method_name(c.method);
  j["g"] = c.options.g.name();
  j["variables"] = c.options.variables;
  json alpha = json::array();
  for (const auto& v : c.alpha) {
    json row = json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k) row.push_back(v(k));
    alpha.push_back(std::move(row));
  }
  j["alpha"] = std::move(alpha);
  j["residuals"] = calibration_residuals(c);
  j["iterations"] = c.iterations;
  j["N_hat_before"] = meas.estimate_N();
  j["N_hat_after"] = c.calibrated.estimate_N();
  j["warnings"] = c.warnings;
  ensure_dir(a.out);
  {
    std::ofstream out(fs::path(a.out) / "calibration.json", std::ios::binary);
    out << j.dump(2) << '\n';
  }
  std::ofstream out(fs::path(a.out) / "weights.csv", std::ios::binary);
  out << "id,weight,calibrated_weight\n";
  for (std::size_t i = 0; i < meas.size(); ++i)
    out << sample.id(meas.units()[i]) << ',' << format_double(meas.weights()[i]) << ','
        << format_double(c.calibrated.weights()[i]) << '\n';
  for (const auto& w : c.warnings) std::cerr << "warning: " << w << '\n';
}

struct SimulateArgs {
  std::string preset, scenario, preset_dir, n, rho, out = ".", format = "csv";
  std::optional<int> reps;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  CalibrationFlags calibration;
  bool calibration_given = false;
};

Scenario load_scenario(const SimulateArgs& a) {
  if (a.preset.empty() == a.scenario.empty()) throw ValidationError("give exactly one of --preset or --scenario");
  Scenario s;
  if (!a.preset.empty()) {
    s = load_preset(a.preset, a.preset_dir.empty() ? default_preset_dir() : fs::path(a.preset_dir));
  } else {
    require_file(a.scenario, "scenario");
    s = read_scenario(a.scenario);
  }
  if (!a.n.empty()) {
    s.n_grid.clear();
    for (double v : parse_fractions(a.n)) {
      if (v < 1 || v != std::floor(v)) throw ValidationError("--n values must be positive integers");
      s.n_grid.push_back(static_cast<std::size_t>(v));
    }
  }
  if (a.reps) s.replicates = *a.reps;
  if (a.seed) s.seed = *a.seed;
  if (!a.rho.empty()) s.rho = rho_kind_from_name(a.rho);
  if (a.calibration_given) s.calibration = a.calibration.config();
  validate_scenario(s);
  return s;
}

json summary_json(const MCSummary& m) {
  json j;
  j["scenario"] = m.scenario;
  j["rho"] = m.rho;
  j["calibration"] = m.calibration;
  j["N"] = m.N;
  j["replicates"] = m.requested;
  j["failures"] = m.failures;
  j["unstable"] = m.unstable;
  j["mean_error_norm"] = m.mean_error_norm;
  json coefs = json::array();
  for (const auto& c : m.coefficients) {
    json o;
    o["name"] = c.name;
    o["truth"] = c.truth;
    o["bias"] = c.bias;
    o["sd"] = c.sd;
    o["see"] = c.see;
    o["coverage"] = c.coverage;
    o["mean"] = c.mean;
    coefs.push_back(std::move(o));
  }
  j["coefficients"] = std::move(coefs);
  return j;
}

void report_failures(const MCSummary& m) {
  if (m.failures == 0) return;
  std::cerr << m.scenario << " N=" << m.N << " (" << m.rho << ", " << m.calibration << "): " << m.failures << " of "
            << m.requested << " replicates failed" << (m.unstable ? " [UNSTABLE]" : "") << '\n';
  for (const auto& r : m.rows)
    if (!r.ok) {
      std::cerr << "  first failure, replicate " << r.replicate << ": " << r.error << '\n';
      break;
    }
}

void cmd_simulate(const SimulateArgs& a) {
  const Scenario s = load_scenario(a);
  RunOptions opt;
  opt.threads = a.threads;
  ensure_dir(a.out);
  const auto summaries = run_scenario_grid(s, opt);
  for (const auto& m : summaries) report_failures(m);
  if (a.format == "json") {
    json arr = json::array();
    for (const auto& m : summaries) arr.push_back(summary_json(m));
    std::ofstream(fs::path(a.out) / "summary.json", std::ios::binary) << arr.dump(2) << '\n';
  } else {
    write_summary_csv(fs::path(a.out) / "summary.csv", summaries);
  }
  write_rows_csv(fs::path(a.out) / "rows.csv", summaries);
  std::vector<QQPoint> qq;
  std::ofstream out(fs::path(a.out) / "qq.csv", std::ios::binary);
  out << "N,coefficient,theoretical,empirical\n";
  for (const auto& m : summaries) {
    if (m.requested - m.failures < 100) {
      std::cerr << "note: qq.csv skips N=" << m.N << " (fewer than 100 successful replicates)\n";
      continue;
    }
    for (const auto& p : qq_data(m))
      out << m.N << ',' << p.coefficient << ',' << format_double(p.theoretical) << ','
          << format_double(p.empirical) << '\n';
  }
}

struct CompareArgs {
  SimulateArgs base;
  std::string rhos = "opt-bernoulli,single-frame,balanced";
  std::string calibrations = "none,sample,standard,source";
  std::string variables;
};

void cmd_compare(CompareArgs a) {
  Scenario s = load_scenario(a.base);
  std::vector<RhoKind> rhos;
  for (const auto& r : split_list(a.rhos)) rhos.push_back(rho_kind_from_name(r));
  std::vector<std::string> vars = split_list(a.variables);
  if (vars.empty()) vars = s.calibration.variables;
  std::vector<CalibrationConfig> cals;
  for (const auto& c : split_list(a.calibrations)) {
    CalibrationConfig cc;
    if (c != "none") {
      cc.method = calibration_method_from_name(c);
      if (vars.empty()) throw ValidationError("calibrated cells need --calibrate-vars (or preset variables)");
    }
    cc.variables = vars;
    cc.g = s.calibration.g;
    cals.push_back(std::move(cc));
  }
  RunOptions opt;
  opt.threads = a.base.threads;
  ensure_dir(a.base.out);
  std::vector<MCSummary> all;
  for (auto N : s.n_grid) {
    const auto grid = compare_weights(s, N, rhos, cals, opt);
    const auto name = s.n_grid.size() == 1 ? std::string("grid.csv") : "grid_N" + std::to_string(N) + ".csv";
    write_grid_csv(fs::path(a.base.out) / name, grid);
    for (const auto& row : grid.cells)
      for (const auto& m : row) {
        report_failures(m);
        all.push_back(m);
      }
  }
  write_summary_csv(fs::path(a.base.out) / "summary.csv", all);
}

struct WeightsArgs {
  std::string rho = "opt-bernoulli", p, data, design, out = ".";
  int sources = 0;
  ModelFlags model;
};

void cmd_weights(const WeightsArgs& a) {
  const auto rho = rho_kind_from_name(a.rho);
  WeightScheme scheme;
  std::vector<std::string> names;
  if (!a.data.empty() || rho == RhoKind::OptWor) {
    require_file(a.data, "data");
    require_file(a.design, "design");
    const DesignFile design = read_design(a.design);
    const MergedSample sample = read_sample(a.data, design);
    FitOptions opt;
    opt.design = design_kind(design.mode);
    opt.unknown_n = !design.N;
    scheme = scheme_for(rho, sample, design, rho == RhoKind::OptWor ? a.model.spec() : ModelSpec{}, opt);
    for (const auto& s : design.sources) names.push_back(s.name);
  } else {
    const auto p = parse_fractions(a.p);
    const int J = a.sources > 0 ? a.sources : static_cast<int>(p.size());
    if (J < 1) throw ValidationError("give --p (per-source fractions) or --sources");
    if (rho != RhoKind::Balanced && static_cast<int>(p.size()) != J)
      throw ValidationError("--p needs one fraction per source");
    const auto cells = all_cells(J);
    if (rho == RhoKind::Balanced)
      scheme = balanced_rho(J, cells);
    else if (rho == RhoKind::SingleFrame)
      scheme = single_frame_rho(p, cells);
    else
      scheme = optimal_rho_bernoulli(p, cells);
    for (int j = 1; j <= J; ++j) names.push_back(std::to_string(j));
  }
  ensure_dir(a.out);
  json j = scheme_to_json(scheme, names);
  j = json{{"rho", a.rho}, {"sources", j["sources"]}, {"cells", j["cells"]}};
  std::ofstream(fs::path(a.out) / "weights.json", std::ios::binary) << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Estimation from merged samples of overlapping data sources"};
  app.require_subcommand(1);

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "fit a model to a merged sample; writes fit.json and influence.csv");
  e->add_option("--data", est.data, "dataset CSV");
  e->add_option("--design", est.design, "design JSON");
  e->add_option("--rho", est.rho, "balanced, single-frame, opt-bernoulli or opt-wor");
  e->add_flag("--unknown-N", est.unknown_n, "ratio mode: normalize by N-hat");
  e->add_option("--out", est.out, "output directory");
  add_model_flags(e, est.model);
  add_calibration_flags(e, est.calibration);

  CalibrateArgs calib;
  auto* c = app.add_subcommand("calibrate", "calibrate the weights of a merged sample; writes calibration.json and weights.csv");
  c->add_option("--data", calib.data, "dataset CSV");
  c->add_option("--design", calib.design, "design JSON");
  c->add_option("--rho", calib.rho, "balanced, single-frame or opt-bernoulli");
  c->add_option("--out", calib.out, "output directory");
  add_calibration_flags(c, calib.calibration);

  SimulateArgs sim;
  auto add_sim_flags = [](CLI::App* cmd, SimulateArgs& s) {
    cmd->add_option("--preset", s.preset, "named scenario preset");
    cmd->add_option("--scenario", s.scenario, "scenario JSON");
    cmd->add_option("--preset-dir", s.preset_dir, "directory of presets");
    cmd->add_option("--n", s.n, "comma-separated population sizes (overrides the preset grid)");
    cmd->add_option("--reps", s.reps, "replicates");
    cmd->add_option("--seed", s.seed, "master seed");
    cmd->add_option("--threads", s.threads, "worker threads (0: all cores)");
    cmd->add_option("--out", s.out, "output directory");
  };
  auto* s = app.add_subcommand("simulate", "Monte Carlo study; writes summary.csv, rows.csv and qq.csv");
  add_sim_flags(s, sim);
  s->add_option("--rho", sim.rho, "override the preset rho recipe");
  s->add_option("--format", sim.format, "summary format")->check(CLI::IsMember({"csv", "json"}));
  add_calibration_flags(s, sim.calibration);

  CompareArgs cmp;
  auto* g = app.add_subcommand("compare", "rho x calibration grid over common random numbers; writes grid.csv");
  add_sim_flags(g, cmp.base);
  g->add_option("--rhos", cmp.rhos, "comma-separated rho recipes (rows)");
  g->add_option("--calibrations", cmp.calibrations, "comma-separated methods, none included (columns)");
  g->add_option("--calibrate-vars", cmp.variables, "calibration variables (default: the preset's)");

  WeightsArgs wts;
  auto* w = app.add_subcommand("weights", "emit the rho cell constants as weights.json");
  w->add_option("--rho", wts.rho, "balanced, single-frame, opt-bernoulli or opt-wor");
  w->add_option("--p", wts.p, "comma-separated per-source fractions");
  w->add_option("--sources", wts.sources, "number of sources (balanced)");
  w->add_option("--data", wts.data, "dataset CSV (single-frame from realized fractions, opt-wor)");
  w->add_option("--design", wts.design, "design JSON");
  w->add_option("--out", wts.out, "output directory");
  add_model_flags(w, wts.model);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 1;
  }

  try {
    if (*e) cmd_estimate(est);
    if (*c) cmd_calibrate(calib);
    if (*s) {
      sim.calibration_given = s->count("--calibrate") > 0;
      cmd_simulate(sim);
    }
    if (*g) cmd_compare(cmp);
    if (*w) cmd_weights(wts);
  } catch (const ValidationError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  } catch (const NumericalError& ex) {
    std::cerr << "numerical failure: " << ex.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
