#include "mergest/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <thread>

#include <boost/math/distributions/normal.hpp>

namespace mergest {

void validate_scenario(const Scenario& s) {
  if (s.name.empty()) throw ValidationError("scenario needs a name");
  check_design(s.design, s.layout.sources());
  if (s.theta0.size() != s.model.dimension())
    throw ValidationError("scenario " + s.name + ": theta0 has " + std::to_string(s.theta0.size()) +
                          " entries but the model has " + std::to_string(s.model.dimension()) + " coefficients");
  if (s.replicates < 1) throw ValidationError("scenario " + s.name + ": replicate count must be positive");
  if (s.n_grid.empty()) throw ValidationError("scenario " + s.name + ": empty N grid");
  if (s.rho == RhoKind::OptWor && s.layout.sources() != 2)
    throw ValidationError("scenario " + s.name + ": opt-wor needs exactly two sources");
  const auto recipe = make_recipe(s.population);
  s.layout.bind(recipe->schema());
  if (s.calibration.method && s.calibration.variables.empty())
    throw ValidationError("scenario " + s.name + ": calibration needs variables");
}

namespace {

template <class F>
void parallel_for(int n, unsigned threads, F&& f) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max(n, 1)));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i; (i = next++) < n;) f(i);
    });
  for (auto& t : pool) t.join();
}

DesignKind design_kind(SamplingMode m) {
  switch (m) {
    case SamplingMode::Wor: return DesignKind::Wor;
    case SamplingMode::Bernoulli: return DesignKind::Bernoulli;
    case SamplingMode::StratifiedWor: return DesignKind::Stratified;
  }
  return DesignKind::Wor;
}

MergedSample draw_replicate(const Scenario& s, const PopulationRecipe& recipe, std::size_t N, int r) {
  const auto pop = draw_population(recipe, N, s.layout, substream_seed(s.seed, r, Stage::Population));
  DesignSpec d = s.design;
  d.seed = substream_seed(s.seed, r, Stage::Selection);
  return draw_selections(pop, d);
}

}  // namespace

MergedSample replicate_sample(const Scenario& s, std::size_t N, int r) {
  const auto recipe = make_recipe(s.population);
  return draw_replicate(s, *recipe, N, r);
}

WeightScheme build_scheme(const Scenario& s, RhoKind rho, const MergedSample& sample) {
  switch (rho) {
    case RhoKind::Balanced: return balanced_rho(s.layout);
    case RhoKind::SingleFrame: return single_frame_rho(s.layout, sample);
    case RhoKind::OptBernoulli: return optimal_rho_bernoulli(s.design.fractions, s.layout);
    case RhoKind::OptWor: {
      const auto pilot = balanced_rho(s.layout);
      const HMeasure meas(sample, pilot);
      FitOptions opt;
      opt.design = design_kind(s.design.mode);
      const FitResult f = fit(meas, s.model, opt);
      return optimal_rho_wor(sample, f.influence, pilot);
    }
  }
  throw ValidationError("unknown rho recipe");
}

ReplicateRow run_replicate(const Scenario& s, const MergedSample& sample, int r, RhoKind rho,
                           const CalibrationConfig& cal) {
  ReplicateRow row;
  row.replicate = r;
  const int J = sample.sources();
  for (int j = 0; j < J; ++j) {
    row.source_sizes.push_back(sample.source_size(j));
    row.subsample_sizes.push_back(sample.subsample_size(j));
  }
  for (SourceMask m : sample.selections()) {
    const int c = std::popcount(m);
    row.selected_twice += c == 2;
    row.selected_thrice += c == 3;
  }
  try {
    const HMeasure meas(sample, build_scheme(s, rho, sample));
    FitOptions opt;
    opt.design = design_kind(s.design.mode);
    opt.keep_influence = true;
    FitResult f;
    if (cal.method) {
      CalibrationOptions co;
      co.variables = cal.variables;
      co.g = cal.g;
      f = fit(calibrate(meas, *cal.method, co), s.model, opt);
    } else {
      f = fit(meas, s.model, opt);
    }
    const auto bern = variance_bernoulli(meas, f.influence);
    const auto wor = variance_wor(meas, f.influence);
    row.fpc_margin = (bern.total().diagonal() - wor.total().diagonal()).minCoeff();
    row.theta = f.theta;
    row.se = f.se;
    row.var_population = f.var_population.diagonal();
    row.var_design = Eigen::VectorXd::Zero(f.theta.size());
    for (const auto& d : f.var_design) row.var_design += d.diagonal();
    row.N_hat = meas.estimate_N();
    row.n_used = f.n_used;
    row.iterations = f.diagnostics.iterations;
    row.ok = true;
  } catch (const std::exception& e) {
    row.ok = false;
    row.error = e.what();
  }
  return row;
}

MCSummary summarize(const Scenario& s, std::size_t N, RhoKind rho, const CalibrationConfig& cal,
                    std::vector<ReplicateRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.replicate < b.replicate; });
  MCSummary out;
  out.scenario = s.name;
  out.rho = rho_kind_name(rho);
  out.calibration = cal.label();
  out.N = N;
  out.requested = static_cast<int>(rows.size());
  const auto names = s.model.coefficient_names();
  const Eigen::Index p = s.theta0.size();
  std::vector<const ReplicateRow*> good;
  for (const auto& r : rows)
    if (r.ok) good.push_back(&r);
  out.failures = out.requested - static_cast<int>(good.size());
  out.unstable = out.failures > 0.05 * out.requested;
  const double n = static_cast<double>(good.size());
  for (Eigen::Index k = 0; k < p; ++k) {
    CoefficientSummary c;
    c.name = names[k];
    c.truth = s.theta0(k);
    if (!good.empty()) {
      double sum = 0.0, see = 0.0, cover = 0.0, mae = 0.0;
      for (const auto* r : good) {
        sum += r->theta(k);
        see += r->se(k);
        cover += std::abs(r->theta(k) - c.truth) <= kWaldZ * r->se(k) ? 1.0 : 0.0;
        mae += std::abs(r->theta(k) - c.truth);
      }
      c.mean = sum / n;
      double ss = 0.0;
      for (const auto* r : good) ss += (r->theta(k) - c.mean) * (r->theta(k) - c.mean);
      c.sd = good.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      c.bias = std::abs(c.mean - c.truth);
      c.see = see / n;
      c.coverage = cover / n;
      c.mean_abs_error = mae / n;
    }
    out.coefficients.push_back(c);
  }
  double norm = 0.0;
  for (const auto* r : good) norm += (r->theta - s.theta0).norm();
  out.mean_error_norm = good.empty() ? 0.0 : norm / n;
  out.rows = std::move(rows);
  return out;
}

MCSummary run_scenario(const Scenario& s, std::size_t N, const RunOptions& options) {
  validate_scenario(s);
  const int R = options.replicates.value_or(s.replicates);
  const auto recipe = make_recipe(s.population);
  std::vector<ReplicateRow> rows(R);
  parallel_for(R, options.threads, [&](int r) {
    try {
      rows[r] = run_replicate(s, draw_replicate(s, *recipe, N, r), r, s.rho, s.calibration);
    } catch (const std::exception& e) {
      rows[r].replicate = r;
      rows[r].error = e.what();
    }
  });
  return summarize(s, N, s.rho, s.calibration, std::move(rows));
}

std::vector<MCSummary> run_scenario_grid(const Scenario& s, const RunOptions& options) {
  std::vector<MCSummary> out;
  for (auto N : s.n_grid) out.push_back(run_scenario(s, N, options));
  return out;
}

ComparisonGrid compare_weights(const Scenario& s, std::size_t N, const std::vector<RhoKind>& recipes,
                               const std::vector<CalibrationConfig>& calibrations, const RunOptions& options) {
  validate_scenario(s);
  if (recipes.empty() || calibrations.empty()) throw ValidationError("comparison needs recipes and calibrations");
  const int R = options.replicates.value_or(s.replicates);
  const auto recipe = make_recipe(s.population);
  const std::size_t A = recipes.size(), B = calibrations.size();
  std::vector<std::vector<ReplicateRow>> rows(A * B, std::vector<ReplicateRow>(R));
  parallel_for(R, options.threads, [&](int r) {
    // Every cell sees the same population and selections for replicate r.
    std::optional<MergedSample> sample;
    std::string error;
    try {
      sample = draw_replicate(s, *recipe, N, r);
    } catch (const std::exception& e) {
      error = e.what();
    }
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b) {
        auto& row = rows[a * B + b][r];
        if (sample) {
          row = run_replicate(s, *sample, r, recipes[a], calibrations[b]);
        } else {
          row.replicate = r;
          row.error = error;
        }
      }
  });
  ComparisonGrid g{recipes, calibrations, {}};
  for (std::size_t a = 0; a < A; ++a) {
    g.cells.emplace_back();
    for (std::size_t b = 0; b < B; ++b)
      g.cells[a].push_back(summarize(s, N, recipes[a], calibrations[b], std::move(rows[a * B + b])));
  }
  return g;
}

std::vector<QQPoint> qq_points(const std::string& coefficient, std::vector<double> z) {
  if (z.size() < 100) throw ValidationError("Q-Q data needs at least 100 replicates");
  for (double v : z)
    if (!std::isfinite(v)) throw NumericalError("degenerate standardization (non-finite standardized estimate)");
  std::sort(z.begin(), z.end());
  if (z.front() == z.back()) throw NumericalError("degenerate standardization (zero spread)");
  const boost::math::normal_distribution<double> normal;
  const double n = static_cast<double>(z.size());
  std::vector<QQPoint> out;
  for (std::size_t i = 0; i < z.size(); ++i)
    out.push_back({coefficient, boost::math::quantile(normal, (static_cast<double>(i) + 0.5) / n), z[i]});
  return out;
}

std::vector<QQPoint> qq_data(const MCSummary& summary) {
  std::vector<QQPoint> out;
  for (std::size_t k = 0; k < summary.coefficients.size(); ++k) {
    std::vector<double> z;
    for (const auto& r : summary.rows) {
      if (!r.ok) continue;
      // sqrt(N)(theta_hat - theta0) / SE-hat of sqrt(N) theta_hat, i.e. (theta_hat - theta0) / se.
      z.push_back((r.theta(k) - summary.coefficients[k].truth) / r.se(k));
    }
    auto pts = qq_points(summary.coefficients[k].name, std::move(z));
    out.insert(out.end(), pts.begin(), pts.end());
  }
  return out;
}

}  // namespace mergest
