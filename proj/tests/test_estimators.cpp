#include <doctest.h>

#include <cmath>

#include "mergest/io.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mergest;
using testing::make_sample;
using namespace oracles;

namespace {

Scenario preset(const char* name) { return load_preset(name, default_preset_dir()); }

struct Drawn {
  Scenario scenario;
  MergedSample sample;
  HMeasure meas;
};

Drawn drawn(const char* name, std::size_t N, int r) {
  auto s = preset(name);
  auto sample = replicate_sample(s, N, r);
  auto scheme = build_scheme(s, RhoKind::OptBernoulli, sample);
  HMeasure m(sample, scheme);
  return {std::move(s), std::move(sample), std::move(m)};
}

}  // namespace

TEST_CASE("census linear fit is ordinary least squares") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto d = linear_data(rng, 50 + static_cast<int>(seed));
    const auto m = census_measure(census({"y", "z1", "z2"}, d.rows));
    const auto f = fit(m, linear_model("y", {"z1", "z2"}));
    const Eigen::VectorXd ols = d.X.householderQr().solve(d.y);
    CHECK((f.theta - ols).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(f.coefficients == std::vector<std::string>{"(Intercept)", "z1", "z2"});
  }
}

TEST_CASE("census logistic fit is the ordinary MLE") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto d = logistic_data(rng, 150);
    const auto m = census_measure(census({"y", "z1", "z2"}, d.rows));
    const auto f = fit(m, logistic_model("y", {"z1", "z2"}));
    CHECK((f.theta - logistic_oracle(d.X, d.y)).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("census Cox fit matches the plain partial likelihood with Breslow ties") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto d = cox_data(rng, 120);
    const auto m = census_measure(census({"time", "status", "z1", "z2"}, d.rows));
    const auto f = fit(m, cox_model("time", "status", {"z1", "z2"}));
    CHECK((f.theta - cox_oracle(d)).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("Breslow jump is 1/3 for one event with three at risk") {
  ModelData d;
  d.Z = Eigen::MatrixXd::Zero(3, 1);
  d.y = Eigen::Vector3d(1, 2, 3);
  d.status = Eigen::Vector3d(1, 0, 0);
  const auto b = breslow(d, Eigen::Vector3d::Ones(), Eigen::VectorXd::Zero(1));
  REQUIRE(b.times.size() == 1);
  CHECK(b.times[0] == 1.0);
  CHECK(b.cumulative[0] == doctest::Approx(1.0 / 3).epsilon(1e-15));

  // two tied events among four at risk, then one of the remaining two
  ModelData t;
  t.Z = Eigen::MatrixXd::Zero(4, 1);
  t.y = Eigen::Vector4d(1, 1, 2, 3);
  t.status = Eigen::Vector4d(1, 1, 1, 0);
  const auto c = breslow(t, Eigen::Vector4d::Ones(), Eigen::VectorXd::Zero(1));
  REQUIRE(c.times.size() == 2);
  CHECK(c.cumulative[0] == doctest::Approx(0.5));
  CHECK(c.cumulative[1] == doctest::Approx(1.0));
}

TEST_CASE("exact-fit linear data give the true coefficients and zero SE") {
  std::vector<std::vector<double>> rows;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  for (int i = 0; i < 40; ++i) {
    const double z = normal(rng);
    rows.push_back({2 + 3 * z, z});
  }
  const auto pop = make_sample(2, {"y", "z"}, {false, true}, rows, std::vector<SourceMask>(40, 3));
  const auto s = draw_selections(pop, testing::wor({0.5, 0.4}, 2));
  const HMeasure m(s, testing::half_half());
  const auto f = fit(m, linear_model("y", {"z"}));
  CHECK(f.theta(0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(f.theta(1) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(f.se.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("analytic scores match central differences") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> shift(-0.5, 0.5);
  const struct {
    const char* preset;
    double tol;
  } cases[] = {{"linear-s1", 1e-8}, {"logistic-s1", 1e-6}, {"scenario1", 1e-5}, {"scenario4", 1e-5}};
  for (const auto& c : cases) {
    CAPTURE(c.preset);
    const auto d = drawn(c.preset, 400, 1);
    for (int k = 0; k < 10; ++k) {
      Eigen::VectorXd theta = d.scenario.theta0;
      for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) += shift(rng);
      CHECK(check_score_gradient(d.meas, d.scenario.model, theta) < c.tol);
    }
  }
}

TEST_CASE("score is zero at the fit and SE decomposes") {
  for (const char* name : {"linear-s1", "linear-s2", "logistic-s1", "logistic-s3", "scenario1", "scenario3", "scenario4"}) {
    CAPTURE(name);
    for (int r = 0; r < 3; ++r) {
      const auto d = drawn(name, 500, r);
      const auto f = fit(d.meas, d.scenario.model);
      CHECK(f.diagnostics.converged);
      CHECK(h_score(d.meas, d.scenario.model, f.theta).cwiseAbs().maxCoeff() < 1e-8);
      Eigen::VectorXd total = f.var_population.diagonal();
      for (const auto& v : f.var_design) total += v.diagonal();
      const Eigen::VectorXd se2N = f.se.array().square() * f.N_effective;
      CHECK((se2N - total).cwiseAbs().maxCoeff() < 1e-10 * (1 + total.cwiseAbs().maxCoeff()));
      CHECK(static_cast<std::size_t>(f.influence.rows()) == f.influence_rows.size());
      // the fitted influence has H-mean zero
      CHECK(h_mean(d.meas, f.influence).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("unknown-N mode keeps the estimate and switches the normalizer") {
  const auto d = drawn("scenario1", 500, 2);
  auto data = d.sample.data();
  data.population_size.reset();
  data.full_roster = false;
  const HMeasure um(MergedSample(data), d.meas.scheme());
  FitOptions opt;
  opt.unknown_n = true;
  const auto known = fit(d.meas, d.scenario.model), unknown = fit(um, d.scenario.model, opt);
  CHECK((known.theta - unknown.theta).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(unknown.unknown_n);
  CHECK(unknown.N_effective == doctest::Approx(estimate_N(d.meas)));
  CHECK(unknown.se.allFinite());
  CHECK_THROWS_AS(fit(um, d.scenario.model), ValidationError);
}

TEST_CASE("model input errors") {
  // perfectly separated logistic data
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 20; ++i) rows.push_back({i < 10 ? 0.0 : 1.0, static_cast<double>(i)});
  const auto m = census_measure(census({"y", "z"}, rows));
  CHECK_THROWS_AS(fit(m, logistic_model("y", {"z"})), NumericalError);
  rows[0][0] = 0.5;
  CHECK_THROWS_AS(fit(census_measure(census({"y", "z"}, rows)), logistic_model("y", {"z"})), ValidationError);
  // no events
  std::vector<std::vector<double>> surv;
  for (int i = 0; i < 10; ++i) surv.push_back({1.0 + i, 0.0, 0.1 * i});
  CHECK_THROWS_AS(fit(census_measure(census({"time", "status", "z"}, surv)), cox_model("time", "status", {"z"})),
                  ValidationError);
  // collinear covariates
  std::vector<std::vector<double>> col;
  for (int i = 0; i < 10; ++i) col.push_back({1.0 * i, 0.5 * i, 1.0 * i});
  CHECK_THROWS_AS(fit(census_measure(census({"y", "a", "b"}, col)), linear_model("y", {"a", "b"})), NumericalError);
  CHECK_THROWS_AS(model_kind_from_name("probit"), ValidationError);
}

TEST_CASE("ignoring duplication biases the mean of Y on linear Scenario 2") {
  // The Hartley mean of Y is design-unbiased; the naive weights sum_j R/pi double-count the overlap.
  const int reps = 300;
  std::vector<double> hartley, naive;
  for (int r = 0; r < reps; ++r) {
    const auto d = drawn("linear-s2", 2000, r);
    const auto& s = d.sample;
    const int y = s.schema().index("y");
    const auto Y = testing::column(d.meas, "y");
    double truth = 0;
    for (std::size_t i = 0; i < s.rows(); ++i) truth += s.value(i, y);
    truth /= static_cast<double>(s.rows());
    double nv = 0;
    for (std::size_t u = 0; u < d.meas.size(); ++u) {
      double w = 0;
      for (int j = 0; j < s.sources(); ++j)
        if (in_mask(s.selected(d.meas.units()[u]), j)) w += 1.0 / s.sampling_fraction(j);
      nv += w * Y(u, 0);
    }
    hartley.push_back(h_mean(d.meas, Y)(0) - truth);
    naive.push_back(nv / static_cast<double>(s.rows()) - truth);
  }
  const auto mc = [&](const std::vector<double>& e) {
    double m = 0, v = 0;
    for (double x : e) m += x;
    m /= reps;
    for (double x : e) v += (x - m) * (x - m);
    return std::pair{m, std::sqrt(v / (reps - 1) / reps)};
  };
  const auto [hb, hse] = mc(hartley);
  const auto [nb, nse] = mc(naive);
  CHECK(std::abs(nb) > 3 * nse);
  CHECK(std::abs(hb) < 3 * hse);
}
