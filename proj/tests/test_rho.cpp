#include <doctest.h>

#include <cmath>

#include "support.hpp"

using namespace mergest;
using testing::wor;

namespace {

const std::vector<SourceMask> kCells2 = all_cells(2);

// Sum of the design components of the Bernoulli or WOR variance under c1 on the overlap.
double design_objective(const MergedSample& s, double c1, DesignKind kind) {
  const HMeasure meas(s, two_source_scheme(c1));
  const auto F = testing::column(meas, "f");
  return variance(meas, F, kind, false).design_total()(0, 0);
}

// Pilot source-conditional moments, computed directly from the pilot weights.
struct PilotMoments {
  double Y1 = 0, Z1 = 0, ZZ1 = 0, W2 = 0, Z2 = 0, ZZ2 = 0, a1 = 0, a2 = 0;
};

PilotMoments pilot_moments(const MergedSample& s, const WeightScheme& scheme0) {
  const HMeasure pilot(s, scheme0);
  PilotMoments m;
  const int f = s.schema().index("f");
  const double N1 = static_cast<double>(s.source_size(0)), N2 = static_cast<double>(s.source_size(1));
  for (std::size_t u = 0; u < pilot.size(); ++u) {
    const auto row = pilot.units()[u];
    const double x = s.value(row, f), w = pilot.weights()[u];
    switch (s.member(row)) {
      case 1: m.Y1 += w * x / N1; break;
      case 2: m.W2 += w * x / N2; break;
      default:
        m.Z1 += w * x / N1;
        m.ZZ1 += w * x * x / N1;
        m.Z2 += w * x / N2;
        m.ZZ2 += w * x * x / N2;
    }
  }
  const double N = *s.population_size();
  m.a1 = N1 / N * od(s.sampling_fraction(0));
  m.a2 = N2 / N * od(s.sampling_fraction(1));
  return m;
}

// a1 Var1(Y + cZ) + a2 Var2(W + (1 - c)Z), using Y Z = W Z = 0 pointwise and
// dropping the second moments of Y and W, which do not depend on c.
double pilot_objective(const PilotMoments& m, double c) {
  const double m1 = m.Y1 + c * m.Z1, m2 = m.W2 + (1 - c) * m.Z2;
  return m.a1 * (c * c * m.ZZ1 - m1 * m1) + m.a2 * ((1 - c) * (1 - c) * m.ZZ2 - m2 * m2);
}

MergedSample drawn(std::uint64_t seed, std::size_t N, std::vector<double> p) {
  std::mt19937_64 rng(seed);
  return draw_selections(testing::random_tiny(rng, 2, N), wor(std::move(p), seed));
}

}  // namespace

TEST_CASE("od") {
  CHECK(od(0.2) == 4.0);
  CHECK(od(0.3) == doctest::Approx(7.0 / 3.0));
  CHECK(od(1.0) == 0.0);
}

TEST_CASE("Bernoulli optimum for p = (0.2, 0.3) is (7/19, 12/19)") {
  const std::vector<double> p{0.2, 0.3};
  const auto s = optimal_rho_bernoulli(p, kCells2);
  CHECK(s.rho(3, 0) == doctest::Approx(7.0 / 19).epsilon(1e-14));
  CHECK(s.rho(3, 1) == doctest::Approx(12.0 / 19).epsilon(1e-14));
  CHECK(s.rho(1, 0) == 1.0);
  CHECK(s.rho(2, 1) == 1.0);
}

TEST_CASE("Bernoulli optimum is symmetric for equal fractions") {
  for (double q : {0.05, 0.3, 0.5, 0.99}) {
    const std::vector<double> p{q, q};
    const auto s = optimal_rho_bernoulli(p, kCells2);
    CHECK(s.rho(3, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(s.rho(3, 1) == doctest::Approx(0.5).epsilon(1e-14));
  }
}

TEST_CASE("Bernoulli optimum gives zero weight next to a census source") {
  const std::vector<double> p{0.2, 1.0};
  const auto s = optimal_rho_bernoulli(p, kCells2);
  CHECK(s.rho(3, 0) == 0.0);
  CHECK(s.rho(3, 1) == 1.0);
  const std::vector<double> q{1.0, 0.4, 1.0};
  const auto t = optimal_rho_bernoulli(q, all_cells(3));
  CHECK(t.rho(7, 0) == 0.5);
  CHECK(t.rho(7, 1) == 0.0);
  CHECK(t.rho(7, 2) == 0.5);
}

TEST_CASE("Bernoulli optimum for J = 3 is proportional to the other sources' od product") {
  const std::vector<double> p{0.2, 0.3, 0.6};
  const auto s = optimal_rho_bernoulli(p, all_cells(3));
  const double a = od(0.3) * od(0.6), b = od(0.2) * od(0.6), c = od(0.2) * od(0.3);
  CHECK(s.rho(7, 0) == doctest::Approx(a / (a + b + c)));
  CHECK(s.rho(7, 1) == doctest::Approx(b / (a + b + c)));
  CHECK(s.rho(7, 2) == doctest::Approx(c / (a + b + c)));
}

TEST_CASE("invalid fractions are rejected") {
  const std::vector<double> p{0.0, 0.3};
  CHECK_THROWS_AS(optimal_rho_bernoulli(p, kCells2), ValidationError);
  CHECK_THROWS_AS(rho_kind_from_name("optimal"), ValidationError);
}

TEST_CASE("balanced and single-frame schemes") {
  const auto b = balanced_rho(3, all_cells(3));
  for (int j = 0; j < 3; ++j) CHECK(b.rho(7, j) == doctest::Approx(1.0 / 3));
  CHECK(b.rho(5, 0) == 0.5);
  CHECK(b.rho(5, 1) == 0.0);
  const std::vector<double> pi{0.2, 0.3};
  const auto sf = single_frame_rho(pi, kCells2);
  CHECK(sf.rho(3, 0) == doctest::Approx(0.4));
  CHECK(sf.rho(3, 1) == doctest::Approx(0.6));
  for (const auto& scheme : {b, optimal_rho_bernoulli(std::vector<double>{0.1, 0.5, 0.9}, all_cells(3)),
                             single_frame_rho(std::vector<double>{0.1, 0.5, 0.9}, all_cells(3))})
    CHECK(scheme.rho(2, 1) == 1.0);
}

TEST_CASE("single-frame from a sample uses realized fractions") {
  const auto s = drawn(4, 200, {0.2, 0.5});
  SourceLayout layout({"S1", "S2"}, {Rule::always(), Rule::always()});
  const auto sf = single_frame_rho(layout, s);
  const double p1 = s.sampling_fraction(0), p2 = s.sampling_fraction(1);
  CHECK(sf.rho(3, 0) == doctest::Approx(p1 / (p1 + p2)));
}

TEST_CASE("Bernoulli optimum minimizes the enumeration-averaged design variance") {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 6; ++rep) {
    const auto pop = testing::random_tiny(rng, 2, 7);
    const auto design = wor({0.3 + 0.1 * rep, 0.6});
    std::vector<double> grid;
    for (int g = 0; g <= 10; ++g) grid.push_back(g / 10.0);
    std::vector<double> avg(grid.size() + 1, 0.0);
    double pstar = -1;
    std::size_t count = 0;
    enumerate_selections(pop, design, [&](const MergedSample& s) {
      if (pstar < 0) {
        const std::vector<double> p{s.sampling_fraction(0), s.sampling_fraction(1)};
        pstar = optimal_rho_bernoulli(p, kCells2).rho(3, 0);
      }
      for (std::size_t g = 0; g < grid.size(); ++g) avg[g] += design_objective(s, grid[g], DesignKind::Bernoulli);
      avg.back() += design_objective(s, pstar, DesignKind::Bernoulli);
      ++count;
    });
    for (std::size_t g = 0; g < grid.size(); ++g) CHECK(avg.back() <= avg[g] + 1e-12 * count);
  }
}

TEST_CASE("per-sample Bernoulli argmin approaches the optimum at large N") {
  const auto s = drawn(8, 40000, {0.2, 0.3});
  const double pstar = optimal_rho_bernoulli(std::vector<double>{s.sampling_fraction(0), s.sampling_fraction(1)}, kCells2).rho(3, 0);
  double best = 0, best_value = INFINITY;
  for (int g = 0; g <= 200; ++g) {
    const double v = design_objective(s, g / 200.0, DesignKind::Bernoulli);
    if (v < best_value) best_value = v, best = g / 200.0;
  }
  CHECK(std::abs(best - pstar) < 0.05);
}

TEST_CASE("without-replacement optimum is 1/2 on a mirror-symmetric sample") {
  // cell {1} and cell {2} hold the same values, selections mirrored
  const std::vector<std::vector<double>> rows{{0.5}, {-1.0}, {2.0}, {0.5}, {-1.0}, {2.0}, {1.0}, {3.0}, {-0.5}, {0.2}};
  const std::vector<SourceMask> member{1, 1, 1, 2, 2, 2, 3, 3, 3, 3};
  const std::vector<SourceMask> selected{1, 0, 1, 2, 0, 2, 3, 0, 3, 3};
  const auto s = testing::make_sample(2, {"f"}, {false}, rows, member, selected);
  const HMeasure m(s, balanced_rho(2, kCells2));
  const auto r = optimal_rho_wor_detail(s, testing::column(m, "f"), balanced_rho(2, kCells2));
  CHECK(r.numerator == doctest::Approx(r.denominator / 2).epsilon(1e-14));
  CHECK(r.scheme.rho(3, 0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("without-replacement optimum is the argmin of the pilot-moment objective") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto s = drawn(seed, 60, {0.4, 0.6});
    const auto pilot = balanced_rho(2, kCells2);
    const HMeasure m(s, pilot);
    const auto r = optimal_rho_wor_detail(s, testing::column(m, "f"), pilot);
    const auto mom = pilot_moments(s, pilot);
    double best = 0, best_value = INFINITY;
    for (int g = -4000; g <= 8000; ++g) {
      const double c = g / 2000.0, v = pilot_objective(mom, c);
      if (v < best_value) best_value = v, best = c;
    }
    CHECK(r.c_raw == doctest::Approx(best).epsilon(1e-3).scale(1.0));
    CHECK(r.scheme.rho(3, 0) == std::clamp(r.c_raw, 0.0, 1.0));
  }
}

TEST_CASE("without-replacement optimum approaches the WOR design-variance argmin at large N") {
  const auto s = drawn(5, 40000, {0.2, 0.3});
  const auto pilot = balanced_rho(2, kCells2);
  const HMeasure m(s, pilot);
  const double c = optimal_rho_wor(s, testing::column(m, "f"), pilot).rho(3, 0);
  double best = 0, best_value = INFINITY;
  for (int g = 0; g <= 200; ++g) {
    const double v = design_objective(s, g / 200.0, DesignKind::Wor);
    if (v < best_value) best_value = v, best = g / 200.0;
  }
  CHECK(std::abs(best - c) < 0.05);
}

TEST_CASE("without-replacement optimum clamps to [0, 1]") {
  // large S1-only values pull c above 1
  const std::vector<std::vector<double>> rows{{10}, {10}, {10}, {10}, {0}, {0}, {1}, {1.2}, {0.9}, {1.1}};
  const std::vector<SourceMask> member{1, 1, 1, 1, 2, 2, 3, 3, 3, 3};
  const std::vector<SourceMask> selected{1, 1, 0, 0, 2, 0, 3, 1, 2, 0};
  const auto s = testing::make_sample(2, {"f"}, {false}, rows, member, selected);
  const auto pilot = balanced_rho(2, kCells2);
  const HMeasure m(s, pilot);
  const auto r = optimal_rho_wor_detail(s, testing::column(m, "f"), pilot);
  REQUIRE(r.c_raw > 1.0);
  CHECK(r.scheme.rho(3, 0) == 1.0);
  CHECK(r.scheme.rho(3, 1) == 0.0);
  for (std::uint64_t seed = 30; seed < 60; ++seed) {
    const auto t = drawn(seed, 12, {0.5, 0.5});
    const HMeasure mt(t, pilot);
    try {
      const double c = optimal_rho_wor(t, testing::column(mt, "f"), pilot).rho(3, 0);
      CHECK(c >= 0.0);
      CHECK(c <= 1.0);
    } catch (const NumericalError&) {
      // a draw with no selected intersection unit
    }
  }
}

TEST_CASE("without-replacement optimum needs intersection variance and J = 2") {
  const std::vector<std::vector<double>> rows{{1}, {2}, {3}, {4}};
  const auto s = testing::make_sample(2, {"f"}, {false}, rows, {1, 1, 2, 2}, {1, 0, 2, 0});
  const auto pilot = balanced_rho(2, kCells2);
  const HMeasure m(s, pilot);
  CHECK_THROWS_WITH_AS(optimal_rho_wor(s, testing::column(m, "f"), pilot), "degenerate intersection variance",
                       NumericalError);
  std::mt19937_64 rng(2);
  const auto t = draw_selections(testing::random_tiny(rng, 3, 10), wor({0.5, 0.5, 0.5}));
  const auto p3 = balanced_rho(3, all_cells(3));
  const HMeasure m3(t, p3);
  CHECK_THROWS_AS(optimal_rho_wor(t, testing::column(m3, "f"), p3), ValidationError);
}
