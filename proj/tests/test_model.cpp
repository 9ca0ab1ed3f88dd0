#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "mergest/io.hpp"
#include "support.hpp"

using namespace mergest;
using testing::make_sample;
using testing::tiny_a;

TEST_CASE("TINY-A passes validation") {
  const auto s = tiny_a();
  CHECK(validate_sample(s).empty());
  CHECK(s.source_size(0) == 3);
  CHECK(s.source_size(1) == 2);
  CHECK(s.subsample_size(0) == 2);
  CHECK(s.subsample_size(1) == 1);
  CHECK(s.inclusion(2, 0) == doctest::Approx(2.0 / 3.0));
  CHECK(s.inclusion(3, 1) == 0.5);
}

TEST_CASE("selection outside membership names unit and source") {
  // unit 4 belongs to S2 only but is flagged as selected from S1
  const auto s = make_sample(2, {"f"}, {false}, {{1}, {2}, {3}, {4}}, {1, 1, 3, 2}, {1, 0, 1, 3});
  const auto report = validate_sample(s);
  REQUIRE(report.size() == 1);
  CHECK(report[0].row == std::optional<std::size_t>(3));
  CHECK(report[0].source == 0);
  CHECK(describe(report[0], s).find("row 4") != std::string::npos);
}

TEST_CASE("empty subsample from a nonempty source is reported") {
  const auto s = make_sample(2, {"f"}, {false}, {{1}, {2}, {3}, {4}}, {1, 1, 3, 2}, {0, 0, 2, 2});
  const auto report = validate_sample(s);
  REQUIRE(report.size() == 1);
  CHECK(report[0].message == "empty subsample from nonempty source");
  CHECK(report[0].source == 0);
}

TEST_CASE("missing x for a selected unit is a violation, for an unselected unit it is not") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto s = make_sample(2, {"f"}, {false}, {{1}, {nan}, {3}, {4}}, {1, 1, 3, 2}, {1, 0, 1, 2});
  CHECK(validate_sample(s).empty());
  s = make_sample(2, {"f"}, {false}, {{nan}, {2}, {3}, {4}}, {1, 1, 3, 2}, {1, 0, 1, 2});
  REQUIRE(validate_sample(s).size() == 1);
  CHECK(validate_sample(s)[0].row == std::optional<std::size_t>(0));
}

TEST_CASE("layout rules must agree with the stored membership") {
  SourceLayout layout({"S1", "S2"}, {Rule::where("v", Condition::Op::Ge, -1.0), Rule::where("v", Condition::Op::Le, 1.0)});
  auto s = make_sample(2, {"v"}, {true}, {{-2}, {0}, {2}}, {2, 3, 1}, {2, 1, 1});
  CHECK(validate_sample(s, layout).empty());
  s = make_sample(2, {"v"}, {true}, {{-2}, {0}, {2}}, {2, 3, 3}, {2, 1, 1});
  REQUIRE(validate_sample(s, layout).size() == 1);
  CHECK(validate_sample(s, layout)[0].row == std::optional<std::size_t>(2));
}

TEST_CASE("layout rules may only read auxiliary columns") {
  SourceLayout layout({"S1"}, {Rule::where("y", Condition::Op::Gt, 0.0)});
  Schema schema;
  schema.add("y", false);
  CHECK_THROWS_AS(layout.bind(schema), ValidationError);
}

TEST_CASE("weight scheme invariants") {
  CHECK_NOTHROW(WeightScheme(2, {{1, {1, 0}}, {2, {0, 1}}, {3, {0.25, 0.75}}}));
  CHECK_THROWS_AS(WeightScheme(2, {{3, {0.5, 0.6}}}), ValidationError);
  CHECK_THROWS_AS(WeightScheme(2, {{1, {0.5, 0.5}}}), ValidationError);
  CHECK_THROWS_AS(WeightScheme(2, {{3, {-0.5, 1.5}}}), ValidationError);
  const auto rows = {balanced_rho(3, all_cells(3)), optimal_rho_bernoulli(std::vector<double>{0.1, 0.3, 0.7}, all_cells(3)),
                     single_frame_rho(std::vector<double>{0.2, 0.5, 0.9}, all_cells(3))};
  for (const auto& scheme : rows)
    for (const auto& [mask, c] : scheme.cells()) {
      double sum = 0.0;
      for (double v : c) sum += v;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("variance decomposition se uses the normalizer") {
  VarianceDecomposition v;
  v.population = Eigen::MatrixXd::Identity(2, 2) * 4.0;
  v.design = {Eigen::MatrixXd::Identity(2, 2) * 5.0};
  v.normalizer = 100.0;
  CHECK(v.se()(0) == doctest::Approx(0.3));
}

TEST_CASE("dataset CSV round trip reproduces the sample field for field") {
  std::mt19937_64 rng(5);
  const auto pop = testing::random_tiny(rng, 3, 8);
  const auto s = draw_selections(pop, testing::wor({0.5, 0.5, 1.0}, 3));
  const auto dir = std::filesystem::temp_directory_path() / "mergest_roundtrip";
  std::filesystem::create_directories(dir);
  const auto design = describe_design(s, SamplingMode::Wor);
  write_sample(dir / "data.csv", s);
  write_design(dir / "design.json", design);
  const auto back = read_sample(dir / "data.csv", read_design(dir / "design.json"));
  REQUIRE(back.rows() == s.rows());
  CHECK(back.members() == s.members());
  CHECK(back.selections() == s.selections());
  REQUIRE(back.schema().size() == s.schema().size());
  // the writer puts auxiliary columns first, so compare by name
  for (std::size_t c = 0; c < s.schema().size(); ++c) {
    const int b = back.schema().index(s.schema().names[c]);
    CHECK(back.schema().auxiliary[b] == s.schema().auxiliary[c]);
    CHECK(back.values().col(b) == s.values().col(static_cast<Eigen::Index>(c)));
  }
  CHECK(back.population_size() == s.population_size());
  for (std::size_t i = 0; i < s.rows(); ++i) CHECK(back.id(i) == s.id(i));
  for (int j = 0; j < 3; ++j) {
    CHECK(back.source_name(j) == s.source_name(j));
    CHECK(back.source_size(j) == s.source_size(j));
    CHECK(back.subsample_size(j) == s.subsample_size(j));
  }
}

TEST_CASE("stratified CSV round trip keeps strata") {
  SampleData d;
  d.schema.add("v", true);
  d.values = Eigen::MatrixXd(4, 1);
  d.values << 1, 2, 3, 4;
  d.member = {1, 1, 1, 1};
  d.selected = {1, 0, 1, 0};
  d.sources = 1;
  d.strata = {0, 0, 1, 1};
  d.strata_counts = {2};
  const MergedSample s(std::move(d));
  const auto dir = std::filesystem::temp_directory_path() / "mergest_roundtrip";
  std::filesystem::create_directories(dir);
  write_sample(dir / "strata.csv", s);
  const auto back = read_sample(dir / "strata.csv", describe_design(s, SamplingMode::StratifiedWor));
  REQUIRE(back.has_strata());
  for (std::size_t i = 0; i < 4; ++i) CHECK(back.stratum(i, 0) == s.stratum(i, 0));
  CHECK(back.stratum_size(0, 1) == 2);
}
