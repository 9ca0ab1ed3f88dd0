#include <doctest.h>

#include <bit>
#include <map>

#include "mergest/io.hpp"
#include "support.hpp"

using namespace mergest;
using testing::tiny_a;
using testing::wor;

namespace {

Scenario preset(const char* name) { return load_preset(name, default_preset_dir()); }

MergedSample unselected(const MergedSample& s) { return s.with_selections(std::vector<SourceMask>(s.rows(), 0)); }

}  // namespace

TEST_CASE("subsample size rounds half to even and clamps to [1, N]") {
  CHECK(wor_subsample_size(0.2, 421) == 84);  // 84.2
  CHECK(wor_subsample_size(0.5, 5) == 2);     // 2.5 -> 2
  CHECK(wor_subsample_size(0.5, 7) == 4);     // 3.5 -> 4
  CHECK(wor_subsample_size(0.01, 10) == 1);
  CHECK(wor_subsample_size(1.0, 10) == 10);
  CHECK(wor_subsample_size(0.3, 0) == 0);
}

TEST_CASE("substreams differ by replicate and stage") {
  CHECK(substream_seed(1, 0, Stage::Population) != substream_seed(1, 1, Stage::Population));
  CHECK(substream_seed(1, 0, Stage::Population) != substream_seed(1, 0, Stage::Selection));
  CHECK(substream_seed(1, 0, Stage::Population) != substream_seed(2, 0, Stage::Population));
  CHECK(substream_seed(9, 4, Stage::Selection) == substream_seed(9, 4, Stage::Selection));
}

TEST_CASE("TINY-A selections hit all six patterns uniformly") {
  const auto pop = unselected(tiny_a());
  std::map<std::vector<SourceMask>, int> freq;
  const int seeds = 60000;
  for (int s = 0; s < seeds; ++s) {
    const auto drawn = draw_selections(pop, wor({2.0 / 3.0, 0.5}, static_cast<std::uint64_t>(s)));
    CHECK(drawn.subsample_size(0) == 2);
    CHECK(drawn.subsample_size(1) == 1);
    ++freq[drawn.selections()];
  }
  CHECK(freq.size() == 6);
  for (const auto& [pattern, n] : freq) CHECK(static_cast<double>(n) / seeds == doctest::Approx(1.0 / 6).epsilon(0.12));
}

TEST_CASE("census design selects every member") {
  std::mt19937_64 rng(3);
  const auto pop = testing::random_tiny(rng, 3, 8);
  for (std::uint64_t seed : {1u, 2u, 99u}) {
    const auto s = draw_selections(pop, wor({1, 1, 1}, seed));
    CHECK(s.selections() == s.members());
  }
  DesignSpec b = wor({1, 1, 1}, 4);
  b.mode = SamplingMode::Bernoulli;
  CHECK(draw_selections(pop, b).selections() == pop.members());
}

TEST_CASE("selections are deterministic given the seed") {
  const auto s = preset("linear-s1");
  const auto recipe = make_recipe(s.population);
  const auto a = draw_population(*recipe, 300, s.layout, 11);
  const auto b = draw_population(*recipe, 300, s.layout, 11);
  CHECK(a.values() == b.values());
  CHECK(draw_selections(a, wor({0.2, 0.3}, 5)).selections() == draw_selections(b, wor({0.2, 0.3}, 5)).selections());
  CHECK(draw_selections(a, wor({0.2, 0.3}, 5)).selections() != draw_selections(a, wor({0.2, 0.3}, 6)).selections());
}

TEST_CASE("empty source with a positive fraction is skipped with a warning") {
  const auto pop = testing::make_sample(2, {"v"}, {true}, {{0}, {1}}, {1, 1});
  std::vector<std::string> warnings;
  const auto s = draw_selections(pop, wor({0.5, 0.5}), &warnings);
  CHECK(s.subsample_size(1) == 0);
  CHECK(warnings.size() == 1);
}

TEST_CASE("enumeration counts") {
  CHECK(enumerate_selections(unselected(tiny_a()), wor({2.0 / 3.0, 0.5}), [](const MergedSample&) {}) == 6);
  const auto one = testing::make_sample(1, {"v"}, {true}, {{1}, {2}, {3}, {4}}, {1, 1, 1, 1});
  CHECK(enumerate_selections(one, wor({1.0}), [](const MergedSample&) {}) == 1);
  CHECK(enumerate_selections(one, wor({0.5}), [](const MergedSample&) {}) == 6);
}

TEST_CASE("enumeration beyond the budget is an explicit error") {
  std::vector<std::vector<double>> rows(40, {0.0});
  const auto big = testing::make_sample(1, {"v"}, {true}, rows, std::vector<SourceMask>(40, 1));
  CHECK_THROWS_AS(enumerate_selections(big, wor({0.5}), [](const MergedSample&) {}), ValidationError);
}

TEST_CASE("enumeration marginals are n/N and sources are independent") {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 5; ++rep) {
    const auto pop = testing::random_tiny(rng, 2 + rep % 2, 7);
    const int J = pop.sources();
    std::vector<double> p(J);
    for (int j = 0; j < J; ++j) p[j] = 0.4 + 0.1 * j;
    const auto design = wor(p);
    const auto rows = pop.rows();
    std::vector<double> hits(rows * J, 0.0), joint(rows * J * rows * J, 0.0);
    const auto total = enumerate_selections(pop, design, [&](const MergedSample& s) {
      for (std::size_t i = 0; i < rows; ++i)
        for (int j = 0; j < J; ++j) {
          if (!in_mask(s.selected(i), j)) continue;
          hits[i * J + j] += 1;
          for (std::size_t k = 0; k < rows; ++k)
            for (int l = 0; l < J; ++l)
              if (in_mask(s.selected(k), l)) joint[(i * J + j) * rows * J + k * J + l] += 1;
        }
    });
    const double T = static_cast<double>(total);
    for (std::size_t i = 0; i < rows; ++i)
      for (int j = 0; j < J; ++j) {
        if (!in_mask(pop.member(i), j)) continue;
        const double pj = static_cast<double>(wor_subsample_size(p[j], pop.source_size(j))) / pop.source_size(j);
        CHECK(hits[i * J + j] / T == doctest::Approx(pj).epsilon(1e-12));
        for (std::size_t k = 0; k < rows; ++k)
          for (int l = 0; l < J; ++l) {
            if (l == j || !in_mask(pop.member(k), l)) continue;
            const double both = joint[(i * J + j) * rows * J + k * J + l] / T;
            CHECK(both == doctest::Approx(hits[i * J + j] / T * hits[k * J + l] / T).epsilon(1e-12));
          }
      }
  }
}

TEST_CASE("full-coverage source contains every unit") {
  const auto s = preset("scenario2");
  const auto recipe = make_recipe(s.population);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto pop = draw_population(*recipe, 500, s.layout, seed);
    CHECK(pop.source_size(0) == 500);
  }
}

TEST_CASE("Scenario 1 source sizes at N = 500 average 421") {
  const auto s = preset("scenario1");
  const auto recipe = make_recipe(s.population);
  double n1 = 0, n2 = 0;
  const int seeds = 2000;
  for (int r = 0; r < seeds; ++r) {
    const auto pop = draw_population(*recipe, 500, s.layout, substream_seed(1, r, Stage::Population));
    n1 += pop.source_size(0);
    n2 += pop.source_size(1);
  }
  CHECK(n1 / seeds == doctest::Approx(421).epsilon(2.0 / 421));
  CHECK(n2 / seeds == doctest::Approx(421).epsilon(2.0 / 421));
}

TEST_CASE("Scenario 3 event source at N = 10000 averages 1529") {
  const auto s = preset("scenario3");
  const auto recipe = make_recipe(s.population);
  double n2 = 0;
  const int seeds = 2000;
  for (int r = 0; r < seeds; ++r)
    n2 += draw_population(*recipe, 10000, s.layout, substream_seed(3, r, Stage::Population)).source_size(1);
  CHECK(n2 / seeds == doctest::Approx(1529).epsilon(30.0 / 1529));
}

TEST_CASE("Scenario 4 duplication counts at N = 500") {
  const auto s = preset("scenario4");
  const auto recipe = make_recipe(s.population);
  double twice = 0, thrice = 0;
  const int seeds = 2000;
  for (int r = 0; r < seeds; ++r) {
    auto d = s.design;
    d.seed = substream_seed(4, r, Stage::Selection);
    const auto sample = draw_selections(draw_population(*recipe, 500, s.layout, substream_seed(4, r, Stage::Population)), d);
    for (SourceMask m : sample.selections()) {
      twice += std::popcount(m) == 2;
      thrice += std::popcount(m) == 3;
    }
  }
  CHECK(twice / seeds == doctest::Approx(13).epsilon(2.0 / 13));
  CHECK(thrice / seeds == doctest::Approx(1).epsilon(2.0));
}

TEST_CASE("stratified selection draws within each stratum") {
  SourceLayout layout({"S1", "S2"}, {Rule::always(), Rule::where("z", Condition::Op::Le, 1.0)},
                      {{Rule::where("z", Condition::Op::Lt, 0.0), Rule::where("z", Condition::Op::Ge, 0.0)}, {Rule::always()}});
  RecipeConfig cfg;
  cfg.theta = {1, 1};
  const auto recipe = make_recipe(cfg);
  const auto pop = draw_population(*recipe, 400, layout, 8);
  DesignSpec d;
  d.mode = SamplingMode::StratifiedWor;
  d.fractions = {0.2, 0.3};
  d.stratum_fractions = {{0.1, 0.5}, {0.3}};
  d.seed = 2;
  const auto s = draw_selections(pop, d);
  CHECK(s.stratum_subsample_size(0, 0) == wor_subsample_size(0.1, s.stratum_size(0, 0)));
  CHECK(s.stratum_subsample_size(0, 1) == wor_subsample_size(0.5, s.stratum_size(0, 1)));
  CHECK(s.stratum_subsample_size(1, 0) == wor_subsample_size(0.3, s.source_size(1)));
}
