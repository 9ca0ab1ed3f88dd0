#include "mergest/sampling.hpp"

#include <cfenv>
#include <cmath>
#include <numeric>

namespace mergest {

void check_design(const DesignSpec& d, int sources) {
  if (static_cast<int>(d.fractions.size()) != sources && d.mode != SamplingMode::StratifiedWor)
    throw ValidationError("design needs one sampling fraction per source (got " +
                          std::to_string(d.fractions.size()) + ", expected " + std::to_string(sources) + ")");
  for (double p : d.fractions)
    if (!(p > 0.0 && p <= 1.0)) throw ValidationError("sampling fractions must lie in (0, 1]");
  if (d.mode == SamplingMode::StratifiedWor) {
    if (static_cast<int>(d.stratum_fractions.size()) != sources)
      throw ValidationError("stratified design needs per-stratum fractions for every source");
    for (const auto& s : d.stratum_fractions)
      for (double p : s)
        if (!(p > 0.0 && p <= 1.0)) throw ValidationError("sampling fractions must lie in (0, 1]");
  }
}

std::size_t wor_subsample_size(double p, std::size_t N) {
  if (N == 0) return 0;
  const int old = std::fegetround();
  std::fesetround(FE_TONEAREST);
  double n = std::nearbyint(p * static_cast<double>(N));
  std::fesetround(old);
  if (n < 1.0) n = 1.0;
  if (n > static_cast<double>(N)) n = static_cast<double>(N);
  return static_cast<std::size_t>(n);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t substream_seed(std::uint64_t master, std::uint64_t replicate, Stage stage) {
  std::uint64_t s = splitmix64(master);
  s = splitmix64(s ^ splitmix64(replicate));
  return splitmix64(s ^ splitmix64(static_cast<std::uint64_t>(stage) << 32));
}

MergedSample draw_population(const PopulationRecipe& recipe, std::size_t N, const SourceLayout& layout,
                             std::uint64_t seed) {
  if (N < 1) throw ValidationError("population size must be at least 1");
  const Schema& schema = recipe.schema();
  const auto bound = layout.bind(schema);
  const int J = layout.sources();
  const auto cols = static_cast<Eigen::Index>(schema.size());

  // Row-major scratch so each draw writes a contiguous row.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(N, cols);
  std::mt19937_64 rng(seed);
  SampleData d;
  d.member.resize(N);
  const bool stratified = layout.has_strata();
  if (stratified) {
    d.strata.assign(N * J, -1);
    for (int j = 0; j < J; ++j) d.strata_counts.push_back(layout.strata_count(j));
  }
  for (std::size_t i = 0; i < N; ++i) {
    std::span<double> row(rows.row(i).data(), schema.size());
    recipe.draw(rng, row);
    d.member[i] = bound.mask(row);
    if (stratified) {
      for (int j = 0; j < J; ++j) {
        if (!in_mask(d.member[i], j)) continue;
        const int k = bound.stratum(j, row);
        if (k < 0) throw ValidationError("stratum rules of source " + layout.name(j) + " do not partition it");
        d.strata[i * J + j] = k;
      }
    }
  }
  d.schema = schema;
  d.values = rows;
  d.sources = J;
  d.source_names = layout.names();
  d.population_size = static_cast<double>(N);
  return MergedSample(std::move(d));
}

namespace {

// Partial Fisher-Yates: the first n entries of `pool` become a uniform n-subset.
void choose(std::vector<std::size_t>& pool, std::size_t n, std::mt19937_64& rng) {
  for (std::size_t k = 0; k < n; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
    std::swap(pool[k], pool[pick(rng)]);
  }
}

}  // namespace

MergedSample draw_selections(const MergedSample& s, const DesignSpec& design, std::vector<std::string>* warnings) {
  const int J = s.sources();
  check_design(design, J);
  if (design.mode == SamplingMode::StratifiedWor && !s.has_strata())
    throw ValidationError("stratified sampling requires strata in the sample");
  std::vector<SourceMask> selected(s.rows(), 0);
  std::mt19937_64 rng(design.seed);

  for (int j = 0; j < J; ++j) {
    const int K = design.mode == SamplingMode::StratifiedWor ? s.strata_count(j) : 1;
    if (design.mode == SamplingMode::StratifiedWor &&
        static_cast<int>(design.stratum_fractions[j].size()) != K)
      throw ValidationError("source " + s.source_name(j) + ": one fraction per stratum is required");
    for (int k = 0; k < K; ++k) {
      std::vector<std::size_t> pool;
      for (std::size_t i = 0; i < s.rows(); ++i)
        if (in_mask(s.member(i), j) && (K == 1 || s.stratum(i, j) == k)) pool.push_back(i);
      if (pool.empty()) {
        if (warnings) warnings->push_back("source " + s.source_name(j) + " has no members; nothing selected");
        continue;
      }
      if (design.mode == SamplingMode::Bernoulli) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double p = design.fractions[j];
        std::size_t hits = 0;
        for (auto i : pool)
          if (u(rng) < p) {
            selected[i] |= source_bit(j);
            ++hits;
          }
        if (hits == 0 && warnings)
          warnings->push_back("source " + s.source_name(j) + ": Bernoulli draw selected no units");
        continue;
      }
      const double p = design.mode == SamplingMode::StratifiedWor ? design.stratum_fractions[j][k]
                                                                 : design.fractions[j];
      const std::size_t n = wor_subsample_size(p, pool.size());
      choose(pool, n, rng);
      for (std::size_t t = 0; t < n; ++t) selected[pool[t]] |= source_bit(j);
    }
  }
  return s.with_selections(std::move(selected));
}

namespace {

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t t = 1; t <= k; ++t) r = r * static_cast<double>(n - k + t) / static_cast<double>(t);
  return std::round(r);
}

}  // namespace

double count_selection_patterns(const MergedSample& s, const DesignSpec& design) {
  check_design(design, s.sources());
  if (design.mode != SamplingMode::Wor) throw ValidationError("enumeration supports WOR designs only");
  double total = 1.0;
  for (int j = 0; j < s.sources(); ++j) {
    const std::size_t Nj = s.source_size(j);
    total *= binomial(Nj, wor_subsample_size(design.fractions[j], Nj));
  }
  return total;
}

std::size_t enumerate_selections(const MergedSample& s, const DesignSpec& design,
                                 const std::function<void(const MergedSample&)>& visit, double budget) {
  const double total = count_selection_patterns(s, design);
  if (total > budget)
    throw ValidationError("enumeration would visit " + std::to_string(total) + " patterns (budget " +
                          std::to_string(budget) + ")");
  const int J = s.sources();
  std::vector<std::vector<std::size_t>> members(J);
  std::vector<std::vector<std::size_t>> combo(J);
  for (int j = 0; j < J; ++j) {
    for (std::size_t i = 0; i < s.rows(); ++i)
      if (in_mask(s.member(i), j)) members[j].push_back(i);
    combo[j].resize(wor_subsample_size(design.fractions[j], members[j].size()));
    std::iota(combo[j].begin(), combo[j].end(), std::size_t{0});
  }
  // Advance one source's combination in lexicographic order; false when it wraps.
  auto advance = [&](int j) {
    auto& c = combo[j];
    const std::size_t n = members[j].size(), k = c.size();
    for (std::size_t t = k; t-- > 0;) {
      if (c[t] < n - k + t) {
        ++c[t];
        for (std::size_t u = t + 1; u < k; ++u) c[u] = c[u - 1] + 1;
        return true;
      }
    }
    std::iota(c.begin(), c.end(), std::size_t{0});
    return false;
  };
  std::size_t visited = 0;
  while (true) {
    std::vector<SourceMask> sel(s.rows(), 0);
    for (int j = 0; j < J; ++j)
      for (auto t : combo[j]) sel[members[j][t]] |= source_bit(j);
    visit(s.with_selections(std::move(sel)));
    ++visited;
    int j = 0;
    while (j < J && !advance(j)) ++j;
    if (j == J) break;
  }
  return visited;
}

}  // namespace mergest
