#pragma once

#include <random>
#include <vector>

#include "mergest/hmeasure.hpp"
#include "mergest/model.hpp"
#include "mergest/rho.hpp"
#include "mergest/sampling.hpp"

namespace testing {

using namespace mergest;

// Builds a sample from per-unit columns. `aux` lists which columns are auxiliary.
inline MergedSample make_sample(int J, const std::vector<std::string>& names, const std::vector<bool>& aux,
                                const std::vector<std::vector<double>>& rows, std::vector<SourceMask> member,
                                std::vector<SourceMask> selected = {}) {
  SampleData d;
  for (std::size_t c = 0; c < names.size(); ++c) d.schema.add(names[c], aux[c]);
  d.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < names.size(); ++c) d.values(i, c) = rows[i][c];
  d.member = std::move(member);
  d.selected = std::move(selected);
  d.sources = J;
  return MergedSample(std::move(d));
}

// TINY-A: units 1,2 in S1 only, unit 3 in both, unit 4 in S2 only; f = unit index.
// Realization R1 = {1, 3}, R2 = {4}.
inline MergedSample tiny_a() {
  return make_sample(2, {"f"}, {false}, {{1}, {2}, {3}, {4}}, {1, 1, 3, 2}, {1, 0, 1, 2});
}

inline WeightScheme half_half() { return two_source_scheme(0.5); }

inline DesignSpec wor(std::vector<double> p, std::uint64_t seed = 1) {
  DesignSpec d;
  d.fractions = std::move(p);
  d.seed = seed;
  return d;
}

// Random tiny population with J sources, every unit in at least one source and at
// least one overlapping unit; values in column "f" (analysis) and "v" (auxiliary).
inline MergedSample random_tiny(std::mt19937_64& rng, int J, std::size_t N) {
  std::uniform_int_distribution<SourceMask> mask(1, (SourceMask{1} << J) - 1);
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> rows;
  std::vector<SourceMask> member;
  for (std::size_t i = 0; i < N; ++i) {
    rows.push_back({normal(rng), normal(rng)});
    member.push_back(mask(rng));
  }
  member[0] = (SourceMask{1} << J) - 1;
  for (int j = 0; j < J; ++j) member[1 + j % (N - 1)] |= source_bit(j);
  return make_sample(J, {"f", "v"}, {false, true}, rows, member);
}

inline Eigen::MatrixXd column(const HMeasure& m, const char* name) {
  const std::string n = name;
  return m.columns(std::span<const std::string>(&n, 1));
}

}  // namespace testing
