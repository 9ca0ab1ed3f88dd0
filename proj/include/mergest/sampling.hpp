#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mergest/model.hpp"

namespace mergest {

enum class SamplingMode { Wor, Bernoulli, StratifiedWor };

struct DesignSpec {
  SamplingMode mode = SamplingMode::Wor;
  std::vector<double> fractions;                     // per source
  std::vector<std::vector<double>> stratum_fractions;  // per source, per stratum
  std::uint64_t seed = 0;
};

void check_design(const DesignSpec& design, int sources);

// round-half-to-even of p*N, clamped to [1, N] when N >= 1.
std::size_t wor_subsample_size(double p, std::size_t N);

std::uint64_t splitmix64(std::uint64_t x);
enum class Stage : std::uint64_t { Population = 1, Selection = 2, Pilot = 3, Calibration = 4 };
std::uint64_t substream_seed(std::uint64_t master, std::uint64_t replicate, Stage stage);

// Generates i.i.d. (x, v) rows.
class PopulationRecipe {
 public:
  virtual ~PopulationRecipe() = default;
  virtual const Schema& schema() const = 0;
  virtual void draw(std::mt19937_64& rng, std::span<double> row) const = 0;
};

struct RecipeConfig {
  enum class Kind { LinearNormal, LogisticNormal, CoxWeibull };
  Kind kind = Kind::LinearNormal;
  std::vector<double> theta;
  double noise_sd = 1.0;
  // linear/logistic: which of {y, z} are auxiliary (always observed)
  std::vector<std::string> auxiliary{"z"};
  // Cox: cumulative hazard (t/scale)^shape * exp(theta' z), C ~ U(0, censor_c)
  double weibull_scale = 0.2;
  double weibull_shape = 0.5;
  double censor_c = 1.0;
  double sensitivity = 0.9;  // P(U=1 | Z1=1)
  double specificity = 0.9;  // P(U=0 | Z1=0)
  std::vector<double> membership_logit;  // slopes on z2 of a softmax group g in {1..K}; empty: no g
};

std::string recipe_kind_name(RecipeConfig::Kind kind);
RecipeConfig::Kind recipe_kind_from_name(const std::string& name);
std::unique_ptr<PopulationRecipe> make_recipe(const RecipeConfig& config);

// Event fraction P(T <= C) for the Cox recipe with censoring bound c, from draws of T.
double cox_event_fraction(const std::vector<double>& event_times, double c);
std::vector<double> draw_cox_event_times(const RecipeConfig& config, std::size_t draws, std::uint64_t seed);
double calibrate_censoring(const RecipeConfig& config, double target_event_fraction,
                           std::size_t draws = 1000000, std::uint64_t seed = 20240611);

MergedSample draw_population(const PopulationRecipe& recipe, std::size_t N, const SourceLayout& layout,
                             std::uint64_t seed);

MergedSample draw_selections(const MergedSample& sample, const DesignSpec& design,
                             std::vector<std::string>* warnings = nullptr);

// Visits every joint WOR selection pattern once. Throws when the pattern count exceeds `budget`.
double count_selection_patterns(const MergedSample& sample, const DesignSpec& design);
std::size_t enumerate_selections(const MergedSample& sample, const DesignSpec& design,
                                 const std::function<void(const MergedSample&)>& visit,
                                 double budget = 1e6);

}  // namespace mergest
