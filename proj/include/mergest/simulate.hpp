#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mergest/calibration.hpp"
#include "mergest/estimators.hpp"
#include "mergest/rho.hpp"
#include "mergest/sampling.hpp"

namespace mergest {

struct CalibrationConfig {
  std::optional<CalibrationMethod> method;  // nullopt: no calibration
  std::vector<std::string> variables;
  GFunction g = GFunction::affine();

  std::string label() const { return method ? calibration_method_name(*method) : "none"; }
};

struct Scenario {
  std::string name;
  std::string description;
  RecipeConfig population;
  SourceLayout layout;
  DesignSpec design;  // the seed is replaced by per-replicate substreams
  ModelSpec model;
  Eigen::VectorXd theta0;
  RhoKind rho = RhoKind::OptBernoulli;
  CalibrationConfig calibration;
  int replicates = 500;
  std::vector<std::size_t> n_grid{500};
  std::uint64_t seed = 1;
};

void validate_scenario(const Scenario& s);

struct ReplicateRow {
  int replicate = 0;
  bool ok = false;
  std::string error;
  Eigen::VectorXd theta;
  Eigen::VectorXd se;
  Eigen::VectorXd var_population;  // diagonal
  Eigen::VectorXd var_design;      // diagonal of the summed design terms
  double N_hat = 0.0;
  std::size_t n_used = 0;
  std::vector<std::size_t> source_sizes;
  std::vector<std::size_t> subsample_sizes;
  std::size_t selected_twice = 0;
  std::size_t selected_thrice = 0;
  double fpc_margin = 0.0;  // min_k diag(Bernoulli - WOR) for the fitted influence
  int iterations = 0;
};

struct CoefficientSummary {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  double bias = 0.0;  // |mean - truth|
  double sd = 0.0;
  double see = 0.0;
  double coverage = 0.0;
  double mean_abs_error = 0.0;
};

struct MCSummary {
  std::string scenario;
  std::string rho;
  std::string calibration;
  std::size_t N = 0;
  int requested = 0;
  int failures = 0;
  bool unstable = false;
  double mean_error_norm = 0.0;  // mean ||theta_hat - theta0||
  std::vector<CoefficientSummary> coefficients;
  std::vector<ReplicateRow> rows;  // every replicate, failed ones carry their error
};

struct RunOptions {
  std::optional<int> replicates;
  unsigned threads = 0;  // 0: hardware concurrency
};

// One replicate: population and selections come from substreams of (seed, r).
MergedSample replicate_sample(const Scenario& s, std::size_t N, int r);
WeightScheme build_scheme(const Scenario& s, RhoKind rho, const MergedSample& sample);
ReplicateRow run_replicate(const Scenario& s, const MergedSample& sample, int r, RhoKind rho,
                           const CalibrationConfig& calibration);

MCSummary summarize(const Scenario& s, std::size_t N, RhoKind rho, const CalibrationConfig& calibration,
                    std::vector<ReplicateRow> rows);
MCSummary run_scenario(const Scenario& s, std::size_t N, const RunOptions& options = {});
std::vector<MCSummary> run_scenario_grid(const Scenario& s, const RunOptions& options = {});

struct ComparisonGrid {
  std::vector<RhoKind> recipes;
  std::vector<CalibrationConfig> calibrations;
  std::vector<std::vector<MCSummary>> cells;  // [recipe][calibration]
};
ComparisonGrid compare_weights(const Scenario& s, std::size_t N, const std::vector<RhoKind>& recipes,
                               const std::vector<CalibrationConfig>& calibrations, const RunOptions& options = {});

struct QQPoint {
  std::string coefficient;
  double theoretical = 0.0;
  double empirical = 0.0;
};
std::vector<QQPoint> qq_points(const std::string& coefficient, std::vector<double> standardized);
std::vector<QQPoint> qq_data(const MCSummary& summary);

inline constexpr double kWaldZ = 1.959964;

}  // namespace mergest
