#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "mergest/calibration.hpp"
#include "mergest/hmeasure.hpp"

namespace mergest {

enum class ModelKind { Linear, Logistic, Cox };

std::string model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

struct ModelSpec {
  ModelKind kind = ModelKind::Linear;
  std::string response;  // linear / logistic
  std::string time;      // Cox
  std::string status;    // Cox, 1 = event
  std::vector<std::string> covariates;
  bool intercept = true;  // ignored for Cox

  std::vector<std::string> coefficient_names() const;
  Eigen::Index dimension() const { return static_cast<Eigen::Index>(coefficient_names().size()); }
};

ModelSpec linear_model(std::string y, std::vector<std::string> z, bool intercept = true);
ModelSpec logistic_model(std::string y, std::vector<std::string> z, bool intercept = true);
ModelSpec cox_model(std::string time, std::string status, std::vector<std::string> z);

struct FitOptions {
  DesignKind design = DesignKind::Wor;
  bool unknown_n = false;
  int max_iterations = 50;
  double tolerance = 1e-10;
  bool keep_influence = true;
};

// Model columns at the selected units (units() order).
struct ModelData {
  Eigen::MatrixXd Z;
  Eigen::VectorXd y;       // response, or follow-up time for Cox
  Eigen::VectorXd status;  // Cox only
};
ModelData model_data(const HMeasure& meas, const ModelSpec& spec);

// Weighted estimator on raw arrays; w are unit weights and `norm` the N used by P^H.
struct Estimate {
  Eigen::VectorXd theta;
  Eigen::MatrixXd influence;
  FitDiagnostics diagnostics;
  BaselineHazard baseline;
};
Estimate estimate(ModelKind kind, const ModelData& data, const Eigen::VectorXd& w, double norm,
                  const FitOptions& options);

FitResult fit(const HMeasure& meas, const ModelSpec& spec, const FitOptions& options = {});
FitResult fit(const CalibratedMeasure& cal, const ModelSpec& spec, const FitOptions& options = {});

FitResult fit_linear(const HMeasure& meas, const std::string& y, const std::vector<std::string>& z,
                     const FitOptions& options = {});
FitResult fit_logistic(const HMeasure& meas, const std::string& y, const std::vector<std::string>& z,
                       const FitOptions& options = {});
FitResult fit_cox(const HMeasure& meas, const std::string& time, const std::string& status,
                  const std::vector<std::string>& z, const FitOptions& options = {});

// H-weighted objective (log-likelihood, partial log-likelihood, or minus half the weighted SSE)
// and its analytic gradient, both normalized by N.
double h_objective(const HMeasure& meas, const ModelSpec& spec, const Eigen::VectorXd& theta);
Eigen::VectorXd h_score(const HMeasure& meas, const ModelSpec& spec, const Eigen::VectorXd& theta);

// max-norm of (analytic - central difference) relative to the larger of the two gradients.
double check_score_gradient(const HMeasure& meas, const ModelSpec& spec, const Eigen::VectorXd& theta,
                            double h = 1e-6);

// Cox pieces on raw arrays (exposed for tests).
struct CoxEvaluation {
  double loglik = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd information;
};
CoxEvaluation cox_evaluate(const ModelData& data, const Eigen::VectorXd& w, double norm, const Eigen::VectorXd& theta);
BaselineHazard breslow(const ModelData& data, const Eigen::VectorXd& w, const Eigen::VectorXd& theta);
Eigen::MatrixXd cox_efficient_score(const ModelData& data, const Eigen::VectorXd& w, const Eigen::VectorXd& theta);
Estimate estimate_cox(const ModelData& data, const Eigen::VectorXd& w, double norm, const FitOptions& options);

}  // namespace mergest
