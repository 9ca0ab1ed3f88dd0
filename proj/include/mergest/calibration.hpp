#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "mergest/hmeasure.hpp"

namespace mergest {

enum class CalibrationMethod { Standard, SourceSpecific, SampleSpecific };

std::string calibration_method_name(CalibrationMethod m);
CalibrationMethod calibration_method_from_name(const std::string& name);

// Calibration multiplier: G(0) = 1, strictly increasing, bounded positive derivative.
class GFunction {
 public:
  enum class Kind { Affine, LogisticShifted, ExpBounded };

  static GFunction affine() { return GFunction(Kind::Affine, 0.0, 0.0); }
  // 2 / (1 + exp(-2x)): range (0, 2), slope 1 at 0.
  static GFunction logistic_shifted() { return GFunction(Kind::LogisticShifted, 0.0, 2.0); }
  // Bounded exponential (logit-type) multiplier with range (lower, upper), lower < 1 < upper, slope 1 at 0.
  static GFunction exp_bounded(double lower = 0.1, double upper = 10.0);
  static GFunction from_name(const std::string& name);

  Kind kind() const { return kind_; }
  double lower() const { return lower_; }
  double upper() const { return upper_; }
  std::string name() const;
  double value(double x) const;
  double derivative(double x) const;

 private:
  GFunction(Kind k, double lo, double hi) : kind_(k), lower_(lo), upper_(hi) {}
  Kind kind_;
  double lower_, upper_;
};

enum class CalibrationSolver { Auto, ClosedForm, Newton };

struct CalibrationOptions {
  std::vector<std::string> variables;  // auxiliary columns
  GFunction g = GFunction::affine();
  CalibrationSolver solver = CalibrationSolver::Auto;
  int max_iterations = 100;
  double tolerance = 1e-10;
};

struct CalibrationSolution {
  Eigen::VectorXd alpha;
  int iterations = 0;
  double residual = 0.0;  // max-norm
};

// Solves sum_i a_i G(u_i' alpha) u_i = target. The closed form requires an affine G.
CalibrationSolution solve_calibration(const Eigen::MatrixXd& U, const Eigen::VectorXd& a,
                                      const Eigen::VectorXd& target, const GFunction& g,
                                      CalibrationSolver solver, int max_iterations = 100,
                                      double tolerance = 1e-10);

struct CalibratedMeasure {
  HMeasure base;
  HMeasure calibrated;
  CalibrationMethod method = CalibrationMethod::Standard;
  CalibrationOptions options;
  std::vector<Eigen::VectorXd> alpha;  // one vector (standard) or one per source
  Eigen::MatrixXd V;                   // calibration variables at the selected units
  std::vector<Eigen::VectorXd> centers;  // sample-specific: member mean of rho^(j) V per source
  int iterations = 0;
  std::vector<std::string> warnings;

  const HMeasure& measure() const { return calibrated; }
};

CalibratedMeasure calibrate_standard(const HMeasure& meas, const CalibrationOptions& options);
CalibratedMeasure calibrate_source_specific(const HMeasure& meas, const CalibrationOptions& options);
CalibratedMeasure calibrate_sample_specific(const HMeasure& meas, const CalibrationOptions& options);
CalibratedMeasure calibrate(const HMeasure& meas, CalibrationMethod method, const CalibrationOptions& options);

// Defining-equation residuals re-evaluated at the returned alpha: one max-norm per
// equation block (one for standard, one per source otherwise).
std::vector<double> calibration_residuals(const CalibratedMeasure& cal);

VarianceDecomposition variance_calibrated(const CalibratedMeasure& cal, const Eigen::MatrixXd& F);

}  // namespace mergest
