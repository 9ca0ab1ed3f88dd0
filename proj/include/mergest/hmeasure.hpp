#pragma once

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mergest/model.hpp"

namespace mergest {

// Hartley-type empirical measure: unit i carries w_i = sum_j R_i^(j) rho^(j)(V_i) / pi^(j)(V_i).
// Functionals are passed as matrices with one row per selected unit, in units() order.
class HMeasure {
 public:
  struct SourceTerm {
    std::vector<std::size_t> pos;  // positions into units()
    std::vector<double> rho;
    std::vector<double> inv_pi;
    std::vector<int> stratum;
  };

  HMeasure(MergedSample sample, WeightScheme scheme);

  // Same sample, scheme and design terms with replaced unit weights (calibration).
  HMeasure with_weights(std::vector<double> weights) const;

  const MergedSample& sample() const { return sample_; }
  const WeightScheme& scheme() const { return scheme_; }
  const std::vector<std::size_t>& units() const { return units_; }
  const std::vector<double>& weights() const { return weights_; }
  const SourceTerm& source(int j) const { return sources_.at(j); }
  std::size_t size() const { return units_.size(); }

  bool known_n() const { return sample_.population_size().has_value(); }
  double population_size() const { return sample_.known_population_size(); }
  double estimate_N() const;
  // N, or N-hat in unknown-N mode.
  double normalizer(bool unknown_n) const { return unknown_n ? estimate_N() : population_size(); }

  Eigen::MatrixXd columns(std::span<const std::string> names) const;
  Eigen::MatrixXd evaluate(Eigen::Index dim,
                           const std::function<void(std::size_t row, Eigen::Ref<Eigen::RowVectorXd> out)>& f) const;

 private:
  MergedSample sample_;
  WeightScheme scheme_;
  std::vector<std::size_t> units_;
  std::vector<double> weights_;
  std::vector<SourceTerm> sources_;
};

Eigen::VectorXd h_mean(const HMeasure& meas, const Eigen::MatrixXd& F);
double estimate_N(const HMeasure& meas);
Eigen::VectorXd h_mean_ratio(const HMeasure& meas, const Eigen::MatrixXd& F);

// (1/N) sum over source-j selected units of rho^(j) f / pi^(j).
Eigen::VectorXd source_component(const HMeasure& meas, int j, const Eigen::MatrixXd& F);

// Horvitz-Thompson moments of the rows of G over source j (stratum k when k >= 0):
// first = (1/N_j) sum g / pi, second = (1/N_j) sum g g^T / pi. G rows follow source(j).pos.
struct HTMoments {
  Eigen::VectorXd first;
  Eigen::MatrixXd second;
  Eigen::MatrixXd variance() const { return second - first * first.transpose(); }
};
HTMoments source_moments(const HMeasure& meas, int j, const Eigen::MatrixXd& G, int stratum = -1);

// Rows rho^(j)(V_i) (f_i - center) for the source-j selected units.
Eigen::MatrixXd rho_weighted(const HMeasure& meas, int j, const Eigen::MatrixXd& F, const Eigen::VectorXd& center);

// (1/normalizer) sum_i w_i (f_i - fbar)(f_i - fbar)^T with fbar the ratio mean.
Eigen::MatrixXd population_variance(const HMeasure& meas, const Eigen::MatrixXd& F, double normalizer);

enum class DesignKind { Wor, Bernoulli, Stratified };

// nu_hat * od(p_hat) * Var-hat (or the uncentered second moment for Bernoulli) of the rows of G,
// with nu_hat = N^(j)/normalizer. G rows follow source(j).pos.
Eigen::MatrixXd design_term(const HMeasure& meas, int j, const Eigen::MatrixXd& G, DesignKind kind,
                            double normalizer);

VarianceDecomposition variance_wor(const HMeasure& meas, const Eigen::MatrixXd& F);
VarianceDecomposition variance_bernoulli(const HMeasure& meas, const Eigen::MatrixXd& F);
VarianceDecomposition variance_stratified(const HMeasure& meas, const Eigen::MatrixXd& F);
VarianceDecomposition variance_unknown_N(const HMeasure& meas, const Eigen::MatrixXd& F);
VarianceDecomposition variance(const HMeasure& meas, const Eigen::MatrixXd& F, DesignKind kind, bool unknown_n);

}  // namespace mergest
