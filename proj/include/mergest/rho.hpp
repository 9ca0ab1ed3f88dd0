#pragma once

#include <span>
#include <string>
#include <vector>

#include "mergest/model.hpp"

namespace mergest {

enum class RhoKind { Balanced, SingleFrame, OptBernoulli, OptWor };

std::string rho_kind_name(RhoKind kind);
RhoKind rho_kind_from_name(const std::string& name);

// (1 - p) / p
double od(double p);

WeightScheme balanced_rho(int sources, std::span<const SourceMask> cells);
WeightScheme balanced_rho(const SourceLayout& layout);

// Cell constants proportional to the per-source inclusion probabilities.
WeightScheme single_frame_rho(std::span<const double> pi, std::span<const SourceMask> cells);
WeightScheme single_frame_rho(const SourceLayout& layout, const MergedSample& sample);

WeightScheme optimal_rho_bernoulli(std::span<const double> p, std::span<const SourceMask> cells);
WeightScheme optimal_rho_bernoulli(std::span<const double> p, const SourceLayout& layout);

struct OptWorResult {
  WeightScheme scheme;
  double c_raw = 0.0;  // before clamping to [0, 1]
  double numerator = 0.0;
  double denominator = 0.0;
};

// J = 2 only. F holds f evaluated at sample.selected_rows(), one row per selected unit.
// Source moments are H-measure estimates under the pilot scheme0.
OptWorResult optimal_rho_wor_detail(const MergedSample& sample, const Eigen::MatrixXd& F,
                                    const WeightScheme& scheme0);
WeightScheme optimal_rho_wor(const MergedSample& sample, const Eigen::MatrixXd& F, const WeightScheme& scheme0);

WeightScheme two_source_scheme(double c1);

}  // namespace mergest
