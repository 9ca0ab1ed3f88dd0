#include "mergest/rho.hpp"

#include <algorithm>
#include <cmath>

#include "mergest/hmeasure.hpp"

namespace mergest {

std::string rho_kind_name(RhoKind kind) {
  switch (kind) {
    case RhoKind::Balanced: return "balanced";
    case RhoKind::SingleFrame: return "single-frame";
    case RhoKind::OptBernoulli: return "opt-bernoulli";
    case RhoKind::OptWor: return "opt-wor";
  }
  return "?";
}

RhoKind rho_kind_from_name(const std::string& name) {
  if (name == "balanced") return RhoKind::Balanced;
  if (name == "single-frame") return RhoKind::SingleFrame;
  if (name == "opt-bernoulli") return RhoKind::OptBernoulli;
  if (name == "opt-wor") return RhoKind::OptWor;
  throw ValidationError("unknown rho recipe '" + name + "' (known: balanced, single-frame, opt-bernoulli, opt-wor)");
}

double od(double p) { return (1.0 - p) / p; }

namespace {

std::vector<SourceMask> layout_cells(const SourceLayout& layout) { return all_cells(layout.sources()); }

// Normalizes nonnegative scores over the cell; the last member absorbs rounding.
std::vector<double> normalized(int sources, SourceMask cell, const std::vector<double>& score) {
  std::vector<double> c(sources, 0.0);
  const auto members = mask_members(cell);
  double total = 0.0;
  for (int j : members) total += score[j];
  double used = 0.0;
  for (std::size_t t = 0; t + 1 < members.size(); ++t) {
    c[members[t]] = score[members[t]] / total;
    used += c[members[t]];
  }
  c[members.back()] = std::max(0.0, 1.0 - used);
  return c;
}

}  // namespace

WeightScheme balanced_rho(int sources, std::span<const SourceMask> cells) {
  std::map<SourceMask, std::vector<double>> out;
  const std::vector<double> ones(sources, 1.0);
  for (SourceMask m : cells) out[m] = normalized(sources, m, ones);
  return WeightScheme(sources, std::move(out));
}

WeightScheme balanced_rho(const SourceLayout& layout) {
  const auto cells = layout_cells(layout);
  return balanced_rho(layout.sources(), cells);
}

WeightScheme single_frame_rho(std::span<const double> pi, std::span<const SourceMask> cells) {
  const int J = static_cast<int>(pi.size());
  for (double p : pi)
    if (!(p > 0.0 && p <= 1.0)) throw ValidationError("single-frame weights need inclusion probabilities in (0, 1]");
  std::map<SourceMask, std::vector<double>> out;
  const std::vector<double> score(pi.begin(), pi.end());
  for (SourceMask m : cells) out[m] = normalized(J, m, score);
  return WeightScheme(J, std::move(out));
}

WeightScheme single_frame_rho(const SourceLayout& layout, const MergedSample& sample) {
  if (layout.sources() != sample.sources()) throw ValidationError("layout and sample disagree on sources");
  std::vector<double> pi(sample.sources());
  for (int j = 0; j < sample.sources(); ++j) pi[j] = sample.sampling_fraction(j);
  const auto cells = layout.sources() <= 20 ? layout_cells(layout) : observed_cells(sample);
  return single_frame_rho(pi, cells);
}

WeightScheme optimal_rho_bernoulli(std::span<const double> p, std::span<const SourceMask> cells) {
  const int J = static_cast<int>(p.size());
  for (double q : p)
    if (!(q > 0.0 && q <= 1.0)) throw ValidationError("sampling fractions must lie in (0, 1]");
  std::map<SourceMask, std::vector<double>> out;
  for (SourceMask m : cells) {
    bool any_census = false;
    for (int j : mask_members(m)) any_census = any_census || p[j] == 1.0;
    std::vector<double> score(J, 0.0);
    for (int j : mask_members(m)) {
      // c_j proportional to the product of od over the other members, i.e. to 1/od(p_j).
      if (any_census) score[j] = p[j] == 1.0 ? 1.0 : 0.0;
      else score[j] = 1.0 / od(p[j]);
    }
    out[m] = normalized(J, m, score);
  }
  return WeightScheme(J, std::move(out));
}

WeightScheme optimal_rho_bernoulli(std::span<const double> p, const SourceLayout& layout) {
  if (static_cast<int>(p.size()) != layout.sources()) throw ValidationError("one fraction per source is required");
  const auto cells = layout_cells(layout);
  return optimal_rho_bernoulli(p, cells);
}

WeightScheme two_source_scheme(double c1) {
  if (!(c1 >= 0.0 && c1 <= 1.0)) throw ValidationError("c1 must lie in [0, 1]");
  return WeightScheme(2, {{1u, {1.0, 0.0}}, {2u, {0.0, 1.0}}, {3u, {c1, 1.0 - c1}}});
}

OptWorResult optimal_rho_wor_detail(const MergedSample& s, const Eigen::MatrixXd& F, const WeightScheme& scheme0) {
  if (s.sources() != 2) throw ValidationError("the without-replacement optimum is implemented for J = 2 only");
  if (s.has_strata()) throw ValidationError("the without-replacement optimum assumes unstratified sources");
  const HMeasure pilot(s, scheme0);
  const auto& units = pilot.units();
  if (static_cast<std::size_t>(F.rows()) != units.size())
    throw ValidationError("f must be evaluated at every selected unit");
  const auto w = pilot.weights();
  const Eigen::Index d = F.cols();

  // Source-conditional moments P^(j) h = P(h 1{V in V^(j)}) / nu^(j), estimated by the pilot H-measure.
  Eigen::VectorXd Y1 = Eigen::VectorXd::Zero(d), Z1 = Y1, ZZ1 = Y1, W2 = Y1, Z2 = Y1, ZZ2 = Y1;
  for (std::size_t u = 0; u < units.size(); ++u) {
    const SourceMask m = s.member(units[u]);
    const Eigen::VectorXd f = F.row(u).transpose();
    if (m == 1u) Y1 += w[u] * f;
    if (m == 2u) W2 += w[u] * f;
    if (m == 3u) {
      Z1 += w[u] * f;
      ZZ1 += w[u] * f.cwiseProduct(f);
    }
  }
  Z2 = Z1;
  ZZ2 = ZZ1;
  const double N1 = static_cast<double>(s.source_size(0)), N2 = static_cast<double>(s.source_size(1));
  if (N1 == 0 || N2 == 0) throw ValidationError("both sources must be nonempty");
  Y1 /= N1;
  Z1 /= N1;
  ZZ1 /= N1;
  W2 /= N2;
  Z2 /= N2;
  ZZ2 /= N2;
  const Eigen::VectorXd var1 = ZZ1 - Z1.cwiseProduct(Z1);
  const Eigen::VectorXd var2 = ZZ2 - Z2.cwiseProduct(Z2);
  const double p1 = s.sampling_fraction(0), p2 = s.sampling_fraction(1);
  if (p1 <= 0 || p2 <= 0) throw ValidationError("both sources need selected units");
  const double N = s.population_size() ? *s.population_size() : pilot.estimate_N();
  const double a1 = N1 / N * od(p1), a2 = N2 / N * od(p2);

  OptWorResult r;
  r.numerator = a1 * Y1.dot(Z1) + a2 * (var2.sum() - W2.dot(Z2));
  r.denominator = a1 * var1.sum() + a2 * var2.sum();
  if (!(r.denominator >= 1e-12)) throw NumericalError("degenerate intersection variance");
  r.c_raw = r.numerator / r.denominator;
  r.scheme = two_source_scheme(std::clamp(r.c_raw, 0.0, 1.0));
  return r;
}

WeightScheme optimal_rho_wor(const MergedSample& s, const Eigen::MatrixXd& F, const WeightScheme& scheme0) {
  return optimal_rho_wor_detail(s, F, scheme0).scheme;
}

}  // namespace mergest
