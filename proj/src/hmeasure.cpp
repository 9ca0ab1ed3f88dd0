#include "mergest/hmeasure.hpp"

#include <cmath>

#include "mergest/rho.hpp"

namespace mergest {

HMeasure::HMeasure(MergedSample sample, WeightScheme scheme) : sample_(std::move(sample)), scheme_(std::move(scheme)) {
  const int J = sample_.sources();
  if (scheme_.sources() != J) throw ValidationError("weight scheme and sample disagree on the number of sources");
  units_ = sample_.selected_rows();
  weights_.assign(units_.size(), 0.0);
  sources_.resize(J);
  for (std::size_t u = 0; u < units_.size(); ++u) {
    const std::size_t i = units_[u];
    const SourceMask m = sample_.member(i), sel = sample_.selected(i);
    const auto& c = scheme_.constants(m);
    for (int j = 0; j < J; ++j) {
      if (!in_mask(sel, j)) continue;
      if (!in_mask(m, j)) throw ValidationError("unit " + sample_.id(i) + " is selected outside its sources");
      const double pi = sample_.inclusion(i, j);
      if (!(pi > 0.0)) throw ValidationError("zero inclusion probability for a selected unit");
      auto& t = sources_[j];
      t.pos.push_back(u);
      t.rho.push_back(c[j]);
      t.inv_pi.push_back(1.0 / pi);
      t.stratum.push_back(sample_.stratum(i, j));
      weights_[u] += c[j] / pi;
    }
  }
}

HMeasure HMeasure::with_weights(std::vector<double> weights) const {
  if (weights.size() != units_.size()) throw ValidationError("one weight per selected unit is required");
  HMeasure out = *this;
  out.weights_ = std::move(weights);
  return out;
}

double HMeasure::estimate_N() const {
  double s = 0.0;
  for (double w : weights_) s += w;
  return s;
}

Eigen::MatrixXd HMeasure::columns(std::span<const std::string> names) const {
  Eigen::MatrixXd out(units_.size(), names.size());
  for (std::size_t c = 0; c < names.size(); ++c) {
    const int col = sample_.schema().index(names[c]);
    for (std::size_t u = 0; u < units_.size(); ++u) {
      const double v = sample_.value(units_[u], col);
      if (std::isnan(v))
        throw ValidationError("selected unit " + sample_.id(units_[u]) + " has no value for '" + names[c] + "'");
      out(u, c) = v;
    }
  }
  return out;
}

Eigen::MatrixXd HMeasure::evaluate(
    Eigen::Index dim, const std::function<void(std::size_t row, Eigen::Ref<Eigen::RowVectorXd> out)>& f) const {
  Eigen::MatrixXd out(units_.size(), dim);
  Eigen::RowVectorXd r(dim);
  for (std::size_t u = 0; u < units_.size(); ++u) {
    f(units_[u], r);
    out.row(u) = r;
  }
  return out;
}

namespace {

void check_rows(const HMeasure& m, const Eigen::MatrixXd& F) {
  if (static_cast<std::size_t>(F.rows()) != m.size())
    throw ValidationError("functional must have one row per selected unit");
}

Eigen::VectorXd weighted_sum(const HMeasure& m, const Eigen::MatrixXd& F) {
  check_rows(m, F);
  const Eigen::Map<const Eigen::VectorXd> w(m.weights().data(), m.size());
  return F.transpose() * w;
}

}  // namespace

Eigen::VectorXd h_mean(const HMeasure& m, const Eigen::MatrixXd& F) {
  if (!m.known_n()) throw ValidationError("N is unknown: use h_mean_ratio (unknown-N ratio estimator)");
  return weighted_sum(m, F) / m.population_size();
}

double estimate_N(const HMeasure& m) { return m.estimate_N(); }

Eigen::VectorXd h_mean_ratio(const HMeasure& m, const Eigen::MatrixXd& F) {
  const double Nhat = m.estimate_N();
  if (!(Nhat > 0.0)) throw NumericalError("estimated population size is zero");
  return weighted_sum(m, F) / Nhat;
}

Eigen::VectorXd source_component(const HMeasure& m, int j, const Eigen::MatrixXd& F) {
  check_rows(m, F);
  const auto& t = m.source(j);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(F.cols());
  for (std::size_t a = 0; a < t.pos.size(); ++a) s += (t.rho[a] * t.inv_pi[a]) * F.row(t.pos[a]).transpose();
  return s / m.population_size();
}

HTMoments source_moments(const HMeasure& m, int j, const Eigen::MatrixXd& G, int stratum) {
  const auto& t = m.source(j);
  if (static_cast<std::size_t>(G.rows()) != t.pos.size())
    throw ValidationError("source moments need one row per source-selected unit");
  const double Nj = static_cast<double>(stratum < 0 ? m.sample().source_size(j)
                                                    : m.sample().stratum_size(j, stratum));
  HTMoments r{Eigen::VectorXd::Zero(G.cols()), Eigen::MatrixXd::Zero(G.cols(), G.cols())};
  if (Nj == 0) return r;
  Eigen::VectorXd a(G.rows());
  for (Eigen::Index u = 0; u < G.rows(); ++u)
    a(u) = (stratum < 0 || t.stratum[u] == stratum) ? t.inv_pi[u] / Nj : 0.0;
  r.first = G.transpose() * a;
  r.second = G.transpose() * a.asDiagonal() * G;
  return r;
}

Eigen::MatrixXd rho_weighted(const HMeasure& m, int j, const Eigen::MatrixXd& F, const Eigen::VectorXd& center) {
  check_rows(m, F);
  const auto& t = m.source(j);
  Eigen::MatrixXd G(t.pos.size(), F.cols());
  for (std::size_t a = 0; a < t.pos.size(); ++a)
    G.row(a) = t.rho[a] * (F.row(t.pos[a]) - center.transpose());
  return G;
}

Eigen::MatrixXd population_variance(const HMeasure& m, const Eigen::MatrixXd& F, double normalizer) {
  check_rows(m, F);
  const Eigen::Map<const Eigen::VectorXd> w(m.weights().data(), m.size());
  const double total = w.sum();
  if (!(total > 0.0)) throw NumericalError("H-measure has zero total weight");
  const Eigen::RowVectorXd center = (F.transpose() * w).transpose() / total;
  const Eigen::MatrixXd D = F.rowwise() - center;
  Eigen::MatrixXd V = D.transpose() * w.asDiagonal() * D / normalizer;
  return 0.5 * (V + V.transpose());
}

Eigen::MatrixXd design_term(const HMeasure& m, int j, const Eigen::MatrixXd& G, DesignKind kind, double normalizer) {
  const auto& s = m.sample();
  const Eigen::Index d = G.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d, d);
  if (kind == DesignKind::Stratified) {
    if (!s.has_strata()) throw ValidationError("stratified variance requires declared strata");
    for (int k = 0; k < s.strata_count(j); ++k) {
      const auto Nk = s.stratum_size(j, k), nk = s.stratum_subsample_size(j, k);
      if (Nk == 0 || nk == Nk) continue;
      if (nk < 2)
        throw NumericalError("degenerate stratum (source " + s.source_name(j) + ", stratum " + std::to_string(k + 1) +
                             "): fewer than two selected units");
      const double p = static_cast<double>(nk) / static_cast<double>(Nk);
      const auto mom = source_moments(m, j, G, k);
      out += static_cast<double>(Nk) / normalizer * od(p) * mom.variance();
    }
    return 0.5 * (out + out.transpose());
  }
  const auto Nj = s.source_size(j), nj = s.subsample_size(j);
  if (Nj == 0 || nj == Nj) return out;
  if (nj < 2)
    throw NumericalError("source " + s.source_name(j) + ": design term needs at least two selected units");
  const double p = static_cast<double>(nj) / static_cast<double>(Nj);
  const auto mom = source_moments(m, j, G);
  const Eigen::MatrixXd moment = kind == DesignKind::Bernoulli ? mom.second : mom.variance();
  out = static_cast<double>(Nj) / normalizer * od(p) * moment;
  return 0.5 * (out + out.transpose());
}

namespace {

VarianceDecomposition decompose(const HMeasure& m, const Eigen::MatrixXd& F, DesignKind kind, bool unknown_n) {
  check_rows(m, F);
  VarianceDecomposition v;
  v.normalizer = m.normalizer(unknown_n);
  if (!(v.normalizer > 0.0)) throw NumericalError("population size normalizer is zero");
  v.population = population_variance(m, F, v.normalizer);
  Eigen::VectorXd center = Eigen::VectorXd::Zero(F.cols());
  if (unknown_n) center = h_mean_ratio(m, F);
  for (int j = 0; j < m.sample().sources(); ++j)
    v.design.push_back(design_term(m, j, rho_weighted(m, j, F, center), kind, v.normalizer));
  return v;
}

}  // namespace

VarianceDecomposition variance_wor(const HMeasure& m, const Eigen::MatrixXd& F) {
  return decompose(m, F, DesignKind::Wor, false);
}

VarianceDecomposition variance_bernoulli(const HMeasure& m, const Eigen::MatrixXd& F) {
  return decompose(m, F, DesignKind::Bernoulli, false);
}

VarianceDecomposition variance_stratified(const HMeasure& m, const Eigen::MatrixXd& F) {
  return decompose(m, F, DesignKind::Stratified, false);
}

VarianceDecomposition variance_unknown_N(const HMeasure& m, const Eigen::MatrixXd& F) {
  return decompose(m, F, DesignKind::Wor, true);
}

VarianceDecomposition variance(const HMeasure& m, const Eigen::MatrixXd& F, DesignKind kind, bool unknown_n) {
  return decompose(m, F, kind, unknown_n);
}

}  // namespace mergest
