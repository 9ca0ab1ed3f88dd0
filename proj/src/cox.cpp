// Weighted Cox partial likelihood with Breslow ties, weighted Breslow baseline hazard and the
// estimated efficient score. All sums run over tie groups of the sorted follow-up times.
#include <algorithm>
#include <cmath>
#include <numeric>

#include "mergest/estimators.hpp"

namespace mergest {

namespace {

struct Groups {
  std::vector<std::size_t> order;  // ascending time
  std::vector<std::size_t> start;  // group g is order[start[g] .. start[g+1])
};

Groups tie_groups(const Eigen::VectorXd& time) {
  Groups g;
  g.order.resize(time.size());
  std::iota(g.order.begin(), g.order.end(), std::size_t{0});
  std::stable_sort(g.order.begin(), g.order.end(), [&](std::size_t a, std::size_t b) { return time(a) < time(b); });
  for (std::size_t t = 0; t < g.order.size(); ++t)
    if (t == 0 || time(g.order[t]) != time(g.order[t - 1])) g.start.push_back(t);
  g.start.push_back(g.order.size());
  return g;
}

void check_inputs(const ModelData& d, const Eigen::VectorXd& w) {
  if (d.Z.rows() != d.y.size() || d.status.size() != d.y.size() || w.size() != d.y.size())
    throw ValidationError("Cox data arrays disagree in length");
  for (Eigen::Index i = 0; i < d.y.size(); ++i) {
    if (!(d.y(i) >= 0.0)) throw ValidationError("Cox follow-up times must be nonnegative");
    if (d.status(i) != 0.0 && d.status(i) != 1.0) throw ValidationError("Cox status must be 0 or 1");
  }
}

// Risk-set sums at each tie group: S0 = sum w e^eta, S1 = sum w e^eta z over {time >= t_g}.
struct RiskSums {
  Groups groups;
  Eigen::VectorXd eta;
  std::vector<double> S0;
  std::vector<Eigen::VectorXd> S1;
  std::vector<Eigen::MatrixXd> S2;  // filled on request
  std::vector<double> events;       // weighted event count per group
};

RiskSums risk_sums(const ModelData& d, const Eigen::VectorXd& w, const Eigen::VectorXd& theta, bool second) {
  RiskSums r;
  r.groups = tie_groups(d.y);
  r.eta = d.Z * theta;
  const std::size_t G = r.groups.start.size() - 1;
  const Eigen::Index p = d.Z.cols();
  r.S0.assign(G, 0.0);
  r.S1.assign(G, Eigen::VectorXd::Zero(p));
  if (second) r.S2.assign(G, Eigen::MatrixXd::Zero(p, p));
  r.events.assign(G, 0.0);
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t g = G; g-- > 0;) {
    for (std::size_t t = r.groups.start[g]; t < r.groups.start[g + 1]; ++t) {
      const std::size_t i = r.groups.order[t];
      const double e = w(i) * std::exp(r.eta(i));
      s0 += e;
      s1 += e * d.Z.row(i).transpose();
      if (second) s2.noalias() += e * d.Z.row(i).transpose() * d.Z.row(i);
      if (d.status(i) == 1.0) r.events[g] += w(i);
    }
    r.S0[g] = s0;
    r.S1[g] = s1;
    if (second) r.S2[g] = s2;
    if (r.events[g] != 0.0 && !(s0 > 0.0)) throw NumericalError("empty risk set at an event time");
  }
  return r;
}

}  // namespace

CoxEvaluation cox_evaluate(const ModelData& d, const Eigen::VectorXd& w, double norm, const Eigen::VectorXd& theta) {
  check_inputs(d, w);
  const auto r = risk_sums(d, w, theta, true);
  const Eigen::Index p = d.Z.cols();
  CoxEvaluation out{0.0, Eigen::VectorXd::Zero(p), Eigen::MatrixXd::Zero(p, p)};
  for (std::size_t g = 0; g + 1 < r.groups.start.size(); ++g) {
    if (r.events[g] == 0.0) continue;
    const Eigen::VectorXd zbar = r.S1[g] / r.S0[g];
    const double logS0 = std::log(r.S0[g]);
    for (std::size_t t = r.groups.start[g]; t < r.groups.start[g + 1]; ++t) {
      const std::size_t i = r.groups.order[t];
      if (d.status(i) != 1.0) continue;
      out.loglik += w(i) * (r.eta(i) - logS0);
      out.score += w(i) * (d.Z.row(i).transpose() - zbar);
    }
    out.information += r.events[g] * (r.S2[g] / r.S0[g] - zbar * zbar.transpose());
  }
  out.loglik /= norm;
  out.score /= norm;
  out.information /= norm;
  return out;
}

BaselineHazard breslow(const ModelData& d, const Eigen::VectorXd& w, const Eigen::VectorXd& theta) {
  check_inputs(d, w);
  const auto r = risk_sums(d, w, theta, false);
  BaselineHazard h;
  double cum = 0.0;
  for (std::size_t g = 0; g + 1 < r.groups.start.size(); ++g) {
    if (r.events[g] == 0.0) continue;
    cum += r.events[g] / r.S0[g];
    h.times.push_back(d.y(r.groups.order[r.groups.start[g]]));
    h.cumulative.push_back(cum);
  }
  return h;
}

Eigen::MatrixXd cox_efficient_score(const ModelData& d, const Eigen::VectorXd& w, const Eigen::VectorXd& theta) {
  check_inputs(d, w);
  const auto r = risk_sums(d, w, theta, false);
  const Eigen::Index p = d.Z.cols();
  Eigen::MatrixXd L(d.y.size(), p);
  // A = Lambda(t), B = int zbar dLambda over event times <= t.
  double A = 0.0;
  Eigen::VectorXd B = Eigen::VectorXd::Zero(p);
  for (std::size_t g = 0; g + 1 < r.groups.start.size(); ++g) {
    Eigen::VectorXd zbar = Eigen::VectorXd::Zero(p);
    if (r.events[g] != 0.0) {
      zbar = r.S1[g] / r.S0[g];
      const double dL = r.events[g] / r.S0[g];
      A += dL;
      B += zbar * dL;
    }
    for (std::size_t t = r.groups.start[g]; t < r.groups.start[g + 1]; ++t) {
      const std::size_t i = r.groups.order[t];
      const Eigen::VectorXd z = d.Z.row(i).transpose();
      Eigen::VectorXd l = -std::exp(r.eta(i)) * (z * A - B);
      if (d.status(i) == 1.0) l += z - zbar;
      L.row(i) = l.transpose();
    }
  }
  return L;
}

Estimate estimate_cox(const ModelData& d, const Eigen::VectorXd& w, double norm, const FitOptions& opt) {
  check_inputs(d, w);
  if ((d.status.array() == 1.0).count() == 0) throw ValidationError("Cox fit needs at least one event");
  const Eigen::Index p = d.Z.cols();
  Estimate est;
  est.theta = Eigen::VectorXd::Zero(p);
  CoxEvaluation ev = cox_evaluate(d, w, norm, est.theta);
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    if (ev.score.lpNorm<Eigen::Infinity>() < opt.tolerance) break;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(ev.information);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-14 * ev.information.norm()))
      throw NumericalError("singular Cox information matrix");
    const Eigen::VectorXd step = ldlt.solve(ev.score);
    double t = 1.0;
    CoxEvaluation next;
    for (int h = 0; h < 40; ++h, t *= 0.5) {
      next = cox_evaluate(d, w, norm, est.theta + t * step);
      if (std::isfinite(next.loglik) && next.loglik >= ev.loglik - 1e-12 * std::abs(ev.loglik)) break;
    }
    est.theta += t * step;
    ev = next;
    if (t * step.lpNorm<Eigen::Infinity>() < 1e-13 * (1.0 + est.theta.lpNorm<Eigen::Infinity>()) &&
        ev.score.lpNorm<Eigen::Infinity>() < 1e-8)
      break;
  }
  est.diagnostics.iterations = it;
  est.diagnostics.score_norm = ev.score.lpNorm<Eigen::Infinity>();
  est.diagnostics.converged = est.diagnostics.score_norm < 1e-8;
  if (!est.diagnostics.converged)
    throw NumericalError("Cox Newton did not converge (score norm " + std::to_string(est.diagnostics.score_norm) + ")");

  est.baseline = breslow(d, w, est.theta);
  const Eigen::MatrixXd L = cox_efficient_score(d, w, est.theta);
  const Eigen::MatrixXd I = L.transpose() * w.asDiagonal() * L / norm;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(I);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-14 * I.norm()))
    throw NumericalError("singular estimated efficient information");
  est.influence = ldlt.solve(L.transpose()).transpose();
  return est;
}

}  // namespace mergest
