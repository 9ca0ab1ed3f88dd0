#include "mergest/calibration.hpp"

#include <cmath>

#include "mergest/rho.hpp"

namespace mergest {

std::string calibration_method_name(CalibrationMethod m) {
  switch (m) {
    case CalibrationMethod::Standard: return "standard";
    case CalibrationMethod::SourceSpecific: return "source";
    case CalibrationMethod::SampleSpecific: return "sample";
  }
  return "?";
}

CalibrationMethod calibration_method_from_name(const std::string& name) {
  if (name == "standard") return CalibrationMethod::Standard;
  if (name == "source") return CalibrationMethod::SourceSpecific;
  if (name == "sample") return CalibrationMethod::SampleSpecific;
  throw ValidationError("unknown calibration method '" + name + "' (known: none, standard, source, sample)");
}

GFunction GFunction::exp_bounded(double lower, double upper) {
  if (!(lower >= 0.0 && lower < 1.0 && upper > 1.0 && std::isfinite(upper)))
    throw ValidationError("bounded exponential calibration needs 0 <= lower < 1 < upper");
  return GFunction(Kind::ExpBounded, lower, upper);
}

GFunction GFunction::from_name(const std::string& name) {
  if (name == "affine") return affine();
  if (name == "logistic") return logistic_shifted();
  if (name == "exp-bounded") return exp_bounded();
  throw ValidationError("unknown calibration function '" + name + "' (known: affine, logistic, exp-bounded)");
}

std::string GFunction::name() const {
  switch (kind_) {
    case Kind::Affine: return "affine";
    case Kind::LogisticShifted: return "logistic";
    case Kind::ExpBounded: return "exp-bounded";
  }
  return "?";
}

double GFunction::value(double x) const {
  switch (kind_) {
    case Kind::Affine: return 1.0 + x;
    case Kind::LogisticShifted: return 2.0 / (1.0 + std::exp(-2.0 * x));
    case Kind::ExpBounded: {
      // lower + (upper - lower) * sigmoid(A x + log(b / a)); monotone in floating point as written
      const double a = upper_ - 1.0, b = 1.0 - lower_, A = (upper_ - lower_) / (a * b);
      return lower_ + (upper_ - lower_) / (1.0 + std::exp(-(A * x + std::log(b / a))));
    }
  }
  return 0.0;
}

double GFunction::derivative(double x) const {
  switch (kind_) {
    case Kind::Affine: return 1.0;
    case Kind::LogisticShifted: {
      // symmetric in x; this form does not cancel to 0 in the tails
      const double e = std::exp(-2.0 * std::abs(x));
      return 4.0 * e / ((1.0 + e) * (1.0 + e));
    }
    case Kind::ExpBounded: {
      const double a = upper_ - 1.0, b = 1.0 - lower_, A = (upper_ - lower_) / (a * b);
      const double e = std::exp(-std::abs(A * x + std::log(b / a)));
      return (upper_ - lower_) * A * e / ((1.0 + e) * (1.0 + e));
    }
  }
  return 0.0;
}

namespace {

Eigen::VectorXd residual(const Eigen::MatrixXd& U, const Eigen::VectorXd& a, const Eigen::VectorXd& target,
                         const GFunction& g, const Eigen::VectorXd& alpha) {
  const Eigen::VectorXd eta = U * alpha;
  Eigen::VectorXd ga(U.rows());
  for (Eigen::Index i = 0; i < U.rows(); ++i) ga(i) = a(i) * g.value(eta(i));
  return U.transpose() * ga - target;
}

Eigen::VectorXd solve_spd(const Eigen::MatrixXd& M, const Eigen::VectorXd& rhs, const char* what) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
  if (qr.rank() < M.cols())
    throw NumericalError(std::string("singular ") + what + " (rank " + std::to_string(qr.rank()) + " of " +
                         std::to_string(M.cols()) + ")");
  return qr.solve(rhs);
}

}  // namespace

CalibrationSolution solve_calibration(const Eigen::MatrixXd& U, const Eigen::VectorXd& a, const Eigen::VectorXd& target,
                                      const GFunction& g, CalibrationSolver solver, int max_iterations,
                                      double tolerance) {
  const Eigen::Index k = U.cols();
  CalibrationSolution sol;
  sol.alpha = Eigen::VectorXd::Zero(k);
  if (solver == CalibrationSolver::Auto)
    solver = g.kind() == GFunction::Kind::Affine ? CalibrationSolver::ClosedForm : CalibrationSolver::Newton;
  // Residual scale for the convergence test: size of the weighted totals involved.
  const double scale = 1.0 + std::max(target.lpNorm<Eigen::Infinity>(),
                                      (U.cwiseAbs().transpose() * a).lpNorm<Eigen::Infinity>());

  if (solver == CalibrationSolver::ClosedForm) {
    if (g.kind() != GFunction::Kind::Affine) throw ValidationError("the closed-form solution requires an affine G");
    const Eigen::MatrixXd M = U.transpose() * a.asDiagonal() * U;
    sol.alpha = solve_spd(M, target - U.transpose() * a, "calibration second-moment matrix");
    sol.residual = residual(U, a, target, g, sol.alpha).lpNorm<Eigen::Infinity>();
    return sol;
  }

  Eigen::VectorXd r = residual(U, a, target, g, sol.alpha);
  for (int it = 0; it < max_iterations; ++it) {
    if (r.lpNorm<Eigen::Infinity>() <= tolerance * scale) {
      sol.residual = r.lpNorm<Eigen::Infinity>();
      return sol;
    }
    const Eigen::VectorXd eta = U * sol.alpha;
    Eigen::VectorXd d(U.rows());
    for (Eigen::Index i = 0; i < U.rows(); ++i) d(i) = a(i) * g.derivative(eta(i));
    const Eigen::MatrixXd Jac = U.transpose() * d.asDiagonal() * U;
    const Eigen::VectorXd step = solve_spd(Jac, r, "calibration Jacobian");
    double t = 1.0;
    bool accepted = false;
    while (t > 1e-12) {
      const Eigen::VectorXd trial = sol.alpha - t * step;
      const Eigen::VectorXd rt = residual(U, a, target, g, trial);
      if (rt.norm() < r.norm()) {
        sol.alpha = trial;
        r = rt;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    sol.iterations = it + 1;
    if (!accepted) break;
  }
  sol.residual = r.lpNorm<Eigen::Infinity>();
  if (sol.residual <= tolerance * scale) return sol;
  throw NumericalError("calibration Newton did not converge after " + std::to_string(sol.iterations) +
                       " iterations (residual " + std::to_string(sol.residual) + ")");
}

namespace {

std::vector<int> variable_columns(const MergedSample& s, const std::vector<std::string>& names) {
  if (names.empty()) throw ValidationError("calibration needs at least one variable");
  std::vector<int> cols;
  for (const auto& n : names) {
    const int c = s.schema().index(n);
    if (!s.schema().auxiliary[c])
      throw ValidationError("calibration variable '" + n + "' is not an auxiliary (v) column");
    cols.push_back(c);
  }
  return cols;
}

void require_roster(const MergedSample& s) {
  if (!s.full_roster() || !s.population_size())
    throw ValidationError("calibration needs the auxiliary variables of every population unit and a known N");
}

Eigen::RowVectorXd row_of(const MergedSample& s, std::size_t i, const std::vector<int>& cols) {
  Eigen::RowVectorXd v(cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) v(c) = s.value(i, cols[c]);
  return v;
}

// (V 1{source 1}, ..., V 1{source J}) for one unit.
Eigen::RowVectorXd stacked(const Eigen::RowVectorXd& v, SourceMask m, int J) {
  const Eigen::Index k = v.size();
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(J * k);
  for (int j = 0; j < J; ++j)
    if (in_mask(m, j)) out.segment(j * k, k) = v;
  return out;
}

// Regressor of the defining equation for standard/source calibration, at the selected units.
Eigen::MatrixXd regressor(const CalibratedMeasure& cal) {
  if (cal.method == CalibrationMethod::Standard) return cal.V;
  const auto& m = cal.base;
  const int J = m.sample().sources();
  Eigen::MatrixXd U(m.size(), J * cal.V.cols());
  for (std::size_t u = 0; u < m.size(); ++u) U.row(u) = stacked(cal.V.row(u), m.sample().member(m.units()[u]), J);
  return U;
}

Eigen::VectorXd population_target(const CalibratedMeasure& cal, const std::vector<int>& cols) {
  const auto& s = cal.base.sample();
  const int J = s.sources();
  const bool stack = cal.method == CalibrationMethod::SourceSpecific;
  Eigen::VectorXd t = Eigen::VectorXd::Zero(stack ? J * cols.size() : cols.size());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const Eigen::RowVectorXd v = row_of(s, i, cols);
    if (!v.allFinite()) throw ValidationError("calibration variable missing for unit " + s.id(i));
    t += (stack ? stacked(v, s.member(i), J) : v).transpose();
  }
  return t / s.known_population_size();
}

// Centered regressor rho^(j) V - (member mean of rho^(j) V) at the source-j selected units.
Eigen::MatrixXd centered_regressor(const CalibratedMeasure& cal, int j) {
  const auto& t = cal.base.source(j);
  Eigen::MatrixXd U(t.pos.size(), cal.V.cols());
  for (std::size_t a = 0; a < t.pos.size(); ++a)
    U.row(a) = t.rho[a] * cal.V.row(t.pos[a]) - cal.centers[j].transpose();
  return U;
}

Eigen::VectorXd source_ht_weights(const HMeasure& m, int j) {
  const auto& t = m.source(j);
  const double Nj = static_cast<double>(m.sample().source_size(j));
  Eigen::VectorXd a(t.pos.size());
  for (std::size_t q = 0; q < t.pos.size(); ++q) a(q) = t.inv_pi[q] / Nj;
  return a;
}

bool is_null_regressor(const Eigen::MatrixXd& U, const CalibratedMeasure& cal) {
  const double ref = 1.0 + cal.V.cwiseAbs().maxCoeff();
  return U.size() == 0 || U.cwiseAbs().maxCoeff() <= 1e-12 * ref;
}

CalibratedMeasure start(const HMeasure& meas, CalibrationMethod method, const CalibrationOptions& options,
                        std::vector<int>& cols) {
  require_roster(meas.sample());
  cols = variable_columns(meas.sample(), options.variables);
  CalibratedMeasure cal{meas, meas, method, options, {}, {}, {}, 0, {}};
  cal.V = meas.columns(options.variables);
  return cal;
}

}  // namespace

CalibratedMeasure calibrate_standard(const HMeasure& meas, const CalibrationOptions& options) {
  std::vector<int> cols;
  auto cal = start(meas, CalibrationMethod::Standard, options, cols);
  const Eigen::Map<const Eigen::VectorXd> w(meas.weights().data(), meas.size());
  const Eigen::VectorXd a = w / meas.population_size();
  const auto sol = solve_calibration(cal.V, a, population_target(cal, cols), options.g, options.solver,
                                     options.max_iterations, options.tolerance);
  cal.alpha = {sol.alpha};
  cal.iterations = sol.iterations;
  const Eigen::VectorXd eta = cal.V * sol.alpha;
  std::vector<double> wc(meas.size());
  for (std::size_t u = 0; u < meas.size(); ++u) wc[u] = meas.weights()[u] * options.g.value(eta(u));
  cal.calibrated = meas.with_weights(std::move(wc));
  return cal;
}

CalibratedMeasure calibrate_source_specific(const HMeasure& meas, const CalibrationOptions& options) {
  std::vector<int> cols;
  auto cal = start(meas, CalibrationMethod::SourceSpecific, options, cols);
  const int J = meas.sample().sources();
  const Eigen::Index k = cal.V.cols();
  for (int j = 0; j < J; ++j)
    if (meas.source(j).pos.empty())
      throw NumericalError("source-specific calibration: source " + meas.sample().source_name(j) +
                           " has no selected units");
  const Eigen::MatrixXd U = regressor(cal);
  const Eigen::Map<const Eigen::VectorXd> w(meas.weights().data(), meas.size());
  const Eigen::VectorXd a = w / meas.population_size();
  const auto sol = solve_calibration(U, a, population_target(cal, cols), options.g, options.solver,
                                     options.max_iterations, options.tolerance);
  for (int j = 0; j < J; ++j) cal.alpha.push_back(sol.alpha.segment(j * k, k));
  cal.iterations = sol.iterations;
  const Eigen::VectorXd eta = U * sol.alpha;
  std::vector<double> wc(meas.size());
  for (std::size_t u = 0; u < meas.size(); ++u) wc[u] = meas.weights()[u] * options.g.value(eta(u));
  cal.calibrated = meas.with_weights(std::move(wc));
  return cal;
}

CalibratedMeasure calibrate_sample_specific(const HMeasure& meas, const CalibrationOptions& options) {
  std::vector<int> cols;
  auto cal = start(meas, CalibrationMethod::SampleSpecific, options, cols);
  const auto& s = meas.sample();
  const int J = s.sources();
  const Eigen::Index k = cal.V.cols();

  cal.centers.assign(J, Eigen::VectorXd::Zero(k));
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const SourceMask m = s.member(i);
    const Eigen::RowVectorXd v = row_of(s, i, cols);
    if (!v.allFinite()) throw ValidationError("calibration variable missing for unit " + s.id(i));
    const auto& c = meas.scheme().constants(m);
    for (int j = 0; j < J; ++j)
      if (in_mask(m, j)) cal.centers[j] += c[j] * v.transpose();
  }
  for (int j = 0; j < J; ++j)
    if (s.source_size(j) > 0) cal.centers[j] /= static_cast<double>(s.source_size(j));

  std::vector<double> wc(meas.size(), 0.0);
  for (int j = 0; j < J; ++j) {
    const auto& t = meas.source(j);
    const Eigen::MatrixXd U = centered_regressor(cal, j);
    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(k);
    if (is_null_regressor(U, cal)) {
      if (!t.pos.empty())
        cal.warnings.push_back("source " + s.source_name(j) +
                               ": rho-weighted calibration variables are constant; no adjustment");
    } else {
      if (t.pos.size() < static_cast<std::size_t>(k) + 1)
        throw NumericalError("sample-specific calibration: source " + s.source_name(j) +
                             " has fewer selected units than calibration variables + 1");
      const auto sol = solve_calibration(U, source_ht_weights(meas, j), Eigen::VectorXd::Zero(k), options.g,
                                         options.solver, options.max_iterations, options.tolerance);
      alpha = sol.alpha;
      cal.iterations = std::max(cal.iterations, sol.iterations);
    }
    cal.alpha.push_back(alpha);
    const Eigen::VectorXd eta = U.rows() > 0 ? Eigen::VectorXd(U * alpha) : Eigen::VectorXd();
    for (std::size_t a = 0; a < t.pos.size(); ++a) wc[t.pos[a]] += t.rho[a] * t.inv_pi[a] * options.g.value(eta(a));
  }
  cal.calibrated = meas.with_weights(std::move(wc));
  return cal;
}

CalibratedMeasure calibrate(const HMeasure& meas, CalibrationMethod method, const CalibrationOptions& options) {
  switch (method) {
    case CalibrationMethod::Standard: return calibrate_standard(meas, options);
    case CalibrationMethod::SourceSpecific: return calibrate_source_specific(meas, options);
    case CalibrationMethod::SampleSpecific: return calibrate_sample_specific(meas, options);
  }
  throw ValidationError("unknown calibration method");
}

std::vector<double> calibration_residuals(const CalibratedMeasure& cal) {
  const auto& m = cal.base;
  const auto& s = m.sample();
  const int J = s.sources();
  const auto cols = variable_columns(s, cal.options.variables);
  const Eigen::Index k = cal.V.cols();
  std::vector<double> out;
  if (cal.method == CalibrationMethod::SampleSpecific) {
    for (int j = 0; j < J; ++j) {
      const Eigen::MatrixXd U = centered_regressor(cal, j);
      if (U.rows() == 0) {
        out.push_back(0.0);
        continue;
      }
      out.push_back(residual(U, source_ht_weights(m, j), Eigen::VectorXd::Zero(k), cal.options.g, cal.alpha[j])
                        .lpNorm<Eigen::Infinity>());
    }
    return out;
  }
  const Eigen::MatrixXd U = regressor(cal);
  Eigen::VectorXd alpha(U.cols());
  for (std::size_t b = 0; b < cal.alpha.size(); ++b) alpha.segment(b * k, k) = cal.alpha[b];
  const Eigen::Map<const Eigen::VectorXd> w(m.weights().data(), m.size());
  const Eigen::VectorXd r =
      residual(U, w / m.population_size(), population_target(cal, cols), cal.options.g, alpha);
  if (cal.method == CalibrationMethod::Standard) return {r.lpNorm<Eigen::Infinity>()};
  for (int j = 0; j < J; ++j) out.push_back(r.segment(j * k, k).lpNorm<Eigen::Infinity>());
  return out;
}

VarianceDecomposition variance_calibrated(const CalibratedMeasure& cal, const Eigen::MatrixXd& F) {
  const auto& mc = cal.calibrated;
  const auto& s = mc.sample();
  const int J = s.sources();
  VarianceDecomposition v;
  v.normalizer = mc.population_size();
  // The population term is the uncalibrated one; calibration only acts on the design terms.
  v.population = population_variance(cal.base, F, v.normalizer);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(F.cols());

  if (cal.method == CalibrationMethod::SampleSpecific) {
    for (int j = 0; j < J; ++j) {
      const Eigen::MatrixXd G = rho_weighted(mc, j, F, zero);
      if (s.subsample_size(j) == s.source_size(j) || G.rows() == 0) {
        v.design.push_back(design_term(mc, j, G, DesignKind::Wor, v.normalizer));
        continue;
      }
      Eigen::MatrixXd RV(G.rows(), cal.V.cols());
      const auto& t = mc.source(j);
      for (std::size_t a = 0; a < t.pos.size(); ++a) RV.row(a) = t.rho[a] * cal.V.row(t.pos[a]);
      // Projection with the same HT covariance used by the variance estimator, so the
      // residual variance is Var(rho f) - C Sigma^{-1} C^T exactly.
      Eigen::MatrixXd joint(G.rows(), G.cols() + RV.cols());
      joint << G, RV;
      const Eigen::MatrixXd cov = source_moments(mc, j, joint).variance();
      const Eigen::Index d = G.cols(), k = RV.cols();
      const Eigen::MatrixXd C = cov.topRightCorner(d, k);
      const Eigen::MatrixXd Sigma = cov.bottomRightCorner(k, k);
      Eigen::MatrixXd B = Eigen::MatrixXd::Zero(d, k);
      if (Sigma.cwiseAbs().maxCoeff() <= 1e-14 * (1.0 + RV.cwiseAbs().maxCoeff() * RV.cwiseAbs().maxCoeff())) {
        // rho^(j) V constant on the source: nothing to project on.
      } else {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Sigma);
        if (qr.rank() < k) throw NumericalError("singular projection matrix for source " + s.source_name(j));
        B = qr.solve(C.transpose()).transpose();
      }
      const Eigen::MatrixXd R = G - RV * B.transpose();
      v.design.push_back(design_term(mc, j, R, DesignKind::Wor, v.normalizer));
    }
    return v;
  }

  const Eigen::MatrixXd U = regressor(cal);
  const Eigen::Map<const Eigen::VectorXd> w(mc.weights().data(), mc.size());
  const Eigen::MatrixXd FU = F.transpose() * w.asDiagonal() * U;
  const Eigen::MatrixXd UU = U.transpose() * w.asDiagonal() * U;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(UU);
  if (qr.rank() < UU.cols()) throw NumericalError("singular projection matrix for calibrated variance");
  const Eigen::MatrixXd B = qr.solve(FU.transpose()).transpose();  // d x K
  for (int j = 0; j < J; ++j) {
    const auto& t = mc.source(j);
    Eigen::MatrixXd R(t.pos.size(), F.cols());
    for (std::size_t a = 0; a < t.pos.size(); ++a)
      R.row(a) = t.rho[a] * (F.row(t.pos[a]) - U.row(t.pos[a]) * B.transpose());
    v.design.push_back(design_term(mc, j, R, DesignKind::Wor, v.normalizer));
  }
  return v;
}

}  // namespace mergest
