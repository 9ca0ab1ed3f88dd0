#include "mergest/estimators.hpp"

#include <cmath>

namespace mergest {

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Linear: return "linear";
    case ModelKind::Logistic: return "logistic";
    case ModelKind::Cox: return "cox";
  }
  return "?";
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "linear") return ModelKind::Linear;
  if (name == "logistic") return ModelKind::Logistic;
  if (name == "cox") return ModelKind::Cox;
  throw ValidationError("unknown model '" + name + "' (known: linear, logistic, cox)");
}

std::vector<std::string> ModelSpec::coefficient_names() const {
  std::vector<std::string> out;
  if (kind != ModelKind::Cox && intercept) out.push_back("(Intercept)");
  out.insert(out.end(), covariates.begin(), covariates.end());
  return out;
}

ModelSpec linear_model(std::string y, std::vector<std::string> z, bool intercept) {
  return ModelSpec{ModelKind::Linear, std::move(y), {}, {}, std::move(z), intercept};
}

ModelSpec logistic_model(std::string y, std::vector<std::string> z, bool intercept) {
  return ModelSpec{ModelKind::Logistic, std::move(y), {}, {}, std::move(z), intercept};
}

ModelSpec cox_model(std::string time, std::string status, std::vector<std::string> z) {
  return ModelSpec{ModelKind::Cox, {}, std::move(time), std::move(status), std::move(z), false};
}

ModelData model_data(const HMeasure& meas, const ModelSpec& spec) {
  if (spec.dimension() == 0) throw ValidationError("model has no coefficients");
  ModelData d;
  const Eigen::MatrixXd X = meas.columns(spec.covariates);
  const bool icpt = spec.kind != ModelKind::Cox && spec.intercept;
  d.Z.resize(X.rows(), X.cols() + (icpt ? 1 : 0));
  if (icpt) d.Z.col(0).setOnes();
  d.Z.rightCols(X.cols()) = X;
  if (spec.kind == ModelKind::Cox) {
    const std::vector<std::string> cols{spec.time, spec.status};
    const Eigen::MatrixXd T = meas.columns(cols);
    d.y = T.col(0);
    d.status = T.col(1);
  } else {
    const std::vector<std::string> cols{spec.response};
    d.y = meas.columns(cols).col(0);
    if (spec.kind == ModelKind::Logistic)
      for (Eigen::Index i = 0; i < d.y.size(); ++i)
        if (d.y(i) != 0.0 && d.y(i) != 1.0) throw ValidationError("logistic response must be 0 or 1");
  }
  return d;
}

namespace {

Eigen::LDLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& M, const char* what) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
  const double scale = M.cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(scale > 0.0) || !(ldlt.vectorD().minCoeff() > 1e-13 * scale))
    throw NumericalError(std::string("singular ") + what);
  return ldlt;
}

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double log1pexp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

Estimate estimate_linear(const ModelData& d, const Eigen::VectorXd& w, double norm) {
  const Eigen::MatrixXd M = d.Z.transpose() * w.asDiagonal() * d.Z / norm;
  const Eigen::VectorXd b = d.Z.transpose() * w.asDiagonal() * d.y / norm;
  const auto ldlt = factor(M, "weighted Gram matrix");
  Estimate est;
  est.theta = ldlt.solve(b);
  const Eigen::VectorXd e = d.y - d.Z * est.theta;
  est.influence = ldlt.solve((d.Z.array().colwise() * e.array()).matrix().transpose()).transpose();
  est.diagnostics.converged = true;
  est.diagnostics.score_norm = (d.Z.transpose() * (w.array() * e.array()).matrix() / norm).lpNorm<Eigen::Infinity>();
  return est;
}

struct LogisticEval {
  double loglik;
  Eigen::VectorXd score;
  Eigen::MatrixXd info;
};

LogisticEval logistic_eval(const ModelData& d, const Eigen::VectorXd& w, double norm, const Eigen::VectorXd& theta) {
  const Eigen::VectorXd eta = d.Z * theta;
  Eigen::VectorXd r(eta.size()), v(eta.size());
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double g = expit(eta(i));
    r(i) = w(i) * (d.y(i) - g);
    v(i) = w(i) * g * (1.0 - g);
    ll += w(i) * (d.y(i) * eta(i) - log1pexp(eta(i)));
  }
  return {ll / norm, d.Z.transpose() * r / norm, d.Z.transpose() * v.asDiagonal() * d.Z / norm};
}

Estimate estimate_logistic(const ModelData& d, const Eigen::VectorXd& w, double norm, const FitOptions& opt) {
  Estimate est;
  est.theta = Eigen::VectorXd::Zero(d.Z.cols());
  LogisticEval ev = logistic_eval(d, w, norm, est.theta);
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    if (ev.score.lpNorm<Eigen::Infinity>() < opt.tolerance) break;
    const Eigen::VectorXd step = factor(ev.info, "logistic information matrix").solve(ev.score);
    double t = 1.0;
    LogisticEval next;
    for (int h = 0; h < 40; ++h, t *= 0.5) {
      next = logistic_eval(d, w, norm, est.theta + t * step);
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
    throw NumericalError("logistic Newton did not converge after " + std::to_string(it) +
                         " iterations (gradient norm " + std::to_string(est.diagnostics.score_norm) + ")");
  const Eigen::VectorXd eta = d.Z * est.theta;
  Eigen::VectorXd e(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) e(i) = d.y(i) - expit(eta(i));
  // Under complete separation the score vanishes only as theta diverges; no MLE exists.
  if (e.size() > 0 && e.cwiseAbs().maxCoeff() < 1e-6)
    throw NumericalError("logistic fit: the response is perfectly separated by the covariates");
  est.influence = factor(ev.info, "logistic information matrix")
                      .solve((d.Z.array().colwise() * e.array()).matrix().transpose())
                      .transpose();
  return est;
}

FitResult assemble(const ModelSpec& spec, Estimate&& est, VarianceDecomposition&& v, const HMeasure& m,
                   const FitOptions& opt) {
  FitResult r;
  r.model = model_kind_name(spec.kind);
  r.coefficients = spec.coefficient_names();
  r.theta = std::move(est.theta);
  r.var_population = std::move(v.population);
  r.var_design = std::move(v.design);
  r.N_effective = v.normalizer;
  Eigen::MatrixXd total = r.var_population;
  for (const auto& dj : r.var_design) total += dj;
  r.se = (total.diagonal() / r.N_effective).cwiseMax(0.0).cwiseSqrt();
  r.n_used = m.size();
  r.unknown_n = opt.unknown_n;
  r.diagnostics = std::move(est.diagnostics);
  r.baseline = std::move(est.baseline);
  if (opt.keep_influence) {
    r.influence_rows = m.units();
    r.influence = std::move(est.influence);
  }
  return r;
}

Eigen::VectorXd weight_vector(const HMeasure& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.weights().data(), m.size());
}

}  // namespace

Estimate estimate(ModelKind kind, const ModelData& d, const Eigen::VectorXd& w, double norm, const FitOptions& opt) {
  if (!(norm > 0.0)) throw NumericalError("population size normalizer must be positive");
  Estimate est;
  switch (kind) {
    case ModelKind::Linear: est = estimate_linear(d, w, norm); break;
    case ModelKind::Logistic: est = estimate_logistic(d, w, norm, opt); break;
    case ModelKind::Cox: est = estimate_cox(d, w, norm, opt); break;
  }
  if (!(est.diagnostics.score_norm < 1e-8))
    throw NumericalError("estimating equation not solved (score norm " + std::to_string(est.diagnostics.score_norm) + ")");
  return est;
}

FitResult fit(const HMeasure& meas, const ModelSpec& spec, const FitOptions& opt) {
  const ModelData d = model_data(meas, spec);
  const double norm = meas.normalizer(opt.unknown_n);
  Estimate est = estimate(spec.kind, d, weight_vector(meas), norm, opt);
  auto v = variance(meas, est.influence, opt.design, opt.unknown_n);
  return assemble(spec, std::move(est), std::move(v), meas, opt);
}

FitResult fit(const CalibratedMeasure& cal, const ModelSpec& spec, const FitOptions& opt) {
  if (opt.unknown_n) throw ValidationError("calibrated fits need a known N");
  if (opt.design != DesignKind::Wor) throw ValidationError("calibrated variance is available for WOR designs only");
  const HMeasure& meas = cal.measure();
  const ModelData d = model_data(meas, spec);
  Estimate est = estimate(spec.kind, d, weight_vector(meas), meas.population_size(), opt);
  auto v = variance_calibrated(cal, est.influence);
  FitResult r = assemble(spec, std::move(est), std::move(v), meas, opt);
  r.calibration = calibration_method_name(cal.method);
  r.diagnostics.warnings.insert(r.diagnostics.warnings.end(), cal.warnings.begin(), cal.warnings.end());
  return r;
}

FitResult fit_linear(const HMeasure& meas, const std::string& y, const std::vector<std::string>& z,
                     const FitOptions& options) {
  return fit(meas, linear_model(y, z), options);
}

FitResult fit_logistic(const HMeasure& meas, const std::string& y, const std::vector<std::string>& z,
                       const FitOptions& options) {
  return fit(meas, logistic_model(y, z), options);
}

FitResult fit_cox(const HMeasure& meas, const std::string& time, const std::string& status,
                  const std::vector<std::string>& z, const FitOptions& options) {
  return fit(meas, cox_model(time, status, z), options);
}

double h_objective(const HMeasure& meas, const ModelSpec& spec, const Eigen::VectorXd& theta) {
  const ModelData d = model_data(meas, spec);
  const Eigen::VectorXd w = weight_vector(meas);
  const double norm = meas.normalizer(!meas.known_n());
  switch (spec.kind) {
    case ModelKind::Linear: {
      const Eigen::VectorXd e = d.y - d.Z * theta;
      return -0.5 * (w.array() * e.array().square()).sum() / norm;
    }
    case ModelKind::Logistic: return logistic_eval(d, w, norm, theta).loglik;
    case ModelKind::Cox: return cox_evaluate(d, w, norm, theta).loglik;
  }
  return 0.0;
}

Eigen::VectorXd h_score(const HMeasure& meas, const ModelSpec& spec, const Eigen::VectorXd& theta) {
  const ModelData d = model_data(meas, spec);
  const Eigen::VectorXd w = weight_vector(meas);
  const double norm = meas.normalizer(!meas.known_n());
  switch (spec.kind) {
    case ModelKind::Linear: {
      const Eigen::VectorXd e = d.y - d.Z * theta;
      return d.Z.transpose() * (w.array() * e.array()).matrix() / norm;
    }
    case ModelKind::Logistic: return logistic_eval(d, w, norm, theta).score;
    case ModelKind::Cox: return cox_evaluate(d, w, norm, theta).score;
  }
  return {};
}

double check_score_gradient(const HMeasure& meas, const ModelSpec& spec, const Eigen::VectorXd& theta, double h) {
  const Eigen::VectorXd a = h_score(meas, spec, theta);
  Eigen::VectorXd fd(a.size());
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    Eigen::VectorXd up = theta, down = theta;
    up(k) += h;
    down(k) -= h;
    fd(k) = (h_objective(meas, spec, up) - h_objective(meas, spec, down)) / (2.0 * h);
  }
  const double denom = std::max({a.lpNorm<Eigen::Infinity>(), fd.lpNorm<Eigen::Infinity>(), 1e-300});
  return (a - fd).lpNorm<Eigen::Infinity>() / denom;
}

}  // namespace mergest
