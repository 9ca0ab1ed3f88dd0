#include <algorithm>
#include <cmath>
#include <numeric>

#include "mergest/sampling.hpp"

namespace mergest {

std::string recipe_kind_name(RecipeConfig::Kind kind) {
  switch (kind) {
    case RecipeConfig::Kind::LinearNormal: return "linear-normal";
    case RecipeConfig::Kind::LogisticNormal: return "logistic-normal";
    case RecipeConfig::Kind::CoxWeibull: return "cox-weibull";
  }
  return "?";
}

RecipeConfig::Kind recipe_kind_from_name(const std::string& name) {
  if (name == "linear-normal") return RecipeConfig::Kind::LinearNormal;
  if (name == "logistic-normal") return RecipeConfig::Kind::LogisticNormal;
  if (name == "cox-weibull") return RecipeConfig::Kind::CoxWeibull;
  throw ValidationError("unknown population recipe '" + name +
                        "' (known: linear-normal, logistic-normal, cox-weibull)");
}

namespace {

class RegressionRecipe : public PopulationRecipe {
 public:
  RegressionRecipe(const RecipeConfig& c, bool logistic) : cfg_(c), logistic_(logistic) {
    if (cfg_.theta.size() != 2) throw ValidationError("regression recipes take theta = (intercept, slope)");
    for (const auto& a : cfg_.auxiliary)
      if (a != "y" && a != "z") throw ValidationError("auxiliary columns must be chosen from {y, z}");
    auto is_aux = [&](const char* n) {
      return std::find(cfg_.auxiliary.begin(), cfg_.auxiliary.end(), n) != cfg_.auxiliary.end();
    };
    schema_.add("y", is_aux("y"));
    schema_.add("z", is_aux("z"));
  }
  const Schema& schema() const override { return schema_; }
  void draw(std::mt19937_64& rng, std::span<double> row) const override {
    std::normal_distribution<double> norm(0.0, 1.0);
    const double z = norm(rng);
    const double eta = cfg_.theta[0] + cfg_.theta[1] * z;
    if (logistic_) {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      row[0] = u(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
    } else {
      row[0] = eta + cfg_.noise_sd * norm(rng);
    }
    row[1] = z;
  }

 private:
  RecipeConfig cfg_;
  bool logistic_;
  Schema schema_;
};

class CoxRecipe : public PopulationRecipe {
 public:
  explicit CoxRecipe(const RecipeConfig& c) : cfg_(c) {
    if (cfg_.theta.size() != 2) throw ValidationError("the Cox recipe takes theta = (theta_z1, theta_z2)");
    if (!(cfg_.weibull_scale > 0 && cfg_.weibull_shape > 0 && cfg_.censor_c > 0))
      throw ValidationError("Weibull scale/shape and censoring bound must be positive");
    if (!(cfg_.sensitivity >= 0 && cfg_.sensitivity <= 1 && cfg_.specificity >= 0 && cfg_.specificity <= 1))
      throw ValidationError("sensitivity and specificity must lie in [0, 1]");
    schema_.add("time", true);
    schema_.add("status", true);
    schema_.add("z1", false);
    schema_.add("z2", true);
    schema_.add("u", true);
    if (!cfg_.membership_logit.empty()) schema_.add("g", true);
  }
  const Schema& schema() const override { return schema_; }
  void draw(std::mt19937_64& rng, std::span<double> row) const override {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> norm(0.0, 1.0);
    std::exponential_distribution<double> expo(1.0);
    const double z1 = unif(rng) < 0.5 ? 1.0 : 0.0;
    const double z2 = norm(rng);
    const double t = event_time(expo(rng), z1, z2);
    const double c = cfg_.censor_c * unif(rng);
    const double uu = unif(rng);
    const double u = z1 == 1.0 ? (uu < cfg_.sensitivity ? 1.0 : 0.0) : (uu < cfg_.specificity ? 0.0 : 1.0);
    row[0] = std::min(t, c);
    row[1] = t <= c ? 1.0 : 0.0;
    row[2] = z1;
    row[3] = z2;
    row[4] = u;
    if (!cfg_.membership_logit.empty()) row[5] = group(unif(rng), z2);
  }
  double event_time(double e, double z1, double z2) const {
    const double eta = cfg_.theta[0] * z1 + cfg_.theta[1] * z2;
    return cfg_.weibull_scale * std::pow(e * std::exp(-eta), 1.0 / cfg_.weibull_shape);
  }

 private:
  double group(double u, double z2) const {
    const auto& b = cfg_.membership_logit;
    double top = b[0] * z2;
    for (double s : b) top = std::max(top, s * z2);
    std::vector<double> p(b.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < b.size(); ++k) sum += p[k] = std::exp(b[k] * z2 - top);
    double acc = 0.0;
    for (std::size_t k = 0; k < b.size(); ++k) {
      acc += p[k] / sum;
      if (u < acc) return static_cast<double>(k + 1);
    }
    return static_cast<double>(b.size());
  }

  RecipeConfig cfg_;
  Schema schema_;
};

}  // namespace

std::unique_ptr<PopulationRecipe> make_recipe(const RecipeConfig& c) {
  switch (c.kind) {
    case RecipeConfig::Kind::LinearNormal: return std::make_unique<RegressionRecipe>(c, false);
    case RecipeConfig::Kind::LogisticNormal: return std::make_unique<RegressionRecipe>(c, true);
    case RecipeConfig::Kind::CoxWeibull: return std::make_unique<CoxRecipe>(c);
  }
  throw ValidationError("unknown recipe kind");
}

std::vector<double> draw_cox_event_times(const RecipeConfig& config, std::size_t draws, std::uint64_t seed) {
  CoxRecipe recipe(config);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> t(draws);
  for (auto& ti : t) {
    const double z1 = unif(rng) < 0.5 ? 1.0 : 0.0;
    const double z2 = norm(rng);
    ti = recipe.event_time(expo(rng), z1, z2);
  }
  return t;
}

double cox_event_fraction(const std::vector<double>& t, double c) {
  // P(T <= C) with C ~ U(0, c) equals E max(0, 1 - T/c).
  double s = 0.0;
  for (double ti : t)
    if (ti < c) s += 1.0 - ti / c;
  return s / static_cast<double>(t.size());
}

double calibrate_censoring(const RecipeConfig& config, double target, std::size_t draws, std::uint64_t seed) {
  if (!(target > 0.0 && target < 1.0)) throw ValidationError("target event fraction must lie in (0, 1)");
  auto t = draw_cox_event_times(config, draws, seed);
  std::sort(t.begin(), t.end());
  std::vector<double> prefix(t.size() + 1, 0.0);
  for (std::size_t i = 0; i < t.size(); ++i) prefix[i + 1] = prefix[i] + t[i];
  auto fraction = [&](double c) {
    const auto k = static_cast<std::size_t>(std::lower_bound(t.begin(), t.end(), c) - t.begin());
    return (static_cast<double>(k) - prefix[k] / c) / static_cast<double>(t.size());
  };
  double lo = 0.0, hi = t[t.size() / 2] + 1e-12;
  while (fraction(hi) < target) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (fraction(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace mergest
