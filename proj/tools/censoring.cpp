// Prints the censoring bound c giving a target event fraction for the Cox recipe.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "mergest/sampling.hpp"

int main(int argc, char** argv) {
  CLI::App app{"censoring bound for the Weibull Cox recipe"};
  mergest::RecipeConfig cfg;
  cfg.kind = mergest::RecipeConfig::Kind::CoxWeibull;
  cfg.theta = {0.6931471805599453, 0.6931471805599453};
  double target = 0.1529;
  std::size_t draws = 1000000;
  app.add_option("--theta", cfg.theta, "coefficients of z1, z2")->delimiter(',');
  app.add_option("--scale", cfg.weibull_scale, "Weibull scale");
  app.add_option("--shape", cfg.weibull_shape, "Weibull shape");
  app.add_option("--events", target, "target event fraction");
  app.add_option("--draws", draws, "Monte Carlo draws");
  CLI11_PARSE(app, argc, argv);
  try {
    const double c = mergest::calibrate_censoring(cfg, target, draws);
    std::printf("%.17g\n", c);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
