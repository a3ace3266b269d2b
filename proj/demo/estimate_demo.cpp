// Prints every estimator's components for a trial CSV (default: a simulated
// scenario-3 panel).

#include <iomanip>
#include <iostream>

#include "swct/swct.hpp"

int main(int argc, char** argv) {
  using namespace swct;
  Trial trial;
  if (argc > 1) {
    trial = read_trial_csv(std::string(argv[1]));
  } else {
    const auto config = presets::sim1(3);
    trial.design = scenario_design(config);
    trial.panel = generate(config, trial.design, 0);
    for (int i = 0; i < trial.design.n_clusters(); ++i) trial.cluster_labels.push_back(std::to_string(i + 1));
  }
  const ContrastSpec rd{Contrast::risk_difference, {}};
  std::cout << std::fixed << std::setprecision(4);
  for (Method m : nonparametric_methods()) {
    const auto r = estimate(trial.design, trial.panel, rd, m);
    std::cout << to_string(m) << "  beta = " << r.beta_hat << '\n';
    for (const auto& c : r.components) {
      std::cout << "    " << std::left << std::setw(22) << c.label << std::right << " est " << std::setw(8)
                << c.estimate << "  weight " << c.weight;
      if (c.fallback) std::cout << "  (donor mean)";
      std::cout << '\n';
    }
  }
  const auto fit = mem_fit(trial.design, trial.panel);
  std::cout << "mem   beta = " << fit.beta_hat << "  se " << fit.se_beta << "  tau^2 " << fit.tau_sq_hat
            << "  sigma^2 " << fit.sigma_sq_hat << '\n';
}
