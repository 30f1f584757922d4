// Runs one baseline replication per policy and prints window offense rates.

#include <iomanip>
#include <iostream>

#include "divsim/divsim.hpp"

int main() {
  using namespace divsim;
  const CovariateDistribution cohort = default_cohort();
  const CoefficientTable table = default_coefficient_table();

  TreatmentAnchor anchor;
  anchor.median_risk = weighted_median_risk(cohort, table, 0.0);
  const BaselineHazard base = calibrate_baseline_from_anchor(anchor);

  std::cout << std::fixed << std::setprecision(4);
  for (PolicyKind policy : kAllPolicies) {
    SimulationConfig config;
    config.policy = policy;
    config.seed = 7;
    const RunResult result = run(config, cohort, table, base);
    const EpisodeMetrics early = window_metrics(result.snapshots, Window::short_term);
    const EpisodeMetrics late = window_metrics(result.snapshots, Window::long_term);
    std::cout << std::left << std::setw(20) << to_string(policy) << " short " << early.offenses_per_capita
              << "  long " << late.offenses_per_capita << "  population " << late.population << '\n';
  }
}
