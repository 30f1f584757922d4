#pragma once

// Runtime checks of properties every run must satisfy, on small instances.

#include <cstdint>
#include <string>
#include <vector>

#include "divsim/engine.hpp"
#include "divsim/metrics.hpp"

namespace divsim {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct InvariantSuiteOptions {
  std::size_t replications = 3;
  std::uint64_t seed = 1;
  double t_max = 3000.0;
  std::size_t initial_population = 100;
};

/// Per-run property checks: conservation, return cap, clock monotonicity and
/// the capacity bound when returns reset treatment.
inline std::vector<CheckResult> check_run(const SimulationConfig& config, const CovariateDistribution& dist,
                                          const CoefficientTable& table, const BaselineHazard& base) {
  Engine engine(config, dist, table, base);
  double last_clock = 0.0;
  bool causal = true;
  std::size_t exits_on_probation = 0;
  engine.set_observer([&](const Event& e, const Individual& ind, double clock) {
    if (e.time < last_clock || clock < last_clock) causal = false;
    last_clock = clock;
    if (e.kind == EventKind::exit && ind.off_probation == false) ++exits_on_probation;
  });
  const RunResult r = engine.run();
  std::vector<CheckResult> out;
  const auto& t = r.totals;
  out.push_back({"conservation", t.conserved(),
                 "arrivals " + std::to_string(t.arrivals) + " + initial " + std::to_string(t.initial_population) +
                     " vs completions " + std::to_string(t.completions) + " + incarcerations " +
                     std::to_string(t.incarcerations) + " + active " + std::to_string(t.active) + " + pending " +
                     std::to_string(t.pending_returns)});
  out.push_back({"return cap", t.max_return_count <= config.max_returns,
                 "max return count " + std::to_string(t.max_return_count) + ", cap " +
                     std::to_string(config.max_returns)});
  out.push_back({"clock monotone", causal, causal ? "ok" : "event observed before the current clock"});
  out.push_back({"exit only off probation", exits_on_probation == 0,
                 std::to_string(exits_on_probation) + " exits while on probation"});
  if (config.reset_treatment_on_return) {
    bool within = t.max_enrollment_after_assignment <= static_cast<std::size_t>(config.capacity);
    for (const auto& s : r.snapshots) within = within && s.enrollment <= static_cast<std::size_t>(config.capacity);
    out.push_back({"enrollment within capacity", within,
                   "max enrollment " + std::to_string(t.max_enrollment_after_assignment) + ", capacity " +
                       std::to_string(config.capacity)});
  }
  out.push_back({"episode count", r.snapshots.size() == config.episode_count(),
                 std::to_string(r.snapshots.size()) + " snapshots for " + std::to_string(config.episode_count()) +
                     " episodes"});
  return out;
}

/// Full suite over every policy and a few replications.
inline std::vector<CheckResult> run_invariant_suite(const CovariateDistribution& dist, const CoefficientTable& table,
                                                    const BaselineHazard& base, const InvariantSuiteOptions& opt = {}) {
  std::vector<CheckResult> results;
  const auto add = [&](std::string name, bool ok, std::string detail) {
    results.push_back({std::move(name), ok, std::move(detail)});
  };

  SimulationConfig base_config;
  base_config.t_max = opt.t_max;
  base_config.initial_population = opt.initial_population;
  base_config.capacity = 20;
  base_config.seed = opt.seed;

  for (auto policy : kAllPolicies) {
    for (bool reset : {false, true}) {
      for (std::size_t rep = 0; rep < opt.replications; ++rep) {
        SimulationConfig c = base_config;
        c.policy = policy;
        c.replication = rep;
        c.reset_treatment_on_return = reset;
        // A low stringency exercises the return path and the cap.
        c.delta_inc = 0.01;
        c.max_returns = 3;
        for (auto& r : check_run(c, dist, table, base)) {
          const std::string tag = std::string(to_string(policy)) + (reset ? "/reset" : "") + " rep " + std::to_string(rep);
          add(r.name + " [" + tag + "]", r.passed, r.detail);
        }
      }
    }
  }

  for (std::size_t rep = 0; rep < opt.replications; ++rep) {
    SimulationConfig c = base_config;
    c.replication = rep;
    c.policy = PolicyKind::high_risk;
    const auto a = run(c, dist, table, base);
    const auto b = run(c, dist, table, base);
    add("determinism [rep " + std::to_string(rep) + "]", a.snapshots == b.snapshots, "two identical runs");

    SimulationConfig n = c;
    n.policy = PolicyKind::null;
    SimulationConfig z = c;
    z.capacity = 0;
    const auto null_run = run(n, dist, table, base);
    bool same = true;
    for (auto policy : kAllPolicies) {
      z.policy = policy;
      same = same && run(z, dist, table, base).snapshots == null_run.snapshots;
    }
    add("null equals zero capacity [rep " + std::to_string(rep) + "]", same, "every policy at C=0 against null");
  }

  return results;
}

}  // namespace divsim
