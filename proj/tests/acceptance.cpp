// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "divsim/divsim.hpp"

using namespace divsim;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string fixed(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

// Independent root of the anchor equation: plain bisection on the linear rate.
double bisection_oracle(double h, double beta, double horizon, double reduction) {
  const auto f = [&](double rate) {
    const double pu = 1.0 - std::exp(-rate * horizon * std::exp(h));
    const double pt = 1.0 - std::exp(-rate * horizon * std::exp(h - beta));
    return pt - (1.0 - reduction) * pu;
  };
  double lo = 1e-9;
  double hi = 1.0;
  for (int k = 0; k < 300; ++k) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct Inputs {
  ScenarioInputs in;
  Scenario baseline;
};

const Inputs& inputs() {
  static const Inputs i = [] {
    Inputs x;
    x.baseline = load_scenario(fs::path(DIVSIM_SOURCE_DIR) / "data" / "scenarios" / "baseline.yaml");
    x.in = load_inputs(x.baseline);
    return x;
  }();
  return i;
}

SimulationConfig baseline_config() { return inputs().baseline.config; }

RunResult simulate(const SimulationConfig& c) { return run(c, inputs().in.cohort, inputs().in.table, inputs().in.base); }

// Trajectories for every listed policy over replications [0, reps).
TrajectorySet simulate_policies(SimulationConfig c, const std::vector<PolicyKind>& policies, std::size_t reps,
                                std::uint64_t seed) {
  TrajectorySet set;
  c.seed = seed;
  for (auto p : policies) {
    for (std::size_t rep = 0; rep < reps; ++rep) {
      c.policy = p;
      c.replication = rep;
      set[p][rep] = simulate(c).snapshots;
    }
  }
  return set;
}

Estimate offense_delta(const TrajectorySet& set, PolicyKind p, Window w) {
  return relative_to_null(window_series(set.at(p), w, Metric::offenses),
                          window_series(set.at(PolicyKind::null), w, Metric::offenses), true);
}

Outcome anchor_calibration() {
  const TreatmentAnchor a;  // h = -1.434, beta 0.342, 730 days, 25%
  const BaselineHazard base = calibrate_baseline_from_anchor(a);
  const double ratio = offense_probability(base, a.horizon_days, a.median_risk - a.beta) /
                       offense_probability(base, a.horizon_days, a.median_risk);
  const double rate = base.rates().front();
  const double oracle = bisection_oracle(a.median_risk, a.beta, a.horizon_days, a.reduction);
  const double cum = base.cumulative(a.horizon_days);
  const double oracle_cum = oracle * a.horizon_days;
  const bool ok = std::abs(ratio - 0.75) <= 1e-9 && std::abs(cum - oracle_cum) <= 1e-9 * oracle_cum &&
                  std::abs(cum - 1.70) < 0.05;
  return {ok, "lambda0 " + fmt(rate, 10) + ", Lambda0(730) " + fmt(cum, 10) + " (oracle " + fmt(oracle_cum, 10) +
                  ", reference ~1.70), ratio " + fmt(ratio, 12)};
}

Outcome sampling_law() {
  const BaselineHazard base = calibrate_baseline_from_anchor(TreatmentAnchor{});
  double worst = 0.0;
  std::string detail;
  for (double h : {-2.0, 0.0, 1.0}) {
    AgentStream rng(derive_seed(2024, static_cast<std::uint64_t>(h + 5.0), "acceptance-ks"));
    std::vector<double> xs(100000);
    for (auto& x : xs) x = base.cumulative(sample_offense_time(h, base, rng)) * std::exp(h);
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double cdf = -std::expm1(-xs[i]);
      d = std::max({d, static_cast<double>(i + 1) / n - cdf, cdf - static_cast<double>(i) / n});
    }
    worst = std::max(worst, d);
    detail += "h=" + fmt(h, 2) + " KS " + fixed(d, 5) + "; ";
  }
  return {worst < 0.006, detail + "threshold 0.006"};
}

Outcome group_betas() {
  struct Case {
    const char* name;
    double pu, pt, expected;
  };
  const Case cases[] = {{"beta_H", 0.4644, 0.4418, 0.0684}, {"beta_L", 0.1768, 0.0346, 1.709},
                        {"beta_L+", 0.1768, 0.0061, 3.459}};
  bool ok = true;
  std::string detail;
  for (const auto& c : cases) {
    const double b = derive_group_beta(c.pu, c.pt);
    // Plug-back oracle: the treated probability implied by b.
    const double back = 1.0 - std::pow(1.0 - c.pu, std::exp(-b));
    ok = ok && std::abs(b - c.expected) <= 1e-3 && std::abs(back - c.pt) <= 1e-12;
    detail += std::string(c.name) + " " + fixed(b, 4) + " (plug-back " + fixed(back, 4) + "); ";
  }
  return {ok, detail};
}

Outcome conservation_and_caps() {
  const std::size_t reps = 50;
  std::size_t runs = 0, conserved = 0, overruns_reset = 0;
  int max_returns = 0;
  std::size_t max_enrollment_reset = 0;
  SimulationConfig c = baseline_config();
  for (bool reset : {false, true}) {
    for (auto p : kAllPolicies) {
      for (std::size_t rep = 0; rep < reps; ++rep) {
        c.policy = p;
        c.replication = rep;
        c.reset_treatment_on_return = reset;
        const RunResult r = simulate(c);
        ++runs;
        if (r.totals.conserved()) ++conserved;
        max_returns = std::max(max_returns, r.totals.max_return_count);
        if (reset) {
          max_enrollment_reset = std::max(max_enrollment_reset, r.totals.max_enrollment_after_assignment);
          for (const auto& s : r.snapshots) {
            if (s.enrollment > static_cast<std::size_t>(c.capacity)) ++overruns_reset;
          }
        }
      }
    }
  }
  const bool ok = conserved == runs && max_returns <= c.max_returns && overruns_reset == 0 &&
                  max_enrollment_reset <= static_cast<std::size_t>(c.capacity);
  return {ok, std::to_string(conserved) + "/" + std::to_string(runs) + " runs conserved, max return count " +
                  std::to_string(max_returns) + " (cap " + std::to_string(c.max_returns) +
                  "), reset mode max enrollment " + std::to_string(max_enrollment_reset) + " (C " +
                  std::to_string(c.capacity) + ")"};
}

std::string episode_bytes(PolicyKind label, const RunResult& r) {
  std::ostringstream os;
  write_episode_rows(os, 0, label, r.snapshots);
  return os.str();
}

Outcome null_equivalence_and_determinism() {
  bool null_ok = true;
  SimulationConfig c = baseline_config();
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    c.replication = rep;
    c.policy = PolicyKind::null;
    c.capacity = 80;
    const std::string null_bytes = episode_bytes(PolicyKind::null, simulate(c));
    c.capacity = 0;
    for (auto p : kAllPolicies) {
      c.policy = p;
      null_ok = null_ok && episode_bytes(PolicyKind::null, simulate(c)) == null_bytes;
    }
  }

  // Run the baseline scenario through the harness, then again from its manifest.
  const fs::path root = fs::temp_directory_path() / "divsim-acceptance";
  fs::remove_all(root);
  const fs::path scenario_path = fs::path(DIVSIM_SOURCE_DIR) / "data" / "scenarios" / "baseline.yaml";
  std::string text = read_text_file(scenario_path);
  const auto pos = text.find("replications: 20");
  if (pos != std::string::npos) text.replace(pos, 16, "replications: 3");
  RunOptions first;
  first.output_dir = root / "first";
  (void)execute(prepare_run(text, scenario_path.parent_path(), first, false), first);
  const ManifestInfo info = read_manifest(first.output_dir / "manifest.json");
  RunOptions second;
  second.output_dir = root / "second";
  second.seed_override = info.seed;
  second.policy_filter = info.policies;
  const Run rerun = prepare_run(info.scenario_text, info.base_dir, second, info.sweep);
  (void)execute(rerun, second);
  std::size_t files = 0, identical = 0;
  for (const auto& entry : fs::recursive_directory_iterator(first.output_dir)) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const fs::path rel = fs::relative(entry.path(), first.output_dir);
    const fs::path other = second.output_dir / rel;
    if (fs::exists(other) && read_text_file(entry.path()) == read_text_file(other)) ++identical;
  }
  fs::remove_all(root);
  const bool ok = null_ok && files > 0 && identical == files && rerun.config_hash == info.config_hash;
  return {ok, std::string("null vs C=0 ") + (null_ok ? "byte-identical" : "DIFFER") + " over 5 replications x 4 policies; manifest rerun " +
                  std::to_string(identical) + "/" + std::to_string(files) + " files byte-identical"};
}

Outcome short_term_dominance() {
  const std::size_t reps = 40;
  const auto set = simulate_policies(baseline_config(), {kAllPolicies.begin(), kAllPolicies.end()}, reps,
                                     inputs().baseline.seed);
  const Estimate low = offense_delta(set, PolicyKind::low_risk, Window::short_term);
  const Estimate high = offense_delta(set, PolicyKind::high_risk, Window::short_term);
  const Estimate age = offense_delta(set, PolicyKind::age_first_low_risk, Window::short_term);
  const auto hs = window_series(set.at(PolicyKind::high_risk), Window::short_term, Metric::offenses);
  const auto ls = window_series(set.at(PolicyKind::low_risk), Window::short_term, Metric::offenses);
  const Estimate gap = relative_to_null(hs, ls, true);  // high minus low, paired
  const bool ok = high.mean < low.mean && high.mean < age.mean && gap.upper() < 0.0;
  return {ok, std::to_string(reps) + " paired reps; short-term offense deltas: high-risk " + fixed(high.mean) + " +/- " +
                  fixed(high.half_width) + ", low-risk " + fixed(low.mean) + " +/- " + fixed(low.half_width) +
                  ", age-first " + fixed(age.mean) + " +/- " + fixed(age.half_width) + "; high-low " +
                  fixed(gap.mean) + " [" + fixed(gap.lower()) + ", " + fixed(gap.upper()) + "]"};
}

Outcome two_regimes() {
  const std::size_t reps = 20;
  const std::vector<PolicyKind> policies = {PolicyKind::null, PolicyKind::low_risk, PolicyKind::high_risk};
  std::vector<double> grid;
  for (int k = 1; k <= 30; ++k) grid.push_back(0.004 * k);
  std::map<double, std::vector<CrossingPoint>> sweeps;
  for (double off : {365.0, 2000.0}) {
    for (double d : grid) {
      SimulationConfig c = baseline_config();
      c.delta_inc = d;
      c.off_probation_mean = off;
      const auto set = simulate_policies(c, policies, reps, 7);
      sweeps[off].push_back({d, offense_delta(set, PolicyKind::low_risk, Window::long_term).mean,
                             offense_delta(set, PolicyKind::high_risk, Window::long_term).mean});
    }
  }
  const auto& s2000 = sweeps[2000.0];
  const auto& s365 = sweeps[365.0];
  const bool low_preferred_small = s2000.front().low_risk < s2000.front().high_risk;
  const bool high_preferred_large = s2000.back().high_risk < s2000.back().low_risk;
  const auto x365 = regime_crossing(s365);
  const auto x2000 = regime_crossing(s2000);
  const bool shifted = x365 && x2000 && *x365 < *x2000;
  const auto show = [](const std::optional<double>& x) { return x ? fixed(*x, 4) : std::string("none"); };
  std::string detail = "F_off 2000: at delta 0.004 low " + fixed(s2000.front().low_risk) + " high " +
                       fixed(s2000.front().high_risk) + ", at 0.12 low " + fixed(s2000.back().low_risk) + " high " +
                       fixed(s2000.back().high_risk) + "; crossing 365 " + show(x365) + ", 2000 " + show(x2000);
  return {low_preferred_small && high_preferred_large && shifted, detail};
}

Outcome capacity_and_arrivals() {
  const std::size_t reps = 20;
  const std::vector<PolicyKind> active = {PolicyKind::low_risk, PolicyKind::high_risk, PolicyKind::age_first_low_risk};
  const auto relative_spread = [&](const SimulationConfig& c) {
    const auto set = simulate_policies(c, {kAllPolicies.begin(), kAllPolicies.end()}, reps, 5);
    double lo = 1e300, hi = -1e300, mag = 0.0;
    for (auto p : active) {
      const double d = offense_delta(set, p, Window::long_term).mean;
      lo = std::min(lo, d);
      hi = std::max(hi, d);
      mag += std::abs(d);
    }
    mag /= static_cast<double>(active.size());
    return mag > 0.0 ? (hi - lo) / mag : 0.0;
  };
  bool ok = true;
  std::string detail;
  for (double d : {0.024, 0.084}) {
    SimulationConfig base = baseline_config();
    base.delta_inc = d;
    SimulationConfig cap = base;
    cap.capacity = 200;
    SimulationConfig fewer = base;
    fewer.arrival_mean = 10.0;
    const double sb = relative_spread(base);
    const double sc = relative_spread(cap);
    const double sa = relative_spread(fewer);
    ok = ok && sc < sb && sa < sb;
    detail += "delta " + fmt(d, 3) + ": relative spread baseline " + fixed(sb, 3) + ", C=200 " + fixed(sc, 3) +
              ", arrivals- " + fixed(sa, 3) + "; ";
  }
  return {ok, detail};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria = {
      {1, "anchor calibration", anchor_calibration},
      {2, "sampling law", sampling_law},
      {3, "heterogeneous beta derivation", group_betas},
      {4, "conservation and caps", conservation_and_caps},
      {5, "null equivalence and determinism", null_equivalence_and_determinism},
      {6, "short-term dominance", short_term_dominance},
      {7, "two-regime structure", two_regimes},
      {8, "capacity and arrival monotonicity", capacity_and_arrivals},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    while (!o.detail.empty() && (o.detail.back() == ' ' || o.detail.back() == ';')) o.detail.pop_back();
    if (!o.passed) ++failed;
    std::cout << (o.passed ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << " ("
              << fixed(secs, 1) << " s)" << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
