// divsim: command-line front end for the probation diversion simulator.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "divsim/divsim.hpp"

namespace {

using namespace divsim;

fs::path resolve_output_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("DIVSIM_OUTPUT_DIR"); env && *env) return env;
  return "divsim-out";
}

std::vector<PolicyKind> parse_policy_filter(const std::vector<std::string>& names) {
  std::vector<PolicyKind> out;
  for (const auto& n : names) {
    const auto k = policy_from_string(n);
    if (!k) throw ConfigError("unknown policy '" + n + "'");
    out.push_back(*k);
  }
  return out;
}

struct HarnessArgs {
  std::string scenario;
  std::string manifest;
  std::string output;
  std::size_t workers = 1;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> policies;
  bool fresh = false;
  bool quiet = false;
};

void add_harness_flags(CLI::App* cmd, HarnessArgs& a) {
  auto* group = cmd->add_option_group("input");
  group->add_option("scenario", a.scenario, "Scenario file (YAML)");
  group->add_option("--manifest", a.manifest, "Re-run from a manifest.json written by an earlier run");
  group->require_option(1);
  cmd->add_option("-o,--output", a.output, "Output directory (default: $DIVSIM_OUTPUT_DIR or ./divsim-out)");
  cmd->add_option("-j,--workers", a.workers, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", a.seed, "Override the scenario base seed");
  cmd->add_option("--policy", a.policies, "Restrict to these policies (null is always run)");
  cmd->add_flag("--fresh", a.fresh, "Ignore completed points recorded in the output directory");
  cmd->add_flag("-q,--quiet", a.quiet, "No progress output");
}

void print_offense_table(const Run& run, const fs::path& out, std::ostream& os) {
  os << std::left << std::setw(6) << "point" << std::setw(10) << "window" << std::setw(20) << "policy"
     << std::setw(12) << "offenses" << std::setw(24) << "delta vs null (95% CI)" << '\n';
  for (const auto& p : run.points) {
    const auto rows = aggregate(load_point(out / "episodes" / point_file_name(p.index)));
    for (const auto& row : rows) {
      std::ostringstream delta;
      if (row.policy == PolicyKind::null) {
        delta << "-";
      } else {
        delta << format_delta(row.deltas[0]) << " [" << std::fixed << std::setprecision(4) << row.deltas[0].lower()
              << ", " << row.deltas[0].upper() << "]";
      }
      std::ostringstream level;
      level << std::fixed << std::setprecision(4) << row.levels[0].mean;
      os << std::left << std::setw(6) << p.index << std::setw(10) << to_string(row.window) << std::setw(20)
         << to_string(row.policy) << std::setw(12) << level.str() << delta.str() << '\n';
    }
  }
}

int run_harness(const HarnessArgs& a, bool sweep) {
  RunOptions opt;
  opt.output_dir = resolve_output_dir(a.output);
  opt.workers = a.workers;
  opt.seed_override = a.seed;
  opt.policy_filter = parse_policy_filter(a.policies);
  opt.resume = !a.fresh;
  if (!a.quiet) opt.log = [](const std::string& m) { std::cerr << m << '\n'; };

  Run run;
  if (!a.manifest.empty()) {
    const ManifestInfo info = read_manifest(a.manifest);
    opt.seed_override = info.seed;
    opt.policy_filter = info.policies;
    run = prepare_run(info.scenario_text, info.base_dir, opt, info.sweep);
    if (run.config_hash != info.config_hash) {
      throw ConfigError("manifest inputs changed since the run (config hash " + run.config_hash + " vs " +
                        info.config_hash + ")");
    }
  } else {
    const fs::path path = a.scenario;
    run = prepare_run(read_text_file(path), fs::absolute(path).parent_path(), opt, sweep);
    if (sweep && run.points.size() == 1 && !a.quiet) std::cerr << "note: scenario has no sweep axes\n";
  }
  const auto summary = execute(run, opt);
  if (!a.quiet) {
    std::cerr << "points run " << summary.points_run << ", skipped " << summary.points_skipped << ", warnings "
              << summary.warnings << ", capacity overrun episodes " << summary.capacity_overruns << '\n';
    std::cerr << "wrote " << (opt.output_dir / "aggregate.csv").string() << '\n';
  }
  if (!summary.conserved) {
    std::cerr << "error: population conservation violated\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Agent-based simulator of treatment allocation in probation diversion"};
  app.require_subcommand(1);

  HarnessArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Run a scenario's base point for every policy and replication");
  add_harness_flags(run_cmd, run_args);

  HarnessArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run the full cross-product of a scenario's sweep axes");
  add_harness_flags(sweep_cmd, sweep_args);

  std::string report_dir;
  auto* report_cmd = app.add_subcommand("report", "Rebuild aggregate.csv from a finished output directory and print deltas");
  report_cmd->add_option("dir", report_dir, "Output directory of a run or sweep")->required();

  std::string validate_scenario;
  std::size_t validate_reps = 3;
  auto* validate_cmd = app.add_subcommand("validate", "Check a scenario file and run the invariant suite on small instances");
  validate_cmd->add_option("scenario", validate_scenario, "Scenario file to check (optional)");
  validate_cmd->add_option("--replications", validate_reps, "Replications per check")->check(CLI::PositiveNumber);

  TreatmentAnchor anchor;
  std::optional<double> p_untreated;
  std::optional<double> p_treated;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Solve the baseline rate from the treatment anchor");
  calibrate_cmd->add_option("--median-risk", anchor.median_risk, "Untreated risk score of the anchor individual")
      ->capture_default_str();
  calibrate_cmd->add_option("--beta", anchor.beta, "Treatment effect")->capture_default_str();
  calibrate_cmd->add_option("--horizon", anchor.horizon_days, "Horizon in days")->capture_default_str();
  calibrate_cmd->add_option("--reduction", anchor.reduction, "Relative reduction in offense probability")
      ->capture_default_str();
  calibrate_cmd->add_option("--group-untreated", p_untreated, "Derive a group beta: untreated offense probability");
  calibrate_cmd->add_option("--group-treated", p_treated, "Derive a group beta: treated offense probability");

  std::size_t cohort_n = kDefaultCohortSize;
  std::uint64_t cohort_seed = kDefaultCohortSeed;
  std::string cohort_out;
  auto* cohort_cmd = app.add_subcommand("cohort", "Write a synthetic cohort profile table");
  cohort_cmd->add_option("-n,--size", cohort_n, "Number of profiles")->capture_default_str();
  cohort_cmd->add_option("--seed", cohort_seed, "Generator seed")->capture_default_str();
  cohort_cmd->add_option("-o,--output", cohort_out, "Output CSV (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return run_harness(run_args, false);
    if (*sweep_cmd) return run_harness(sweep_args, true);

    if (*report_cmd) {
      const fs::path dir = report_dir;
      const ManifestInfo info = read_manifest(dir / "manifest.json");
      RunOptions opt;
      opt.seed_override = info.seed;
      opt.policy_filter = info.policies;
      const Run run = prepare_run(info.scenario_text, info.base_dir, opt, info.sweep);
      if (info.completed.size() != run.points.size()) {
        std::cerr << "error: run incomplete (" << info.completed.size() << " of " << run.points.size()
                  << " points); resume it with the same command\n";
        return 2;
      }
      write_file_atomic(dir / "staging", dir / "aggregate.csv", render_aggregate(run, dir));
      std::error_code ec;
      fs::remove_all(dir / "staging", ec);
      print_offense_table(run, dir, std::cout);
      return 0;
    }

    if (*validate_cmd) {
      ScenarioInputs inputs;
      if (!validate_scenario.empty()) {
        const Scenario s = load_scenario(validate_scenario);
        const auto points = expand_grid(s);
        inputs = load_inputs(s, [](const std::string& w) { std::cerr << "warning: " << w << '\n'; });
        std::cout << "scenario '" << s.name << "': " << points.size() << " points x " << s.policies.size()
                  << " policies x " << s.replications << " replications\n";
      } else {
        Scenario s;
        inputs = load_inputs(s);
      }
      InvariantSuiteOptions opt;
      opt.replications = validate_reps;
      std::size_t failed = 0;
      for (const auto& r : run_invariant_suite(inputs.cohort, inputs.table, inputs.base, opt)) {
        if (!r.passed) ++failed;
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name;
        if (!r.passed) std::cout << ": " << r.detail;
        std::cout << '\n';
      }
      std::cout << (failed == 0 ? "all invariants hold\n" : std::to_string(failed) + " invariant checks failed\n");
      return failed == 0 ? 0 : 1;
    }

    if (*calibrate_cmd) {
      std::cout << std::setprecision(17);
      if (p_untreated || p_treated) {
        if (!p_untreated || !p_treated) throw ConfigError("--group-untreated and --group-treated go together");
        std::cout << "beta " << derive_group_beta(*p_untreated, *p_treated) << '\n';
        return 0;
      }
      const BaselineHazard base = calibrate_baseline_from_anchor(anchor);
      const double h = anchor.median_risk;
      const double pu = offense_probability(base, anchor.horizon_days, h);
      const double pt = offense_probability(base, anchor.horizon_days, h - anchor.beta);
      std::cout << "lambda0 " << base.rates().front() << '\n';
      std::cout << "cumulative_at_horizon " << base.cumulative(anchor.horizon_days) << '\n';
      std::cout << "p_untreated " << pu << '\n';
      std::cout << "p_treated " << pt << '\n';
      std::cout << "ratio " << pt / pu << '\n';
      return 0;
    }

    if (*cohort_cmd) {
      const auto dist = generate_synthetic_cohort(SyntheticCohortSpec::defaults(), cohort_n, cohort_seed);
      if (cohort_out.empty()) {
        write_profiles(std::cout, dist, false);
      } else {
        std::ofstream out(cohort_out);
        if (!out) throw ConfigError("cannot write " + cohort_out);
        write_profiles(out, dist, false);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
