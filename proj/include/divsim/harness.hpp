#pragma once

// Grid execution: runs every (point, policy, replication) cell of a scenario
// on a worker pool and writes
//
//   <out>/episodes/point_0000.csv   per-episode rows for one grid point
//   <out>/points.csv                parameter values of each point
//   <out>/aggregate.csv             window means, CIs and deltas vs null
//   <out>/manifest.json             everything needed to reproduce the run
//
// Point files are written to <out>/staging and renamed into place once
// complete, so an interrupted run leaves only whole files behind. A rerun
// with the same manifest skips points whose files already exist.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "divsim/csv.hpp"
#include "divsim/engine.hpp"
#include "divsim/metrics.hpp"
#include "divsim/rng.hpp"
#include "divsim/scenario.hpp"

namespace divsim {

namespace fs = std::filesystem;

inline std::string compiler_version() {
#if defined(__clang__)
  return "clang " __clang_version__;
#elif defined(__GNUC__)
  return "gcc " __VERSION__;
#else
  return "unknown";
#endif
}

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Inputs to one harness invocation beyond the scenario itself.
struct RunOptions {
  fs::path output_dir = "divsim-out";
  std::size_t workers = 1;
  std::optional<std::uint64_t> seed_override;
  std::vector<PolicyKind> policy_filter;  // empty: all scenario policies
  bool resume = true;
  std::function<void(const std::string&)> log;
};

struct Run {
  std::string scenario_text;
  fs::path base_dir;
  Scenario scenario;
  std::vector<ParameterPoint> points;
  std::vector<PolicyKind> policies;
  std::uint64_t seed = 0;
  bool sweep = true;  // false: base point only
  std::string config_hash;
};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Hash of everything that determines the output bytes.
inline std::string config_hash(const std::string& scenario_text, std::uint64_t seed, bool sweep,
                               const std::vector<PolicyKind>& policies, const std::string& cohort_text,
                               const std::string& table_text) {
  std::string key = scenario_text;
  key += "\nseed=" + std::to_string(seed) + (sweep ? "\nmode=sweep" : "\nmode=run") + "\npolicies=";
  for (auto p : policies) key += std::string(to_string(p)) + ";";
  key += "\ncohort=" + hex64(stable_hash(cohort_text));
  key += "\ntable=" + hex64(stable_hash(table_text));
  key += "\nversion=" + std::string(kToolVersion);
  return hex64(stable_hash(key));
}

inline Run prepare_run(const std::string& scenario_text, const fs::path& base_dir, const RunOptions& opt,
                       bool sweep) {
  Run r;
  r.scenario_text = scenario_text;
  r.base_dir = base_dir;
  r.scenario = parse_scenario(scenario_text, base_dir);
  r.sweep = sweep;
  if (!sweep) r.scenario.sweep = SweepAxes{};
  r.points = expand_grid(r.scenario);
  r.seed = opt.seed_override.value_or(r.scenario.seed);
  r.policies = r.scenario.policies;
  if (!opt.policy_filter.empty()) {
    std::vector<PolicyKind> kept{PolicyKind::null};
    for (auto p : r.policies) {
      if (p != PolicyKind::null && std::find(opt.policy_filter.begin(), opt.policy_filter.end(), p) != opt.policy_filter.end()) {
        kept.push_back(p);
      }
    }
    r.policies = kept;
  }
  const std::string cohort_text = r.scenario.cohort_path ? read_text_file(*r.scenario.cohort_path) : "<synthetic>";
  const std::string table_text =
      r.scenario.coefficients_path ? read_text_file(*r.scenario.coefficients_path) : "<default>";
  r.config_hash = config_hash(scenario_text, r.seed, r.sweep, r.policies, cohort_text, table_text);
  return r;
}

inline std::string point_file_name(std::size_t index) {
  std::ostringstream os;
  os << "point_" << std::setw(4) << std::setfill('0') << index << ".csv";
  return os.str();
}

inline std::string format_beta(const BetaSpec& b) { return b.label(); }

inline constexpr std::string_view kPointsCsvHeader =
    "point,delta_inc,off_probation_mean,beta,arrival_mean,capacity,cohort_weighting";

inline void write_points(std::ostream& out, const std::vector<ParameterPoint>& points) {
  out << kPointsCsvHeader << '\n';
  for (const auto& p : points) {
    out << p.index << ',' << csv::format(p.delta_inc) << ',' << csv::format(p.off_probation_mean) << ','
        << format_beta(p.beta) << ',' << csv::format(p.arrival_mean) << ',' << p.capacity << ',' << to_string(p.weighting)
        << '\n';
  }
}

inline void write_file_atomic(const fs::path& staging_dir, const fs::path& target, const std::string& content) {
  fs::create_directories(staging_dir);
  fs::create_directories(target.parent_path());
  const fs::path tmp = staging_dir / (target.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out << content;
    if (!out) throw ConfigError("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

/// All trajectories of one grid point, keyed by policy and replication.
struct PointResult {
  TrajectorySet trajectories;
  std::size_t warnings = 0;
  std::size_t capacity_overruns = 0;
  bool conserved = true;
};

inline std::string render_point_csv(const PointResult& r, const std::vector<PolicyKind>& policies) {
  std::ostringstream os;
  os << kEpisodeCsvHeader << '\n';
  for (auto policy : policies) {
    const auto it = r.trajectories.find(policy);
    if (it == r.trajectories.end()) continue;
    for (const auto& [rep, snaps] : it->second) write_episode_rows(os, rep, policy, snaps);
  }
  return os.str();
}

/// Runs every policy and replication at one point.
inline PointResult run_point(const Run& run, const ScenarioInputs& inputs, const ParameterPoint& point) {
  PointResult out;
  for (auto policy : run.policies) {
    for (std::size_t rep = 0; rep < run.scenario.replications; ++rep) {
      SimulationConfig c = point.apply(run.scenario.config);
      c.policy = policy;
      c.seed = run.seed;
      c.replication = rep;
      const RunResult r = divsim::run(c, inputs.cohort_for(point.weighting), inputs.table, inputs.base);
      out.trajectories[policy][rep] = r.snapshots;
      out.warnings += r.warning_count;
      out.capacity_overruns += r.totals.capacity_overrun_episodes;
      out.conserved = out.conserved && r.totals.conserved();
    }
  }
  return out;
}

inline constexpr std::string_view kAggregateCsvHeader =
    "point,delta_inc,off_probation_mean,beta,arrival_mean,capacity,cohort_weighting,policy,window,replications,"
    "offenses_mean,offenses_ci,incarcerations_mean,incarcerations_ci,completions_mean,completions_ci,population_mean,"
    "population_ci,enrollment_mean,enrollment_ci,mu_mean,mu_ci,offenses_delta,offenses_delta_ci,offenses_delta_table,"
    "incarcerations_delta,incarcerations_delta_ci,incarcerations_delta_table,completions_delta,completions_delta_ci,"
    "completions_delta_table";

inline void write_aggregate_rows(std::ostream& out, const ParameterPoint& p, const std::vector<AggregateRow>& rows) {
  for (const auto& row : rows) {
    out << p.index << ',' << csv::format(p.delta_inc) << ',' << csv::format(p.off_probation_mean) << ','
        << format_beta(p.beta) << ',' << csv::format(p.arrival_mean) << ',' << p.capacity << ','
        << to_string(p.weighting) << ',' << to_string(row.policy) << ',' << to_string(row.window) << ','
        << row.levels[0].n;
    for (const auto& e : row.levels) out << ',' << csv::format(e.mean) << ',' << csv::format(e.half_width);
    for (std::size_t k = 0; k < 3; ++k) {
      out << ',' << csv::format(row.deltas[k].mean) << ',' << csv::format(row.deltas[k].half_width) << ','
          << format_delta(row.deltas[k]);
    }
    out << '\n';
  }
}

inline nlohmann::json manifest_json(const Run& run, const std::vector<std::size_t>& completed) {
  nlohmann::json m;
  m["tool"] = "divsim";
  m["version"] = kToolVersion;
  m["compiler"] = compiler_version();
  m["scenario_name"] = run.scenario.name;
  m["scenario_text"] = run.scenario_text;
  m["base_dir"] = run.base_dir.string();
  m["seed"] = run.seed;
  m["mode"] = run.sweep ? "sweep" : "run";
  m["replications"] = run.scenario.replications;
  m["config_hash"] = run.config_hash;
  std::vector<std::string> pols;
  for (auto p : run.policies) pols.emplace_back(to_string(p));
  m["policies"] = pols;
  m["points"] = run.points.size();
  m["completed_points"] = completed;
  m["streams"] = {"arrivals", "covariates", "offense-times", "incarceration", "terms"};
  return m;
}

/// Scenario text, base directory, seed and policy list from a manifest.
struct ManifestInfo {
  std::string scenario_text;
  fs::path base_dir;
  std::uint64_t seed = 0;
  bool sweep = true;
  std::vector<PolicyKind> policies;
  std::string config_hash;
  std::vector<std::size_t> completed;
};

inline ManifestInfo read_manifest(const fs::path& path) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_text_file(path));
    ManifestInfo info;
    info.scenario_text = m.at("scenario_text").get<std::string>();
    info.base_dir = m.at("base_dir").get<std::string>();
    info.seed = m.at("seed").get<std::uint64_t>();
    info.sweep = m.at("mode").get<std::string>() == "sweep";
    info.config_hash = m.at("config_hash").get<std::string>();
    for (const auto& p : m.at("policies")) {
      const auto k = policy_from_string(p.get<std::string>());
      if (!k) throw ConfigError("unknown policy in manifest");
      info.policies.push_back(*k);
    }
    info.completed = m.at("completed_points").get<std::vector<std::size_t>>();
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": malformed manifest: " + e.what());
  }
}

/// Reads back one point file.
inline TrajectorySet load_point(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return group_trajectories(read_episode_rows(in));
  } catch (const IngestionError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Rebuilds aggregate.csv from the point files on disk.
inline std::string render_aggregate(const Run& run, const fs::path& output_dir) {
  std::ostringstream os;
  os << kAggregateCsvHeader << '\n';
  for (const auto& p : run.points) {
    const auto set = load_point(output_dir / "episodes" / point_file_name(p.index));
    write_aggregate_rows(os, p, aggregate(set));
  }
  return os.str();
}

struct HarnessSummary {
  std::size_t points_run = 0;
  std::size_t points_skipped = 0;
  std::size_t warnings = 0;
  std::size_t capacity_overruns = 0;
  bool conserved = true;
};

/// Executes the grid. Cells are independent; each worker owns its engine.
inline HarnessSummary execute(const Run& run, const RunOptions& opt) {
  const fs::path out = opt.output_dir;
  const fs::path staging = out / "staging";
  fs::create_directories(out / "episodes");

  std::vector<std::size_t> completed;
  if (opt.resume && fs::exists(out / "manifest.json")) {
    const auto info = read_manifest(out / "manifest.json");
    if (info.config_hash != run.config_hash) {
      throw ConfigError("output directory holds a different run (config hash " + info.config_hash + ", expected " +
                        run.config_hash + "); use a fresh directory");
    }
    for (auto idx : info.completed) {
      if (idx < run.points.size() && fs::exists(out / "episodes" / point_file_name(idx))) completed.push_back(idx);
    }
  }
  std::set<std::size_t> done(completed.begin(), completed.end());

  const auto log = [&](const std::string& msg) {
    if (opt.log) opt.log(msg);
  };
  const ScenarioInputs inputs = load_inputs(run.scenario, [&](const std::string& w) { log("warning: " + w); });

  HarnessSummary summary;
  summary.points_skipped = done.size();
  std::vector<std::size_t> todo;
  for (const auto& p : run.points) {
    if (!done.count(p.index)) todo.push_back(p.index);
  }

  std::mutex mu;
  const auto write_manifest = [&] {
    std::vector<std::size_t> sorted(done.begin(), done.end());
    write_file_atomic(staging, out / "manifest.json", manifest_json(run, sorted).dump(2) + "\n");
  };
  write_manifest();

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  const auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= todo.size()) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      try {
        const auto& point = run.points[todo[k]];
        const PointResult r = run_point(run, inputs, point);
        write_file_atomic(staging, out / "episodes" / point_file_name(point.index), render_point_csv(r, run.policies));
        std::lock_guard lock(mu);
        done.insert(point.index);
        ++summary.points_run;
        summary.warnings += r.warnings;
        summary.capacity_overruns += r.capacity_overruns;
        summary.conserved = summary.conserved && r.conserved;
        write_manifest();
        log("point " + std::to_string(point.index + 1) + "/" + std::to_string(run.points.size()) + " done");
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(opt.workers, todo.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::ostringstream points;
  write_points(points, run.points);
  write_file_atomic(staging, out / "points.csv", points.str());
  write_file_atomic(staging, out / "aggregate.csv", render_aggregate(run, out));
  std::error_code ec;
  fs::remove_all(staging, ec);
  return summary;
}

}  // namespace divsim
