#pragma once

// Scenario files: a YAML document holding base overrides for the simulation
// config, the policies to run, optional sweep axes, and replication settings.
//
//   name: baseline
//   replications: 20
//   seed: 1
//   cohort: ../cohort_synthetic.csv        # omitted: built-in synthetic cohort
//   coefficients: ../coefficients.csv
//   baseline: {median_risk: cohort, beta: 0.342, horizon_days: 730, reduction: 0.25}
//   config: {capacity: 80, delta_inc: 0.048, off_probation_mean: 1000, ...}
//   policies: [null, low-risk, high-risk, age-first-low-risk]
//   sweep:
//     delta_inc: {from: 0, to: 0.12, step: 0.012}
//     off_probation_mean: [365, 730, 1000, 2000]

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "divsim/engine.hpp"
#include "divsim/errors.hpp"
#include "divsim/hazard.hpp"
#include "divsim/policy.hpp"
#include "divsim/population.hpp"

namespace divsim {

enum class CohortWeighting { uniform, younger };

inline std::string_view to_string(CohortWeighting w) noexcept { return w == CohortWeighting::uniform ? "uniform" : "younger"; }

inline constexpr std::uint64_t kDefaultCohortSeed = 20240611;
inline constexpr std::size_t kDefaultCohortSize = 1000;

/// How the baseline hazard is obtained. An unset median means the cohort's
/// weighted-median untreated score.
struct BaselineSpec {
  std::optional<double> median_risk;
  double beta = 0.342;
  double horizon_days = 730.0;
  double reduction = 0.25;
  std::optional<double> rate;  // fixed exponential rate, skips calibration

  bool operator==(const BaselineSpec&) const = default;
};

/// Values along each sweep axis; an empty axis uses the base config value.
struct SweepAxes {
  std::vector<double> delta_inc;
  std::vector<double> off_probation_mean;
  std::vector<BetaSpec> beta;
  std::vector<double> arrival_mean;
  std::vector<long> capacity;
  std::vector<CohortWeighting> cohort_weighting;
};

struct Scenario {
  std::string name = "scenario";
  std::size_t replications = 20;
  std::uint64_t seed = 1;
  std::optional<std::filesystem::path> cohort_path;
  std::optional<std::filesystem::path> coefficients_path;
  BaselineSpec baseline;
  SimulationConfig config;
  std::vector<PolicyKind> policies{kAllPolicies.begin(), kAllPolicies.end()};
  SweepAxes sweep;
};

/// One cell of the cross-product of sweep axes.
struct ParameterPoint {
  std::size_t index = 0;
  double delta_inc = 0.0;
  double off_probation_mean = 0.0;
  BetaSpec beta;
  double arrival_mean = 0.0;
  long capacity = 0;
  CohortWeighting weighting = CohortWeighting::uniform;

  SimulationConfig apply(SimulationConfig c) const {
    c.delta_inc = delta_inc;
    c.off_probation_mean = off_probation_mean;
    c.beta = beta;
    c.arrival_mean = arrival_mean;
    c.capacity = capacity;
    return c;
  }
};

namespace detail {

[[noreturn]] inline void yaml_fail(const YAML::Node& node, const std::string& what) {
  const auto mark = node.Mark();
  if (mark.line >= 0) throw ConfigError("line " + std::to_string(mark.line + 1) + ": " + what);
  throw ConfigError(what);
}

template <class T>
T scalar(const YAML::Node& node, const std::string& key) {
  if (!node.IsScalar()) yaml_fail(node, key + ": expected a scalar");
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    yaml_fail(node, key + ": cannot read '" + node.Scalar() + "'");
  }
}

inline double number(const YAML::Node& node, const std::string& key) { return scalar<double>(node, key); }

inline void check_keys(const YAML::Node& map, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!map.IsMap()) yaml_fail(map, where + ": expected a mapping");
  for (const auto& kv : map) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) yaml_fail(kv.first, where + ": unknown key '" + key + "'");
  }
}

inline BetaSpec parse_beta(const YAML::Node& node) {
  if (node.IsScalar()) return BetaSpec::homogeneous(number(node, "beta"));
  check_keys(node, "beta", {"low", "high"});
  if (!node["low"] || !node["high"]) yaml_fail(node, "beta: grouped form needs both 'low' and 'high'");
  return BetaSpec::grouped(number(node["low"], "beta.low"), number(node["high"], "beta.high"));
}

inline PolicyKind parse_policy(const YAML::Node& node) {
  if (node.IsNull()) return PolicyKind::null;  // bare `null` is YAML's null, not a string
  const auto s = scalar<std::string>(node, "policy");
  const auto k = policy_from_string(s);
  if (!k) yaml_fail(node, "unknown policy '" + s + "'");
  return *k;
}

inline CohortWeighting parse_weighting(const YAML::Node& node) {
  const auto s = scalar<std::string>(node, "cohort_weighting");
  if (s == "uniform") return CohortWeighting::uniform;
  if (s == "younger") return CohortWeighting::younger;
  yaml_fail(node, "cohort_weighting: expected 'uniform' or 'younger', got '" + s + "'");
}

/// A list, a single scalar, or {from, to, step} (inclusive, tolerant to
/// rounding at the upper end).
inline std::vector<double> parse_number_axis(const YAML::Node& node, const std::string& key) {
  std::vector<double> out;
  if (node.IsSequence()) {
    for (const auto& v : node) out.push_back(number(v, key));
  } else if (node.IsMap()) {
    check_keys(node, key, {"from", "to", "step"});
    if (!node["from"] || !node["to"] || !node["step"]) yaml_fail(node, key + ": range needs from, to and step");
    const double from = number(node["from"], key + ".from");
    const double to = number(node["to"], key + ".to");
    const double step = number(node["step"], key + ".step");
    if (!(step > 0.0) || !(to >= from)) yaml_fail(node, key + ": range needs step > 0 and to >= from");
    const auto n = static_cast<std::size_t>(std::floor((to - from) / step + 1e-9));
    for (std::size_t k = 0; k <= n; ++k) {
      // Round to 12 significant digits so 0.012 * 3 prints as 0.036.
      const double v = from + static_cast<double>(k) * step;
      out.push_back(std::stod(csv::format(std::round(v * 1e12) / 1e12)));
    }
  } else {
    out.push_back(number(node, key));
  }
  if (out.empty()) yaml_fail(node, key + ": empty axis");
  return out;
}

inline ProbationTermSpec parse_term(const YAML::Node& node) {
  ProbationTermSpec t;
  if (node.IsScalar()) {
    const auto s = scalar<std::string>(node, "probation_term");
    if (s == "empirical") return t;
    if (s == "lognormal") {
      t.kind = ProbationTermSpec::Kind::lognormal;
      return t;
    }
    yaml_fail(node, "probation_term: expected 'empirical' or 'lognormal'");
  }
  check_keys(node, "probation_term", {"kind", "mean", "log_sd", "min", "max"});
  if (node["kind"]) t = parse_term(node["kind"]);
  if (node["mean"]) t.mean_days = number(node["mean"], "probation_term.mean");
  if (node["log_sd"]) t.log_sd = number(node["log_sd"], "probation_term.log_sd");
  if (node["min"]) t.min_days = number(node["min"], "probation_term.min");
  if (node["max"]) t.max_days = number(node["max"], "probation_term.max");
  return t;
}

inline void parse_config(const YAML::Node& node, SimulationConfig& c) {
  check_keys(node, "config",
             {"t_max", "episode_length", "capacity", "delta_inc", "delta_inc_off_probation", "max_returns",
              "offense_chain_limit", "arrival_mean", "off_probation_mean", "initial_population", "initial_mu", "probation_term", "policy",
              "beta", "resample_on_treatment", "reset_treatment_on_return", "age_bucket_days"});
  if (auto v = node["t_max"]) c.t_max = number(v, "t_max");
  if (auto v = node["episode_length"]) c.episode_length = number(v, "episode_length");
  if (auto v = node["capacity"]) c.capacity = scalar<long>(v, "capacity");
  if (auto v = node["delta_inc"]) c.delta_inc = number(v, "delta_inc");
  if (auto v = node["delta_inc_off_probation"]) c.delta_inc_off_probation = number(v, "delta_inc_off_probation");
  if (auto v = node["max_returns"]) c.max_returns = scalar<int>(v, "max_returns");
  if (auto v = node["offense_chain_limit"]) c.offense_chain_limit = scalar<std::size_t>(v, "offense_chain_limit");
  if (auto v = node["arrival_mean"]) c.arrival_mean = number(v, "arrival_mean");
  if (auto v = node["off_probation_mean"]) c.off_probation_mean = number(v, "off_probation_mean");
  if (auto v = node["initial_population"]) c.initial_population = scalar<std::size_t>(v, "initial_population");
  if (auto v = node["initial_mu"]) c.initial_mu = number(v, "initial_mu");
  if (auto v = node["probation_term"]) c.probation_term = parse_term(v);
  if (auto v = node["policy"]) c.policy = parse_policy(v);
  if (auto v = node["beta"]) c.beta = parse_beta(v);
  if (auto v = node["resample_on_treatment"]) c.resample_on_treatment = scalar<bool>(v, "resample_on_treatment");
  if (auto v = node["reset_treatment_on_return"]) {
    c.reset_treatment_on_return = scalar<bool>(v, "reset_treatment_on_return");
  }
  if (auto v = node["age_bucket_days"]) c.policy_options.age_bucket_days = number(v, "age_bucket_days");
}

inline void parse_baseline(const YAML::Node& node, BaselineSpec& b) {
  check_keys(node, "baseline", {"median_risk", "beta", "horizon_days", "reduction", "rate"});
  if (auto v = node["median_risk"]) {
    if (v.IsScalar() && v.Scalar() == "cohort") {
      b.median_risk.reset();
    } else {
      b.median_risk = number(v, "baseline.median_risk");
    }
  }
  if (auto v = node["beta"]) b.beta = number(v, "baseline.beta");
  if (auto v = node["horizon_days"]) b.horizon_days = number(v, "baseline.horizon_days");
  if (auto v = node["reduction"]) b.reduction = number(v, "baseline.reduction");
  if (auto v = node["rate"]) b.rate = number(v, "baseline.rate");
}

inline void parse_sweep(const YAML::Node& node, SweepAxes& s) {
  check_keys(node, "sweep", {"delta_inc", "off_probation_mean", "beta", "arrival_mean", "capacity", "cohort_weighting"});
  if (auto v = node["delta_inc"]) s.delta_inc = parse_number_axis(v, "sweep.delta_inc");
  if (auto v = node["off_probation_mean"]) s.off_probation_mean = parse_number_axis(v, "sweep.off_probation_mean");
  if (auto v = node["arrival_mean"]) s.arrival_mean = parse_number_axis(v, "sweep.arrival_mean");
  if (auto v = node["capacity"]) {
    for (double x : parse_number_axis(v, "sweep.capacity")) {
      if (x != std::floor(x)) yaml_fail(v, "sweep.capacity: values must be integers");
      s.capacity.push_back(static_cast<long>(x));
    }
  }
  if (auto v = node["beta"]) {
    if (v.IsSequence()) {
      for (const auto& b : v) s.beta.push_back(parse_beta(b));
    } else {
      s.beta.push_back(parse_beta(v));
    }
  }
  if (auto v = node["cohort_weighting"]) {
    if (v.IsSequence()) {
      for (const auto& w : v) s.cohort_weighting.push_back(parse_weighting(w));
    } else {
      s.cohort_weighting.push_back(parse_weighting(v));
    }
  }
}

}  // namespace detail

/// Parses scenario text. Relative file paths resolve against `base_dir`.
inline Scenario parse_scenario(const std::string& text, const std::filesystem::path& base_dir = {}) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  if (!root.IsMap()) throw ConfigError("scenario: top level must be a mapping");
  detail::check_keys(root, "scenario",
                     {"name", "replications", "seed", "cohort", "coefficients", "baseline", "config", "policies",
                      "sweep"});
  Scenario s;
  if (auto v = root["name"]) s.name = detail::scalar<std::string>(v, "name");
  if (auto v = root["replications"]) {
    const auto n = detail::scalar<long long>(v, "replications");
    // Confidence intervals need at least two.
    if (n < 2) detail::yaml_fail(v, "replications must be >= 2");
    s.replications = static_cast<std::size_t>(n);
  }
  if (auto v = root["seed"]) s.seed = detail::scalar<std::uint64_t>(v, "seed");
  if (auto v = root["cohort"]) s.cohort_path = base_dir / detail::scalar<std::string>(v, "cohort");
  if (auto v = root["coefficients"]) s.coefficients_path = base_dir / detail::scalar<std::string>(v, "coefficients");
  if (auto v = root["baseline"]) detail::parse_baseline(v, s.baseline);
  if (auto v = root["config"]) detail::parse_config(v, s.config);
  if (auto v = root["policies"]) {
    if (!v.IsSequence()) detail::yaml_fail(v, "policies: expected a list");
    s.policies.clear();
    for (const auto& p : v) s.policies.push_back(detail::parse_policy(p));
  }
  // Relative reports need the null trajectories.
  if (std::find(s.policies.begin(), s.policies.end(), PolicyKind::null) == s.policies.end()) {
    s.policies.insert(s.policies.begin(), PolicyKind::null);
  }
  std::sort(s.policies.begin(), s.policies.end());
  s.policies.erase(std::unique(s.policies.begin(), s.policies.end()), s.policies.end());
  if (auto v = root["sweep"]) detail::parse_sweep(v, s.sweep);
  try {
    s.config.validate();
  } catch (const ConfigError& e) {
    if (auto v = root["config"]) detail::yaml_fail(v, e.what());
    throw;
  }
  return s;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  try {
    return parse_scenario(read_text_file(path), path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Cross-product of the sweep axes in a fixed nesting order (delta_inc
/// outermost, cohort weighting innermost). Every point is validated.
inline std::vector<ParameterPoint> expand_grid(const Scenario& s) {
  const auto or_base = [](auto axis, auto base) {
    if (axis.empty()) axis.push_back(base);
    return axis;
  };
  const auto deltas = or_base(s.sweep.delta_inc, s.config.delta_inc);
  const auto offs = or_base(s.sweep.off_probation_mean, s.config.off_probation_mean);
  const auto betas = or_base(s.sweep.beta, s.config.beta);
  const auto arrivals = or_base(s.sweep.arrival_mean, s.config.arrival_mean);
  const auto caps = or_base(s.sweep.capacity, s.config.capacity);
  const auto weights = or_base(s.sweep.cohort_weighting, CohortWeighting::uniform);

  std::vector<ParameterPoint> points;
  for (double d : deltas)
    for (double f : offs)
      for (const auto& b : betas)
        for (double a : arrivals)
          for (long c : caps)
            for (auto w : weights) {
              ParameterPoint p{points.size(), d, f, b, a, c, w};
              try {
                p.apply(s.config).validate();
              } catch (const ConfigError& e) {
                throw ConfigError("grid point " + std::to_string(p.index) + ": " + e.what());
              }
              points.push_back(p);
            }
  return points;
}

/// Everything needed to run points of a scenario: cohort variants, the
/// coefficient table and the calibrated baseline.
struct ScenarioInputs {
  CovariateDistribution cohort;
  CovariateDistribution cohort_younger;
  CoefficientTable table;
  BaselineHazard base = BaselineHazard::exponential(1.0);
  double anchor_median_risk = 0.0;

  const CovariateDistribution& cohort_for(CohortWeighting w) const {
    return w == CohortWeighting::uniform ? cohort : cohort_younger;
  }
};

inline CovariateDistribution default_cohort() {
  return generate_synthetic_cohort(SyntheticCohortSpec::defaults(), kDefaultCohortSize, kDefaultCohortSeed);
}

inline ScenarioInputs load_inputs(const Scenario& s, const WarningSink& warn = {}) {
  ScenarioInputs in;
  in.cohort = s.cohort_path ? load_profiles(s.cohort_path->string(), warn) : default_cohort();
  in.cohort_younger = reweight_younger(in.cohort);
  in.table = s.coefficients_path ? load_coefficient_table(s.coefficients_path->string()) : default_coefficient_table();
  if (s.baseline.rate) {
    in.base = BaselineHazard::exponential(*s.baseline.rate);
    in.anchor_median_risk = s.baseline.median_risk.value_or(weighted_median_risk(in.cohort, in.table, 0.0));
  } else {
    TreatmentAnchor a;
    a.median_risk = s.baseline.median_risk.value_or(weighted_median_risk(in.cohort, in.table, 0.0));
    a.beta = s.baseline.beta;
    a.horizon_days = s.baseline.horizon_days;
    a.reduction = s.baseline.reduction;
    in.anchor_median_risk = a.median_risk;
    in.base = calibrate_baseline_from_anchor(a);
  }
  return in;
}

}  // namespace divsim
