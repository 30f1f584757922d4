#pragma once

// Individuals, cohort distributions and per-event covariate updates.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "divsim/covariates.hpp"
#include "divsim/csv.hpp"
#include "divsim/errors.hpp"
#include "divsim/hazard.hpp"
#include "divsim/rng.hpp"

namespace divsim {

using IndividualId = std::uint32_t;

enum class EventKind : std::uint8_t { arrival, offense, end_probation, exit, ret };

inline std::string_view to_string(EventKind k) noexcept {
  switch (k) {
    case EventKind::arrival: return "arrival";
    case EventKind::offense: return "offense";
    case EventKind::end_probation: return "end-probation";
    case EventKind::exit: return "exit";
    case EventKind::ret: return "return";
  }
  return "?";
}

/// Agent state tracked by the simulation.
///
/// Age is stored as the age at the start of the latest probation term plus
/// elapsed time since then; a return rebases both, so age stays continuous
/// across terms.
struct Individual {
  IndividualId id = 0;
  CovariateProfile profile;

  double arrival_time = 0.0;          // start of the latest probation term
  double age_at_arrival_days = 0.0;   // age when that term started
  double age_days = 0.0;
  int offense_count = 0;
  int return_count = 0;

  bool off_probation = false;
  bool not_decided = true;
  bool treated = false;

  double probation_term = 0.0;
  double off_probation_term = 0.0;
  double exit_time = 0.0;
  RiskGroup risk_group = RiskGroup::high;

  double age_years() const noexcept { return age_days / kDaysPerYear; }
};

/// Empirical categorical distribution over cohort profiles.
struct CovariateDistribution {
  std::vector<CovariateProfile> support;
  std::vector<double> weights;
  AgeBounds age_bounds;

  void validate() const {
    if (support.empty()) throw ConfigError("covariate distribution: empty support");
    if (support.size() != weights.size()) throw ConfigError("covariate distribution: one weight per profile required");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("covariate distribution: weights must be >= 0");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("covariate distribution: weights must sum to 1");
    for (const auto& p : support) validate_levels(p);
    age_bounds.validate();
  }

  std::vector<double> cumulative() const {
    std::vector<double> cdf(weights.size());
    std::partial_sum(weights.begin(), weights.end(), cdf.begin());
    return cdf;
  }
};

/// Draws support[k] with probability weights[k], then a concrete initial age
/// uniformly inside that profile's age-category bounds.
template <class Engine>
CovariateProfile sample_profile(const CovariateDistribution& dist, std::span<const double> cumulative,
                                RandomStream<Engine>& stream) {
  if (dist.support.empty()) throw ConfigError("sample_profile: empty support");
  CovariateProfile p = dist.support[stream.categorical(cumulative)];
  const int cat = p.level(Covariate::age);
  const double hi = dist.age_bounds.hi(cat);
  // lo + (hi - lo) * u can round up to hi for u close to 1.
  p.initial_age_years = std::min(stream.uniform(dist.age_bounds.lo(cat), hi), std::nextafter(hi, 0.0));
  return p;
}

template <class Engine>
CovariateProfile sample_profile(const CovariateDistribution& dist, RandomStream<Engine>& stream) {
  if (dist.support.empty()) throw ConfigError("sample_profile: empty support");
  const auto cdf = dist.cumulative();
  return sample_profile(dist, std::span<const double>(cdf), stream);
}

/// Probation and off-probation lengths for one term.
struct TermLengths {
  double probation = 0.0;
  double off_probation = 0.0;
};

/// Times of the events a fresh term schedules.
struct TermSchedule {
  double end_probation = 0.0;
  double exit = 0.0;
};

/// Starts a probation term at time t.
///
/// Fresh arrivals get tau = 0, not_decided = 1 and off_probation = 0. A
/// returning individual keeps its profile and treatment flags; the caller
/// has already cleared off_probation.
inline TermSchedule init_individual(Individual& ind, double t, bool is_return, const TermLengths& terms) {
  if (!(t >= 0.0)) throw DomainError("init_individual: time must be >= 0");
  if (!is_return) {
    ind.treated = false;
    ind.not_decided = true;
    ind.off_probation = false;
    ind.age_at_arrival_days = ind.profile.initial_age_years * kDaysPerYear;
  } else {
    ind.age_at_arrival_days += t - ind.arrival_time;
  }
  ind.arrival_time = t;
  ind.age_days = ind.age_at_arrival_days;
  ind.probation_term = terms.probation;
  ind.off_probation_term = terms.off_probation;
  ind.exit_time = t + terms.probation + terms.off_probation;
  return TermSchedule{t + terms.probation, ind.exit_time};
}

inline void update_age(Individual& ind, double t) {
  if (t < ind.arrival_time) {
    throw OrderingError("update at " + csv::format(t) + " precedes arrival at " + csv::format(ind.arrival_time) +
                        " for individual " + std::to_string(ind.id));
  }
  ind.age_days = ind.age_at_arrival_days + (t - ind.arrival_time);
}

/// Refreshes age and, for offense events, the offense count.
inline void update_dynamics(Individual& ind, double t, EventKind kind) {
  update_age(ind, t);
  if (kind == EventKind::offense) ++ind.offense_count;
}

/// Median of a score list (mean of the two middle values for even sizes).
inline double median_of(std::vector<double> scores) {
  if (scores.empty()) throw DomainError("median of empty score list");
  const std::size_t n = scores.size();
  auto mid = scores.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(scores.begin(), mid, scores.end());
  const double upper = *mid;
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(scores.begin(), mid);
  return 0.5 * (lower + upper);
}

/// H iff the score is at or above the reference median.
inline RiskGroup classify_by_median(double median, double risk) noexcept {
  return risk >= median ? RiskGroup::high : RiskGroup::low;
}

inline RiskGroup classify_risk_group(const std::vector<double>& reference_scores, double risk) {
  return classify_by_median(median_of(reference_scores), risk);
}

/// Weighted median of untreated arrival scores over a cohort distribution.
inline double weighted_median_risk(const CovariateDistribution& dist, const CoefficientTable& table, double mu) {
  std::vector<std::pair<double, double>> scored;
  scored.reserve(dist.support.size());
  for (std::size_t k = 0; k < dist.support.size(); ++k) {
    scored.emplace_back(profile_risk(dist.support[k], mu, table), dist.weights[k]);
  }
  std::sort(scored.begin(), scored.end());
  const double total = std::accumulate(dist.weights.begin(), dist.weights.end(), 0.0);
  double acc = 0.0;
  for (std::size_t k = 0; k < scored.size(); ++k) {
    acc += scored[k].second;
    if (acc >= 0.5 * total) {
      // Exactly half the mass below: average with the next support point.
      if (std::abs(acc - 0.5 * total) <= 1e-12 * total && k + 1 < scored.size()) {
        return 0.5 * (scored[k].first + scored[k + 1].first);
      }
      return scored[k].first;
    }
  }
  return scored.back().first;
}

/// Collects human-readable warnings emitted while loading or running.
using WarningSink = std::function<void(const std::string&)>;

inline constexpr std::array<std::string_view, 9> kProfileLevelColumns = {
    "sex", "ethnicity", "race", "employment", "drug_abuse", "prior_felonies", "offense_type", "supervision",
    "age_category"};

inline Covariate covariate_for_column(std::string_view col) {
  if (col == "age_category") return Covariate::age;
  return *covariate_from_name(col);
}

/// Parses a profile CSV.
///
/// Header columns: sex, ethnicity, race, employment, drug_abuse,
/// prior_felonies, offense_type, supervision, age_category,
/// probation_term_days, and optionally weight and age_years. Without a weight
/// column profiles are equally likely. Weights off by at most 1e-3 are
/// renormalized with a warning.
inline CovariateDistribution parse_profiles(std::istream& in, const WarningSink& warn = {}) {
  const auto rows = csv::read_rows(in);
  if (rows.empty()) throw IngestionError(1, "profile file is empty");
  const auto& header = rows.front();
  std::map<std::string, std::size_t> col;
  for (std::size_t k = 0; k < header.fields.size(); ++k) {
    if (!col.emplace(header.fields[k], k).second) {
      throw IngestionError(header.line, "duplicate column '" + header.fields[k] + "'");
    }
  }
  for (auto name : kProfileLevelColumns) {
    if (!col.contains(std::string(name))) throw IngestionError(header.line, "missing column '" + std::string(name) + "'");
  }
  if (!col.contains("probation_term_days")) throw IngestionError(header.line, "missing column 'probation_term_days'");
  const bool has_weight = col.contains("weight");
  const bool has_age = col.contains("age_years");

  CovariateDistribution dist;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() != header.fields.size()) {
      throw IngestionError(row.line, "expected " + std::to_string(header.fields.size()) + " fields, found " +
                                         std::to_string(row.fields.size()));
    }
    CovariateProfile p;
    for (auto name : kProfileLevelColumns) {
      const auto& text = row.fields[col.at(std::string(name))];
      const auto v = csv::parse_int(text);
      const Covariate c = covariate_for_column(name);
      if (!v) throw IngestionError(row.line, std::string(name) + ": '" + text + "' is not an integer level");
      const int count = kLevelCounts[index_of(c)];
      if (*v < 1 || *v > count) {
        throw IngestionError(row.line, std::string(name_of(c)) + ": level " + std::to_string(*v) + " outside [1," +
                                           std::to_string(count) + "]");
      }
      p.set(c, static_cast<int>(*v));
    }
    const auto term = csv::parse_double(row.fields[col.at("probation_term_days")]);
    if (!term || !(*term > 0.0)) throw IngestionError(row.line, "probation_term_days must be a positive number");
    p.probation_term_days = *term;
    if (has_age && !row.fields[col.at("age_years")].empty()) {
      const auto age = csv::parse_double(row.fields[col.at("age_years")]);
      if (!age || !(*age > 0.0)) throw IngestionError(row.line, "age_years must be a positive number");
      p.recorded_age_years = *age;
    }
    p.initial_age_years = dist.age_bounds.lo(p.level(Covariate::age));
    double w = 1.0;
    if (has_weight) {
      const auto parsed = csv::parse_double(row.fields[col.at("weight")]);
      if (!parsed || !(*parsed >= 0.0)) throw IngestionError(row.line, "weight must be a nonnegative number");
      w = *parsed;
    }
    dist.support.push_back(p);
    dist.weights.push_back(w);
  }
  if (dist.support.empty()) throw IngestionError(header.line, "profile file has no rows");

  const double total = std::accumulate(dist.weights.begin(), dist.weights.end(), 0.0);
  if (!has_weight) {
    for (auto& w : dist.weights) w = 1.0 / static_cast<double>(dist.weights.size());
  } else {
    const double err = std::abs(total - 1.0);
    if (err > 1e-3) throw ConfigError("profile weights sum to " + csv::format(total) + ", expected 1");
    if (err > 1e-9) {
      if (warn) warn("profile weights sum to " + csv::format(total) + "; renormalized");
      for (auto& w : dist.weights) w /= total;
    }
  }
  dist.validate();
  return dist;
}

inline CovariateDistribution load_profiles(const std::string& path, const WarningSink& warn = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open profile file '" + path + "'");
  return parse_profiles(in, warn);
}

inline void write_profiles(std::ostream& out, const CovariateDistribution& dist, bool with_weights = true) {
  for (auto name : kProfileLevelColumns) out << name << ',';
  out << "probation_term_days";
  if (with_weights) out << ",weight";
  out << '\n';
  for (std::size_t k = 0; k < dist.support.size(); ++k) {
    const auto& p = dist.support[k];
    for (auto name : kProfileLevelColumns) out << p.level(covariate_for_column(name)) << ',';
    out << csv::format(p.probation_term_days);
    if (with_weights) out << ',' << csv::format(dist.weights[k]);
    out << '\n';
  }
}

/// "Younger" reweighting: rho_k proportional to (100 - a_k), where a_k is the
/// recorded age or, failing that, the midpoint of the age category.
inline CovariateDistribution reweight_younger(const CovariateDistribution& dist) {
  CovariateDistribution out = dist;
  double total = 0.0;
  for (std::size_t k = 0; k < out.support.size(); ++k) {
    const auto& p = out.support[k];
    const double age = p.recorded_age_years.value_or(dist.age_bounds.midpoint(p.level(Covariate::age)));
    out.weights[k] = std::max(0.0, 100.0 - age);
    total += out.weights[k];
  }
  if (!(total > 0.0)) throw ConfigError("younger reweighting: all profiles aged 100 or more");
  for (auto& w : out.weights) w /= total;
  return out;
}

/// Probation-term distribution: the profile's observed term, or a log-normal
/// with the given mean clipped to [min_days, max_days].
struct ProbationTermSpec {
  enum class Kind { empirical, lognormal } kind = Kind::empirical;
  double mean_days = 1375.0;
  double log_sd = 0.6;
  double min_days = 30.0;
  double max_days = 4320.0;

  void validate() const {
    if (kind == Kind::lognormal) {
      if (!(mean_days > 0.0) || !(log_sd >= 0.0) || !(min_days > 0.0) || !(max_days >= min_days)) {
        throw ConfigError("probation term: invalid log-normal parameters");
      }
    }
  }

  template <class Engine>
  double sample(const CovariateProfile& p, RandomStream<Engine>& stream) const {
    if (kind == Kind::empirical) return p.probation_term_days;
    const double log_mean = std::log(mean_days) - 0.5 * log_sd * log_sd;
    return std::clamp(stream.lognormal(log_mean, log_sd), min_days, max_days);
  }

  bool operator==(const ProbationTermSpec&) const = default;
};

/// Independent categorical marginals for the synthetic cohort generator.
/// marginals[c][level-1] is the probability of that level.
struct SyntheticCohortSpec {
  std::array<std::vector<double>, kCovariateCount> marginals{};
  ProbationTermSpec term{ProbationTermSpec::Kind::lognormal, 1375.0, 0.6, 30.0, 4320.0};

  /// Defaults chosen for an urban felony-probation caseload; the term law has
  /// mean 1375 days within [30, 4320].
  static SyntheticCohortSpec defaults() {
    SyntheticCohortSpec s;
    s.marginals[index_of(Covariate::employment)] = {0.45, 0.35, 0.20};
    s.marginals[index_of(Covariate::age)] = {0.12, 0.25, 0.22, 0.27, 0.10, 0.04};
    s.marginals[index_of(Covariate::prior_felonies)] = {0.50, 0.25, 0.25};
    s.marginals[index_of(Covariate::offense_type)] = {0.02, 0.04, 0.10, 0.12, 0.18, 0.20, 0.06, 0.28};
    s.marginals[index_of(Covariate::sex)] = {0.82, 0.18};
    s.marginals[index_of(Covariate::ethnicity)] = {0.05, 0.95};
    s.marginals[index_of(Covariate::drug_abuse)] = {0.45, 0.30, 0.25};
    s.marginals[index_of(Covariate::race)] = {0.30, 0.66, 0.01, 0.01, 0.02};
    s.marginals[index_of(Covariate::supervision)] = {0.10, 0.25, 0.25, 0.20, 0.12, 0.08};
    return s;
  }

  void validate() const {
    for (std::size_t k = 0; k < kCovariateCount; ++k) {
      const auto& m = marginals[k];
      if (m.size() != static_cast<std::size_t>(kLevelCounts[k])) {
        throw ConfigError(std::string(kCovariateNames[k]) + ": marginal needs one probability per level");
      }
      double total = 0.0;
      for (double v : m) {
        if (!(v >= 0.0)) throw ConfigError(std::string(kCovariateNames[k]) + ": negative marginal probability");
        total += v;
      }
      if (std::abs(total - 1.0) > 1e-9) throw ConfigError(std::string(kCovariateNames[k]) + ": marginal must sum to 1");
    }
    if (term.kind != ProbationTermSpec::Kind::lognormal) throw ConfigError("synthetic cohort: term law must be log-normal");
    term.validate();
  }
};

/// N profiles with independently drawn levels and equal weights.
inline CovariateDistribution generate_synthetic_cohort(const SyntheticCohortSpec& spec, std::size_t n,
                                                       std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw ConfigError("synthetic cohort: need at least one profile");
  CommunityStream stream(derive_seed(seed, 0, "synthetic-cohort"));
  std::array<std::vector<double>, kCovariateCount> cdfs;
  for (std::size_t k = 0; k < kCovariateCount; ++k) {
    cdfs[k].resize(spec.marginals[k].size());
    std::partial_sum(spec.marginals[k].begin(), spec.marginals[k].end(), cdfs[k].begin());
  }
  CovariateDistribution dist;
  dist.support.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    CovariateProfile p;
    for (std::size_t k = 0; k < kCovariateCount; ++k) {
      p.levels[k] = static_cast<int>(stream.categorical(cdfs[k])) + 1;
    }
    // Round to whole days, as recorded terms are.
    p.probation_term_days = std::max(spec.term.min_days, std::round(spec.term.sample(p, stream)));
    p.initial_age_years = dist.age_bounds.lo(p.level(Covariate::age));
    dist.support.push_back(p);
  }
  dist.weights.assign(n, 1.0 / static_cast<double>(n));
  return dist;
}

}  // namespace divsim
