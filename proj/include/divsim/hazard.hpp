#pragma once

// Proportional-hazards risk model: risk scores, the baseline cumulative
// hazard and its inverse, inverse-transform offense-time sampling, and the
// treatment-effect calibration helpers.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "divsim/covariates.hpp"
#include "divsim/csv.hpp"
#include "divsim/errors.hpp"
#include "divsim/rng.hpp"

namespace divsim {

enum class RiskGroup { low, high };

inline std::string_view to_string(RiskGroup g) noexcept { return g == RiskGroup::low ? "L" : "H"; }

struct HomogeneousBeta {
  double beta = 0.0;
};

struct GroupedBeta {
  double low = 0.0;
  double high = 0.0;
};

/// Treatment effect: one beta for everybody, or one per risk group.
struct BetaSpec {
  std::variant<HomogeneousBeta, GroupedBeta> value{HomogeneousBeta{}};

  static BetaSpec homogeneous(double beta) { return BetaSpec{HomogeneousBeta{beta}}; }
  static BetaSpec grouped(double low, double high) { return BetaSpec{GroupedBeta{low, high}}; }

  bool is_grouped() const noexcept { return std::holds_alternative<GroupedBeta>(value); }

  double for_group(RiskGroup g) const noexcept {
    if (const auto* h = std::get_if<HomogeneousBeta>(&value)) return h->beta;
    const auto& grp = std::get<GroupedBeta>(value);
    return g == RiskGroup::low ? grp.low : grp.high;
  }

  void validate() const {
    const bool ok = std::visit(
        [](const auto& b) {
          if constexpr (std::is_same_v<std::decay_t<decltype(b)>, HomogeneousBeta>) {
            return std::isfinite(b.beta) && b.beta >= 0.0;
          } else {
            return std::isfinite(b.low) && std::isfinite(b.high) && b.low >= 0.0 && b.high >= 0.0;
          }
        },
        value);
    if (!ok) throw ConfigError("treatment effect beta must be finite and >= 0");
  }

  /// Compact label used in CSV output: "0.342" or "L1.709/H0.0684".
  std::string label() const {
    if (const auto* h = std::get_if<HomogeneousBeta>(&value)) return csv::format(h->beta);
    const auto& g = std::get<GroupedBeta>(value);
    return "L" + csv::format(g.low) + "/H" + csv::format(g.high);
  }

  bool operator==(const BetaSpec& o) const {
    return value.index() == o.value.index() && for_group(RiskGroup::low) == o.for_group(RiskGroup::low) &&
           for_group(RiskGroup::high) == o.for_group(RiskGroup::high);
  }
};

/// Cox coefficients. The risk score is
///   h = alpha0 * (sum of categorical coefficients + mu_coeff * mu) + arrests_coeff * j - beta * tau
/// so the effective community coefficient is alpha0 * mu_coeff.
struct CoefficientTable {
  double arrests_coeff = 0.1883;
  double alpha0 = 0.7903;
  double mu_coeff = 0.045;
  std::array<std::vector<double>, kCovariateCount> categorical{};
  BetaSpec beta = BetaSpec::homogeneous(0.342);

  double coefficient(Covariate c, int level) const {
    const auto& levels = categorical[index_of(c)];
    if (level < 1 || static_cast<std::size_t>(level) > levels.size()) {
      throw ConfigError(std::string(name_of(c)) + ": unknown level " + std::to_string(level));
    }
    return levels[static_cast<std::size_t>(level - 1)];
  }

  void validate() const {
    if (!(alpha0 > 0.0) || !std::isfinite(alpha0)) throw ConfigError("original_risk (alpha0) must be > 0");
    if (!std::isfinite(arrests_coeff)) throw ConfigError("arrests coefficient must be finite");
    if (!std::isfinite(mu_coeff)) throw ConfigError("mu coefficient must be finite");
    for (std::size_t k = 0; k < kCovariateCount; ++k) {
      const auto& levels = categorical[k];
      if (levels.size() != static_cast<std::size_t>(kLevelCounts[k])) {
        throw ConfigError(std::string(kCovariateNames[k]) + ": expected " + std::to_string(kLevelCounts[k]) +
                          " levels, found " + std::to_string(levels.size()));
      }
      if (levels.front() != 0.0) {
        throw ConfigError(std::string(kCovariateNames[k]) + ": reference level 1 must have coefficient 0");
      }
      for (double v : levels) {
        if (!std::isfinite(v)) throw ConfigError(std::string(kCovariateNames[k]) + ": non-finite coefficient");
      }
    }
    beta.validate();
  }
};

/// Bundled defaults: the published categorical coefficients with the
/// regression estimates alpha0 = 0.7903, theta1 = 0.1883.
inline CoefficientTable default_coefficient_table() {
  CoefficientTable t;
  t.categorical[index_of(Covariate::employment)] = {0.000, -0.163, -0.386};
  t.categorical[index_of(Covariate::age)] = {0.000, -0.213, -0.360, -0.560, -1.013, -1.429};
  t.categorical[index_of(Covariate::prior_felonies)] = {0.000, 0.292, 0.366};
  t.categorical[index_of(Covariate::offense_type)] = {0.000, -0.101, 0.584, 0.305, 0.686, 0.740, 0.479, 0.613};
  t.categorical[index_of(Covariate::sex)] = {0.000, -0.422};
  t.categorical[index_of(Covariate::ethnicity)] = {0.000, -0.266};
  t.categorical[index_of(Covariate::drug_abuse)] = {0.000, 0.031, 0.318};
  t.categorical[index_of(Covariate::race)] = {0.000, 0.469, 0.194, -0.424, -0.422};
  t.categorical[index_of(Covariate::supervision)] = {0.000, 0.174, -0.136, 0.188, 0.463, 0.551};
  return t;
}

/// Parses a coefficient table from `covariate,level,coefficient` rows.
///
/// Scalar rows leave the level empty: `arrests`, `original_risk`, `mu`, and
/// optionally `beta` (homogeneous) or `beta_low` + `beta_high`. Categorical
/// rows must cover every level of each covariate.
inline CoefficientTable parse_coefficient_table(std::istream& in) {
  CoefficientTable t;
  std::array<std::vector<std::optional<double>>, kCovariateCount> seen{};
  for (std::size_t k = 0; k < kCovariateCount; ++k) seen[k].assign(static_cast<std::size_t>(kLevelCounts[k]), std::nullopt);
  std::optional<double> beta, beta_low, beta_high;
  bool have_arrests = false, have_alpha = false, have_mu = false;

  const auto rows = csv::read_rows(in);
  bool header_skipped = false;
  for (const auto& row : rows) {
    if (!header_skipped) {
      header_skipped = true;
      if (!row.fields.empty() && row.fields[0] == "covariate") continue;
    }
    if (row.fields.size() != 3) throw IngestionError(row.line, "expected 3 fields: covariate,level,coefficient");
    const auto& name = row.fields[0];
    const auto value = csv::parse_double(row.fields[2]);
    if (!value) throw IngestionError(row.line, "coefficient '" + row.fields[2] + "' is not a number");
    if (row.fields[1].empty() || row.fields[1] == "-") {
      if (name == "arrests") {
        t.arrests_coeff = *value;
        have_arrests = true;
      } else if (name == "original_risk") {
        t.alpha0 = *value;
        have_alpha = true;
      } else if (name == "mu") {
        t.mu_coeff = *value;
        have_mu = true;
      } else if (name == "beta") {
        beta = *value;
      } else if (name == "beta_low") {
        beta_low = *value;
      } else if (name == "beta_high") {
        beta_high = *value;
      } else {
        throw IngestionError(row.line, "unknown scalar coefficient '" + name + "'");
      }
      continue;
    }
    const auto cov = covariate_from_name(name);
    if (!cov) throw IngestionError(row.line, "unknown covariate '" + name + "'");
    const auto level = csv::parse_int(row.fields[1]);
    const auto k = index_of(*cov);
    if (!level || *level < 1 || *level > kLevelCounts[k]) {
      throw IngestionError(row.line, name + ": level " + row.fields[1] + " outside [1," +
                                         std::to_string(kLevelCounts[k]) + "]");
    }
    auto& slot = seen[k][static_cast<std::size_t>(*level - 1)];
    if (slot) throw IngestionError(row.line, name + ": duplicate level " + row.fields[1]);
    slot = *value;
  }
  if (!have_arrests || !have_alpha || !have_mu) {
    throw ConfigError("coefficient table must define arrests, original_risk and mu");
  }
  for (std::size_t k = 0; k < kCovariateCount; ++k) {
    auto& out = t.categorical[k];
    out.clear();
    for (std::size_t lv = 0; lv < seen[k].size(); ++lv) {
      if (!seen[k][lv]) {
        throw ConfigError(std::string(kCovariateNames[k]) + ": missing level " + std::to_string(lv + 1));
      }
      out.push_back(*seen[k][lv]);
    }
  }
  if (beta && (beta_low || beta_high)) throw ConfigError("coefficient table: give either beta or beta_low/beta_high");
  if (beta_low.has_value() != beta_high.has_value()) throw ConfigError("coefficient table: beta_low and beta_high go together");
  if (beta) t.beta = BetaSpec::homogeneous(*beta);
  if (beta_low) t.beta = BetaSpec::grouped(*beta_low, *beta_high);
  t.validate();
  return t;
}

inline CoefficientTable load_coefficient_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open coefficient table '" + path + "'");
  return parse_coefficient_table(in);
}

inline void write_coefficient_table(std::ostream& out, const CoefficientTable& t) {
  out << "covariate,level,coefficient\n";
  out << "arrests,," << csv::format(t.arrests_coeff) << '\n';
  out << "original_risk,," << csv::format(t.alpha0) << '\n';
  out << "mu,," << csv::format(t.mu_coeff) << '\n';
  for (std::size_t k = 0; k < kCovariateCount; ++k) {
    for (std::size_t lv = 0; lv < t.categorical[k].size(); ++lv) {
      out << kCovariateNames[k] << ',' << lv + 1 << ',' << csv::format(t.categorical[k][lv]) << '\n';
    }
  }
}

/// Risk score h and its additive breakdown.
struct RiskScore {
  struct Components {
    double static_part = 0.0;  // alpha0 * non-age categorical coefficients
    double age = 0.0;          // alpha0 * age-category coefficient
    double arrests = 0.0;      // theta1 * j
    double community = 0.0;    // alpha0 * mu_coeff * mu
    double treatment = 0.0;    // -beta when treated
  };

  double value = 0.0;
  Components components;
};

/// Sum of alpha0-scaled categorical coefficients, excluding age.
inline double static_risk(const CovariateProfile& profile, const CoefficientTable& table) {
  double sum = 0.0;
  for (std::size_t k = 0; k < kCovariateCount; ++k) {
    const auto c = static_cast<Covariate>(k);
    if (c == Covariate::age) continue;
    sum += table.coefficient(c, profile.levels[k]);
  }
  return table.alpha0 * sum;
}

/// Risk score for a profile at a given age, offense count and community mean
/// offense rate. The age category is recomputed from `age_days`, so the
/// profile's recorded arrival category is not used here.
inline RiskScore compute_risk(const CovariateProfile& profile, double age_days, int offense_count, double mu,
                              bool treated, RiskGroup group, const CoefficientTable& table) {
  if (!(mu >= 0.0)) throw DomainError("compute_risk: mu must be >= 0");
  if (offense_count < 0) throw DomainError("compute_risk: offense count must be >= 0");
  RiskScore r;
  r.components.static_part = static_risk(profile, table);
  r.components.age = table.alpha0 * table.coefficient(Covariate::age, age_category(age_days / kDaysPerYear));
  r.components.arrests = table.arrests_coeff * offense_count;
  r.components.community = table.alpha0 * table.mu_coeff * mu;
  r.components.treatment = treated ? -table.beta.for_group(group) : 0.0;
  const auto& c = r.components;
  r.value = c.static_part + c.age + c.arrests + c.community + c.treatment;
  return r;
}

/// Untreated score of a profile at arrival (j = 0), using its age category.
inline double profile_risk(const CovariateProfile& profile, double mu, const CoefficientTable& table) {
  const double cat = table.alpha0 * table.coefficient(Covariate::age, profile.level(Covariate::age));
  return static_risk(profile, table) + cat + table.alpha0 * table.mu_coeff * mu;
}

/// Piecewise-constant baseline hazard rate. Segment k covers
/// [breakpoints[k], breakpoints[k+1]) with rate rates[k]; the last segment is
/// unbounded, so the cumulative hazard grows without limit.
class BaselineHazard {
 public:
  static BaselineHazard exponential(double rate) { return BaselineHazard({0.0}, {rate}); }

  static BaselineHazard piecewise(std::vector<double> breakpoints, std::vector<double> rates) {
    return BaselineHazard(std::move(breakpoints), std::move(rates));
  }

  const std::vector<double>& breakpoints() const noexcept { return breakpoints_; }
  const std::vector<double>& rates() const noexcept { return rates_; }
  bool is_exponential() const noexcept { return rates_.size() == 1; }

  /// Lambda0(s), exact.
  double cumulative(double s) const {
    if (!(s >= 0.0)) throw DomainError("cumulative hazard: time must be >= 0");
    const std::size_t k = segment_for_time(s);
    return cumulative_[k] + rates_[k] * (s - breakpoints_[k]);
  }

  /// s with Lambda0(s) = y.
  double inverse(double y) const {
    if (!(y >= 0.0)) throw DomainError("inverse cumulative hazard: value must be >= 0");
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), y);
    // upper_bound lands past any zero-length segments sharing this value.
    const std::size_t k = static_cast<std::size_t>(it - cumulative_.begin()) - 1;
    return breakpoints_[k] + (y - cumulative_[k]) / rates_[k];
  }

  double survival(double s) const { return std::exp(-cumulative(s)); }

  bool operator==(const BaselineHazard&) const = default;

 private:
  BaselineHazard(std::vector<double> breakpoints, std::vector<double> rates)
      : breakpoints_(std::move(breakpoints)), rates_(std::move(rates)) {
    if (breakpoints_.empty() || breakpoints_.size() != rates_.size()) {
      throw ConfigError("baseline hazard: need one rate per breakpoint");
    }
    if (breakpoints_.front() != 0.0) throw ConfigError("baseline hazard: first breakpoint must be 0");
    for (std::size_t k = 0; k < rates_.size(); ++k) {
      if (!(rates_[k] > 0.0) || !std::isfinite(rates_[k])) {
        throw ConfigError("baseline hazard: rates must be finite and > 0");
      }
      if (k > 0 && !(breakpoints_[k] >= breakpoints_[k - 1])) {
        throw ConfigError("baseline hazard: breakpoints must be nondecreasing");
      }
    }
    cumulative_.resize(rates_.size());
    cumulative_[0] = 0.0;
    for (std::size_t k = 1; k < rates_.size(); ++k) {
      cumulative_[k] = cumulative_[k - 1] + rates_[k - 1] * (breakpoints_[k] - breakpoints_[k - 1]);
    }
  }

  std::size_t segment_for_time(double s) const {
    const auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), s);
    return static_cast<std::size_t>(it - breakpoints_.begin()) - 1;
  }

  std::vector<double> breakpoints_;
  std::vector<double> rates_;
  std::vector<double> cumulative_;
};

/// S_i(s) = S0(s)^exp(h).
inline double survival(const BaselineHazard& base, double s, double h) {
  return std::exp(-base.cumulative(s) * std::exp(h));
}

/// Inverse transform: T = Lambda0^{-1}(-ln(u) * exp(-h)) for u in (0,1).
inline double offense_time_from_uniform(double h, const BaselineHazard& base, double u) {
  return base.inverse(-std::log(u) * std::exp(-h));
}

template <class Engine>
double sample_offense_time(double h, const BaselineHazard& base, RandomStream<Engine>& stream) {
  return offense_time_from_uniform(h, base, stream.uniform());
}

/// Treatment-effect anchor: an individual at risk `median_risk` whose
/// `horizon_days` offense probability falls by `reduction` under `beta`.
struct TreatmentAnchor {
  double median_risk = -1.434;
  double beta = 0.342;
  double horizon_days = 730.0;
  double reduction = 0.25;
};

namespace detail {

// 1 - S0(H)^exp(h - beta) - (1 - r) * (1 - S0(H)^exp(h)) for S0(H) = exp(-rate * H).
inline double anchor_residual(const TreatmentAnchor& a, double rate) {
  const double x = rate * a.horizon_days;
  const double treated = -std::expm1(-x * std::exp(a.median_risk - a.beta));
  const double untreated = -std::expm1(-x * std::exp(a.median_risk));
  return treated - (1.0 - a.reduction) * untreated;
}

}  // namespace detail

/// Constant baseline rate that makes the anchor hold, by bisection in
/// log-rate. The residual is negative for small rates and tends to
/// `reduction` for large ones whenever exp(-beta) < 1 - reduction.
inline BaselineHazard calibrate_baseline_from_anchor(const TreatmentAnchor& a) {
  if (!(a.reduction > 0.0 && a.reduction < 1.0)) throw DomainError("calibration: reduction must be in (0,1)");
  if (!(a.horizon_days > 0.0)) throw DomainError("calibration: horizon must be > 0");
  if (!(a.beta >= 0.0) || !std::isfinite(a.beta) || !std::isfinite(a.median_risk)) {
    throw DomainError("calibration: beta must be >= 0 and risk finite");
  }
  // Bracket in units of cumulative hazard at the horizon.
  double lo = std::log(1e-12 / a.horizon_days);
  double hi = std::log(1e3 / a.horizon_days);
  const double f_lo = detail::anchor_residual(a, std::exp(lo));
  const double f_hi = detail::anchor_residual(a, std::exp(hi));
  if (!(f_lo < 0.0 && f_hi > 0.0)) {
    std::ostringstream msg;
    msg << "calibration: no root in bracket (residual " << f_lo << " at rate " << std::exp(lo) << ", " << f_hi
        << " at rate " << std::exp(hi) << ")";
    throw CalibrationError(msg.str());
  }
  double mid = 0.5 * (lo + hi);
  for (int iter = 0; iter < 400; ++iter) {
    mid = 0.5 * (lo + hi);
    const double f = detail::anchor_residual(a, std::exp(mid));
    if (std::abs(f) < 1e-13) break;
    if (f < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-15) break;
  }
  return BaselineHazard::exponential(std::exp(mid));
}

/// Proportional-hazards effect turning offense probability `p_untreated`
/// into `p_treated` over the same horizon.
inline double derive_group_beta(double p_untreated, double p_treated) {
  if (p_treated > p_untreated) throw DomainError("derive_group_beta: treatment must not increase offense probability");
  if (!(p_treated > 0.0) || !(p_untreated < 1.0)) {
    throw DomainError("derive_group_beta: probabilities must satisfy 0 < p_treated <= p_untreated < 1");
  }
  return -std::log(std::log1p(-p_treated) / std::log1p(-p_untreated));
}

/// Offense probability over `horizon` for risk h under the baseline.
inline double offense_probability(const BaselineHazard& base, double horizon, double h) {
  return -std::expm1(-base.cumulative(horizon) * std::exp(h));
}

}  // namespace divsim
