#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "divsim/errors.hpp"

namespace divsim {

inline constexpr double kDaysPerYear = 365.25;

/// Categorical covariates of the hazard model. `age` is the age category at
/// arrival; during simulation the category is recomputed from current age.
enum class Covariate : std::size_t {
  employment,
  age,
  prior_felonies,
  offense_type,
  sex,
  ethnicity,
  drug_abuse,
  race,
  supervision,
};

inline constexpr std::size_t kCovariateCount = 9;

inline constexpr std::array<std::string_view, kCovariateCount> kCovariateNames = {
    "employment", "age",       "prior_felonies", "offense_type", "sex",
    "ethnicity",  "drug_abuse", "race",          "supervision",
};

/// Number of levels per covariate; levels are 1-based and level 1 is the
/// reference category.
inline constexpr std::array<int, kCovariateCount> kLevelCounts = {3, 6, 3, 8, 2, 2, 3, 5, 6};

inline constexpr std::size_t index_of(Covariate c) noexcept { return static_cast<std::size_t>(c); }

inline std::string_view name_of(Covariate c) noexcept { return kCovariateNames[index_of(c)]; }

inline std::optional<Covariate> covariate_from_name(std::string_view name) noexcept {
  for (std::size_t k = 0; k < kCovariateCount; ++k) {
    if (kCovariateNames[k] == name) return static_cast<Covariate>(k);
  }
  return std::nullopt;
}

/// Age category (1..6) for an age in years: <20, 20-24, 25-29, 30-39, 40-49, >=50.
constexpr int age_category(double age_years) noexcept {
  if (age_years < 20.0) return 1;
  if (age_years < 25.0) return 2;
  if (age_years < 30.0) return 3;
  if (age_years < 40.0) return 4;
  if (age_years < 50.0) return 5;
  return 6;
}

/// Numeric bounds [lo, hi) in years used to draw a concrete age for each
/// category. The open-ended categories default to [16,20) and [50,65).
struct AgeBounds {
  std::array<double, 6> lower{16.0, 20.0, 25.0, 30.0, 40.0, 50.0};
  std::array<double, 6> upper{20.0, 25.0, 30.0, 40.0, 50.0, 65.0};

  double lo(int category) const { return lower.at(static_cast<std::size_t>(category - 1)); }
  double hi(int category) const { return upper.at(static_cast<std::size_t>(category - 1)); }
  double midpoint(int category) const { return 0.5 * (lo(category) + hi(category)); }

  void validate() const {
    for (std::size_t k = 0; k < 6; ++k) {
      if (!(lower[k] < upper[k])) {
        throw ConfigError("age bounds: category " + std::to_string(k + 1) + " has empty range");
      }
      if (age_category(lower[k]) != static_cast<int>(k + 1) ||
          age_category(std::nextafter(upper[k], lower[k])) != static_cast<int>(k + 1)) {
        throw ConfigError("age bounds: category " + std::to_string(k + 1) +
                          " range leaves the category");
      }
    }
  }
};

/// Static covariates of one cohort profile plus its observed probation term.
struct CovariateProfile {
  std::array<int, kCovariateCount> levels{1, 1, 1, 1, 1, 1, 1, 1, 1};
  double probation_term_days = 1375.0;
  /// Concrete initial age; set when the profile is drawn for an individual.
  double initial_age_years = 16.0;
  /// Age used for cohort reweighting when the source data records one.
  std::optional<double> recorded_age_years;

  int level(Covariate c) const noexcept { return levels[index_of(c)]; }
  void set(Covariate c, int level) noexcept { levels[index_of(c)] = level; }

  bool operator==(const CovariateProfile&) const = default;
};

/// Throws ConfigError naming the first out-of-domain level.
inline void validate_levels(const CovariateProfile& p) {
  for (std::size_t k = 0; k < kCovariateCount; ++k) {
    const int lv = p.levels[k];
    if (lv < 1 || lv > kLevelCounts[k]) {
      throw ConfigError(std::string(kCovariateNames[k]) + ": level " + std::to_string(lv) +
                        " outside [1," + std::to_string(kLevelCounts[k]) + "]");
    }
  }
}

}  // namespace divsim
