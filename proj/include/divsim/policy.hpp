#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "divsim/errors.hpp"
#include "divsim/population.hpp"

namespace divsim {

enum class PolicyKind { null, low_risk, high_risk, age_first_low_risk };

inline constexpr std::array<PolicyKind, 4> kAllPolicies = {PolicyKind::null, PolicyKind::low_risk,
                                                           PolicyKind::high_risk, PolicyKind::age_first_low_risk};

inline std::string_view to_string(PolicyKind k) noexcept {
  switch (k) {
    case PolicyKind::null: return "null";
    case PolicyKind::low_risk: return "low-risk";
    case PolicyKind::high_risk: return "high-risk";
    case PolicyKind::age_first_low_risk: return "age-first-low-risk";
  }
  return "?";
}

inline std::optional<PolicyKind> policy_from_string(std::string_view s) noexcept {
  for (auto k : kAllPolicies) {
    if (to_string(k) == s) return k;
  }
  if (s == "age-first") return PolicyKind::age_first_low_risk;
  return std::nullopt;
}

/// One undecided individual as seen by a policy.
struct Candidate {
  IndividualId id = 0;
  double risk = 0.0;       // untreated score at the current mu
  double age_days = 0.0;
  bool on_probation = true;
};

struct PolicyOptions {
  /// Age-first only: when positive, ages are compared in buckets of this many
  /// days instead of exactly.
  double age_bucket_days = 0.0;
};

/// Treatment selection for one episode boundary.
///
/// Only on-probation candidates are eligible. Low-risk takes the lowest
/// scores, high-risk the highest, age-first sorts by (age, score) ascending.
/// Ties go to the smaller id. A negative remaining capacity selects nobody
/// and reports a warning.
inline std::vector<IndividualId> decide(PolicyKind kind, std::vector<Candidate> candidates, long remaining_capacity,
                                        const PolicyOptions& options = {}, const WarningSink& warn = {}) {
  if (remaining_capacity < 0) {
    if (warn) {
      warn("treatment enrollment exceeds capacity by " + std::to_string(-remaining_capacity) +
           "; no new assignments this episode");
    }
    return {};
  }
  if (kind == PolicyKind::null || remaining_capacity == 0) return {};

  std::erase_if(candidates, [](const Candidate& c) { return !c.on_probation; });

  const auto age_key = [&](const Candidate& c) {
    return options.age_bucket_days > 0.0 ? std::floor(c.age_days / options.age_bucket_days) : c.age_days;
  };
  switch (kind) {
    case PolicyKind::low_risk:
      std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        return a.risk != b.risk ? a.risk < b.risk : a.id < b.id;
      });
      break;
    case PolicyKind::high_risk:
      std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        return a.risk != b.risk ? a.risk > b.risk : a.id < b.id;
      });
      break;
    case PolicyKind::age_first_low_risk:
      std::sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
        const double ka = age_key(a);
        const double kb = age_key(b);
        if (ka != kb) return ka < kb;
        if (a.risk != b.risk) return a.risk < b.risk;
        return a.id < b.id;
      });
      break;
    case PolicyKind::null:
      break;
  }
  const auto take = std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(remaining_capacity));
  std::vector<IndividualId> out;
  out.reserve(take);
  for (std::size_t k = 0; k < take; ++k) out.push_back(candidates[k].id);
  return out;
}

}  // namespace divsim
