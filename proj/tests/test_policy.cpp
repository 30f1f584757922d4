#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <iterator>
#include <tuple>
#include <set>
#include <string>
#include <vector>

#include "divsim/policy.hpp"
#include "divsim/rng.hpp"

using namespace divsim;

namespace {

std::vector<Candidate> make(const std::vector<double>& risks, const std::vector<double>& ages = {}) {
  std::vector<Candidate> out;
  for (std::size_t k = 0; k < risks.size(); ++k) {
    Candidate c;
    c.id = static_cast<IndividualId>(k);
    c.risk = risks[k];
    c.age_days = ages.empty() ? 9000.0 : ages[k] * kDaysPerYear;
    out.push_back(c);
  }
  return out;
}

std::vector<Candidate> random_candidates(CommunityStream& rng, std::size_t n) {
  std::vector<Candidate> out;
  for (std::size_t k = 0; k < n; ++k) {
    Candidate c;
    c.id = static_cast<IndividualId>(k * 7 + 3);
    // Coarse grid so ties happen.
    c.risk = std::round(rng.uniform(-3.0, 2.0) * 4.0) / 4.0;
    c.age_days = std::round(rng.uniform(16.0, 65.0)) * kDaysPerYear;
    c.on_probation = rng.uniform() < 0.8;
    out.push_back(c);
  }
  return out;
}

}  // namespace

TEST(Decide, DocumentedExamples) {
  const auto c = make({0.5, -1.0, 2.0});
  EXPECT_EQ(decide(PolicyKind::low_risk, c, 1), std::vector<IndividualId>{1});
  EXPECT_EQ(decide(PolicyKind::high_risk, c, 1), std::vector<IndividualId>{2});
  EXPECT_TRUE(decide(PolicyKind::null, c, 3).empty());
  const auto aged = make({0.1, 0.9, 0.2}, {25, 19, 19});
  EXPECT_EQ(decide(PolicyKind::age_first_low_risk, aged, 1), std::vector<IndividualId>{2});
  for (auto k : kAllPolicies) EXPECT_TRUE(decide(k, c, 0).empty()) << to_string(k);
}

// Brute force: the age-first choice is the lexicographic minimum of (age, risk, id).
TEST(Decide, AgeFirstMatchesLexicographicEnumeration) {
  CommunityStream rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = random_candidates(rng, 12);
    std::vector<Candidate> eligible;
    std::copy_if(c.begin(), c.end(), std::back_inserter(eligible), [](const Candidate& x) { return x.on_probation; });
    const long cap = 1 + trial % 5;
    const auto got = decide(PolicyKind::age_first_low_risk, c, cap);
    std::vector<IndividualId> expect;
    auto pool = eligible;
    for (long k = 0; k < cap && !pool.empty(); ++k) {
      auto best = pool.begin();
      for (auto it = pool.begin(); it != pool.end(); ++it) {
        if (std::tie(it->age_days, it->risk, it->id) < std::tie(best->age_days, best->risk, best->id)) best = it;
      }
      expect.push_back(best->id);
      pool.erase(best);
    }
    EXPECT_EQ(got, expect);
  }
}

TEST(Decide, SizeBoundAndEligibility) {
  CommunityStream rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    const auto c = random_candidates(rng, 1 + trial % 30);
    const long cap = trial % 12;
    for (auto k : kAllPolicies) {
      const auto got = decide(k, c, cap);
      EXPECT_LE(static_cast<long>(got.size()), cap);
      std::set<IndividualId> ids(got.begin(), got.end());
      EXPECT_EQ(ids.size(), got.size());
      for (auto id : got) {
        const auto it = std::find_if(c.begin(), c.end(), [&](const Candidate& x) { return x.id == id; });
        ASSERT_NE(it, c.end());
        EXPECT_TRUE(it->on_probation);
      }
      const auto eligible = std::count_if(c.begin(), c.end(), [](const Candidate& x) { return x.on_probation; });
      if (k != PolicyKind::null) {
        EXPECT_EQ(static_cast<long>(got.size()), std::min<long>(cap, eligible));
      }
    }
  }
}

TEST(Decide, ExchangeProperty) {
  CommunityStream rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const auto c = random_candidates(rng, 20);
    const long cap = 1 + trial % 8;
    for (auto kind : {PolicyKind::low_risk, PolicyKind::high_risk}) {
      const auto got = decide(kind, c, cap);
      const std::set<IndividualId> chosen(got.begin(), got.end());
      for (const auto& sel : c) {
        if (!chosen.contains(sel.id)) continue;
        for (const auto& other : c) {
          if (!other.on_probation || chosen.contains(other.id)) continue;
          if (kind == PolicyKind::low_risk) {
            EXPECT_GE(other.risk, sel.risk);
            if (other.risk == sel.risk) {
              EXPECT_GT(other.id, sel.id);
            }
          } else {
            EXPECT_LE(other.risk, sel.risk);
            if (other.risk == sel.risk) {
              EXPECT_GT(other.id, sel.id);
            }
          }
        }
      }
    }
  }
}

TEST(Decide, InvariantToInputOrder) {
  CommunityStream rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    auto c = random_candidates(rng, 15);
    const long cap = 1 + trial % 6;
    for (auto k : kAllPolicies) {
      const auto ref = decide(k, c, cap);
      auto shuffled = c;
      for (std::size_t i = shuffled.size(); i > 1; --i) {
        std::swap(shuffled[i - 1], shuffled[static_cast<std::size_t>(rng.uniform() * i)]);
      }
      EXPECT_EQ(decide(k, shuffled, cap), ref);
    }
  }
}

TEST(Decide, OffProbationNeverSelected) {
  auto c = make({-5.0, 0.0, 5.0});
  c[0].on_probation = false;
  c[2].on_probation = false;
  EXPECT_EQ(decide(PolicyKind::low_risk, c, 3), std::vector<IndividualId>{1});
  EXPECT_EQ(decide(PolicyKind::high_risk, c, 3), std::vector<IndividualId>{1});
}

TEST(Decide, TiesGoToTheSmallerId) {
  const auto c = make({1.0, 1.0, 1.0});
  EXPECT_EQ(decide(PolicyKind::low_risk, c, 2), (std::vector<IndividualId>{0, 1}));
  EXPECT_EQ(decide(PolicyKind::high_risk, c, 2), (std::vector<IndividualId>{0, 1}));
}

TEST(Decide, NegativeCapacityWarnsAndSelectsNobody) {
  const auto c = make({0.5, -1.0});
  std::vector<std::string> warnings;
  const auto got = decide(PolicyKind::high_risk, c, -2, {}, [&](const std::string& w) { warnings.push_back(w); });
  EXPECT_TRUE(got.empty());
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("exceeds capacity by 2"), std::string::npos);
}

TEST(Decide, AgeBucketsGroupBeforeRiskSort) {
  // Exact ages put 19.2 first; five-year buckets merge 19.2 and 19.8 and the lower risk wins.
  const auto c = make({0.9, 0.1, -1.0}, {19.2, 19.8, 30.0});
  EXPECT_EQ(decide(PolicyKind::age_first_low_risk, c, 1), std::vector<IndividualId>{0});
  PolicyOptions bucket;
  bucket.age_bucket_days = kDaysPerYear * 5;
  EXPECT_EQ(decide(PolicyKind::age_first_low_risk, c, 1, bucket), std::vector<IndividualId>{1});
}

TEST(PolicyNames, RoundTrip) {
  for (auto k : kAllPolicies) EXPECT_EQ(policy_from_string(to_string(k)), k);
  EXPECT_EQ(policy_from_string("age-first"), PolicyKind::age_first_low_risk);
  EXPECT_FALSE(policy_from_string("random").has_value());
}
