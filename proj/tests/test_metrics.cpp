#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "divsim/metrics.hpp"

using namespace divsim;

namespace {

std::vector<Snapshot> constant_trajectory(std::size_t episodes, std::size_t pop, std::size_t offenses) {
  std::vector<Snapshot> out;
  for (std::size_t k = 0; k < episodes; ++k) {
    Snapshot s;
    s.episode = k + 1;
    s.population = pop;
    s.offenses = offenses;
    s.incarcerations = offenses / 2;
    s.completions = 3;
    s.enrollment = 7;
    s.mu = static_cast<double>(offenses) / static_cast<double>(pop);
    out.push_back(s);
  }
  return out;
}

ReplicationSeries series(std::vector<double> values) {
  ReplicationSeries s;
  for (std::size_t k = 0; k < values.size(); ++k) s.replications.push_back(k);
  s.values = std::move(values);
  return s;
}

}  // namespace

TEST(Windows, ConstantMetricsGiveTheConstant) {
  const auto traj = constant_trajectory(300, 400, 40);
  for (auto w : {Window::short_term, Window::long_term}) {
    const auto m = window_metrics(traj, w);
    EXPECT_NEAR(m.offenses_per_capita, 0.1, 1e-15);
    EXPECT_NEAR(m.incarcerations_per_capita, 0.05, 1e-15);
    EXPECT_NEAR(m.completions_per_capita, 3.0 / 400.0, 1e-15);
    EXPECT_NEAR(m.population, 400.0, 1e-15);
    EXPECT_NEAR(m.enrollment, 7.0, 1e-15);
    EXPECT_NEAR(m.mu, 0.1, 1e-15);
  }
}

TEST(Windows, LongWindowIsTheFinalTwentyEpisodes) {
  const auto [first, last] = window_range(300, Window::long_term);
  EXPECT_EQ(first + 1, 281u);  // 1-based episode numbers 281..300
  EXPECT_EQ(last, 300u);
  const auto [s0, s1] = window_range(300, Window::short_term);
  EXPECT_EQ(s0, 0u);
  EXPECT_EQ(s1, 30u);

  auto traj = constant_trajectory(300, 100, 0);
  for (std::size_t k = 280; k < 300; ++k) traj[k].offenses = 20;
  EXPECT_DOUBLE_EQ(window_metrics(traj, Window::long_term).offenses_per_capita, 0.2);
  EXPECT_DOUBLE_EQ(window_metrics(traj, Window::short_term).offenses_per_capita, 0.0);
}

TEST(Windows, ShortTrajectoryIsAWindowError) {
  const auto traj = constant_trajectory(10, 100, 1);
  EXPECT_THROW((void)window_metrics(traj, Window::short_term), WindowError);
  EXPECT_THROW((void)window_metrics(traj, Window::long_term), WindowError);
  EXPECT_NO_THROW((void)window_metrics(constant_trajectory(20, 100, 1), Window::long_term));
}

TEST(Windows, DisjointWhenAtLeastFiftyEpisodes) {
  for (std::size_t n = 50; n < 400; ++n) {
    const auto s = window_range(n, Window::short_term);
    const auto l = window_range(n, Window::long_term);
    EXPECT_LE(s.second, l.first) << n;
  }
}

TEST(EpisodeMetricsTest, EmptyPopulationDividesByOne) {
  Snapshot s;
  s.offenses = 3;
  const auto m = episode_metrics(s);
  EXPECT_DOUBLE_EQ(m.offenses_per_capita, 3.0);
}

TEST(EpisodeMetricsTest, PerCapitaIsScaleInvariant) {
  Snapshot s;
  s.population = 137;
  s.offenses = 12;
  s.incarcerations = 5;
  s.completions = 9;
  for (std::size_t f : {2u, 7u, 100u}) {
    Snapshot t = s;
    t.population *= f;
    t.offenses *= f;
    t.incarcerations *= f;
    t.completions *= f;
    const auto a = episode_metrics(s);
    const auto b = episode_metrics(t);
    EXPECT_NEAR(a.offenses_per_capita, b.offenses_per_capita, 1e-15);
    EXPECT_NEAR(a.incarcerations_per_capita, b.incarcerations_per_capita, 1e-15);
    EXPECT_NEAR(a.completions_per_capita, b.completions_per_capita, 1e-15);
  }
}

TEST(Estimates, NormalIntervalMatchesHandComputation) {
  const auto e = estimate({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(e.mean, 2.5);
  const double sd = std::sqrt((2.25 + 0.25 + 0.25 + 2.25) / 3.0);
  EXPECT_NEAR(e.half_width, 1.959963984540054 * sd / 2.0, 1e-15);
  EXPECT_THROW((void)estimate({1.0}), DomainError);
}

TEST(RelativeToNull, PairedMeanOfDifferences) {
  const auto d = relative_to_null(series({0.10, 0.20}), series({0.12, 0.24}), true);
  EXPECT_NEAR(d.mean, -0.03, 1e-15);
  EXPECT_EQ(d.n, 2u);
}

TEST(RelativeToNull, IdenticalSeriesGiveExactZero) {
  const auto s = series({0.3, 0.1, 0.7, 0.2});
  const auto d = relative_to_null(s, s, true);
  EXPECT_EQ(d.mean, 0.0);
  EXPECT_EQ(d.half_width, 0.0);
  EXPECT_TRUE(d.covers_zero());
  EXPECT_EQ(format_delta(d), "~0");
}

TEST(RelativeToNull, UnpairedCombinesVariances) {
  const auto a = series({1.0, 2.0, 3.0});
  const auto b = series({2.0, 2.0, 5.0});
  const auto d = relative_to_null(a, b, false);
  EXPECT_NEAR(d.mean, 2.0 - 3.0, 1e-15);
  EXPECT_NEAR(d.half_width, std::hypot(estimate(a.values).half_width, estimate(b.values).half_width), 1e-15);
}

TEST(RelativeToNull, MisalignedReplicationsAreRejected) {
  auto a = series({1.0, 2.0});
  auto b = series({1.0, 2.0});
  b.replications = {0, 5};
  EXPECT_THROW((void)relative_to_null(a, b, true), AlignmentError);
  EXPECT_THROW((void)relative_to_null(a, series({1.0, 2.0, 3.0}), false), AlignmentError);
}

TEST(RelativeToNull, FormatsSignificantDeltas) {
  Estimate e;
  e.mean = -0.01234;
  e.half_width = 0.005;
  EXPECT_EQ(format_delta(e), "-0.0123");
  e.half_width = 0.02;
  EXPECT_EQ(format_delta(e), "~0");
}

TEST(RegimeCrossing, DocumentedExamples) {
  // Equal-magnitude slopes crossing between 0.04 and 0.06.
  const std::vector<CrossingPoint> crossing = {
      {0.02, -0.10, -0.06}, {0.04, -0.10, -0.08}, {0.06, -0.10, -0.12}, {0.08, -0.10, -0.14}};
  ASSERT_TRUE(regime_crossing(crossing).has_value());
  EXPECT_NEAR(*regime_crossing(crossing), 0.05, 1e-12);

  const std::vector<CrossingPoint> high_better = {{0.01, -0.1, -0.2}, {0.02, -0.1, -0.2}, {0.03, -0.1, -0.2}};
  EXPECT_EQ(regime_crossing(high_better), 0.01);

  const std::vector<CrossingPoint> low_better = {{0.01, -0.3, -0.2}, {0.02, -0.3, -0.2}, {0.03, -0.3, -0.2}};
  EXPECT_FALSE(regime_crossing(low_better).has_value());
}

TEST(RegimeCrossing, RejectsShortOrUnsortedGrids) {
  EXPECT_THROW((void)regime_crossing({{0.01, 0, 0}, {0.02, 0, 0}}), DomainError);
  EXPECT_THROW((void)regime_crossing({{0.01, 0, 0}, {0.03, 0, 0}, {0.02, 0, 0}}), DomainError);
}

TEST(Stationarity, DetectsTrendAndFlatness) {
  auto flat = constant_trajectory(300, 500, 10);
  for (std::size_t k = 0; k < flat.size(); ++k) flat[k].population = 500 + (k % 2);
  const auto f = stationarity(flat);
  EXPECT_EQ(f.episodes, 100u);
  EXPECT_NEAR(f.slope, 0.0, 1e-3);
  EXPECT_FALSE(f.trending);

  auto rising = flat;
  for (std::size_t k = 0; k < rising.size(); ++k) rising[k].population = 100 + 3 * k + (k % 2);
  const auto r = stationarity(rising);
  EXPECT_NEAR(r.slope, 3.0, 1e-2);
  EXPECT_TRUE(r.trending);
}

TEST(EpisodeCsv, RoundTrip) {
  auto traj = constant_trajectory(5, 321, 17);
  traj[2].mu = 0.1 + 1e-17;
  traj[3].returns = 4;
  traj[4].arrivals = 22;
  std::stringstream ss;
  ss << kEpisodeCsvHeader << '\n';
  write_episode_rows(ss, 7, PolicyKind::age_first_low_risk, traj);
  const auto back = read_episode_rows(ss);
  ASSERT_EQ(back.size(), traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    EXPECT_EQ(back[k].replication, 7u);
    EXPECT_EQ(back[k].policy, PolicyKind::age_first_low_risk);
    EXPECT_EQ(back[k].snapshot, traj[k]);
  }
}

TEST(EpisodeCsv, BadRowsReportTheirLine) {
  std::stringstream ss;
  ss << kEpisodeCsvHeader << "\n0,null,1,1,1,1,1,1,0.5,1,1\n0,bogus,2,1,1,1,1,1,0.5,1,1\n";
  try {
    (void)read_episode_rows(ss);
    FAIL() << "expected an ingestion error";
  } catch (const IngestionError& e) {
    EXPECT_EQ(e.row(), 3u);
  }
}

TEST(Aggregate, RowsPerPolicyAndWindowWithZeroNullDeltas) {
  TrajectorySet set;
  for (std::uint64_t rep = 0; rep < 3; ++rep) {
    set[PolicyKind::null][rep] = constant_trajectory(60, 100, 10 + rep);
    set[PolicyKind::high_risk][rep] = constant_trajectory(60, 100, 8 + rep);
  }
  const auto rows = aggregate(set);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& row : rows) {
    if (row.policy == PolicyKind::null) {
      for (const auto& d : row.deltas) EXPECT_EQ(d.mean, 0.0);
    } else {
      EXPECT_NEAR(row.deltas[0].mean, -0.02, 1e-12);
      EXPECT_NEAR(row.deltas[0].half_width, 0.0, 1e-12);
    }
  }
  set.erase(PolicyKind::null);
  EXPECT_THROW((void)aggregate(set), AlignmentError);
}
