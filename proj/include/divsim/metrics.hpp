#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <sstream>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "divsim/csv.hpp"
#include "divsim/engine.hpp"
#include "divsim/errors.hpp"
#include "divsim/policy.hpp"

namespace divsim {

enum class Window { short_term, long_term };

inline std::string_view to_string(Window w) noexcept { return w == Window::short_term ? "short" : "long"; }

inline constexpr std::size_t kShortWindowEpisodes = 30;
inline constexpr std::size_t kLongWindowEpisodes = 20;

struct EpisodeMetrics {
  double offenses_per_capita = 0.0;
  double incarcerations_per_capita = 0.0;
  double completions_per_capita = 0.0;
  double population = 0.0;
  double enrollment = 0.0;
  double mu = 0.0;
};

inline EpisodeMetrics episode_metrics(const Snapshot& s) {
  const double n = static_cast<double>(std::max<std::size_t>(s.population, 1));
  EpisodeMetrics m;
  m.offenses_per_capita = static_cast<double>(s.offenses) / n;
  m.incarcerations_per_capita = static_cast<double>(s.incarcerations) / n;
  m.completions_per_capita = static_cast<double>(s.completions) / n;
  m.population = static_cast<double>(s.population);
  m.enrollment = static_cast<double>(s.enrollment);
  m.mu = s.mu;
  return m;
}

/// Half-open index range [first, last) of a window within `episodes` episodes.
inline std::pair<std::size_t, std::size_t> window_range(std::size_t episodes, Window w) {
  const std::size_t need = w == Window::short_term ? kShortWindowEpisodes : kLongWindowEpisodes;
  if (episodes < need) {
    throw WindowError(std::string(to_string(w)) + " window needs " + std::to_string(need) + " episodes, trajectory has " +
                      std::to_string(episodes));
  }
  return w == Window::short_term ? std::pair{std::size_t{0}, need} : std::pair{episodes - need, episodes};
}

inline EpisodeMetrics window_metrics(const std::vector<Snapshot>& snapshots, Window w) {
  const auto [first, last] = window_range(snapshots.size(), w);
  EpisodeMetrics acc;
  for (std::size_t k = first; k < last; ++k) {
    const EpisodeMetrics m = episode_metrics(snapshots[k]);
    acc.offenses_per_capita += m.offenses_per_capita;
    acc.incarcerations_per_capita += m.incarcerations_per_capita;
    acc.completions_per_capita += m.completions_per_capita;
    acc.population += m.population;
    acc.enrollment += m.enrollment;
    acc.mu += m.mu;
  }
  const double n = static_cast<double>(last - first);
  acc.offenses_per_capita /= n;
  acc.incarcerations_per_capita /= n;
  acc.completions_per_capita /= n;
  acc.population /= n;
  acc.enrollment /= n;
  acc.mu /= n;
  return acc;
}

enum class Metric { offenses, incarcerations, completions, population, enrollment, mu };

inline constexpr std::array<Metric, 6> kAllMetrics = {Metric::offenses,   Metric::incarcerations, Metric::completions,
                                                     Metric::population, Metric::enrollment,     Metric::mu};

inline std::string_view to_string(Metric m) noexcept {
  switch (m) {
    case Metric::offenses: return "offenses";
    case Metric::incarcerations: return "incarcerations";
    case Metric::completions: return "completions";
    case Metric::population: return "population";
    case Metric::enrollment: return "enrollment";
    case Metric::mu: return "mu";
  }
  return "?";
}

inline double get(const EpisodeMetrics& m, Metric k) noexcept {
  switch (k) {
    case Metric::offenses: return m.offenses_per_capita;
    case Metric::incarcerations: return m.incarcerations_per_capita;
    case Metric::completions: return m.completions_per_capita;
    case Metric::population: return m.population;
    case Metric::enrollment: return m.enrollment;
    case Metric::mu: return m.mu;
  }
  return 0.0;
}

inline constexpr double kNormalQuantile95 = 1.959963984540054;

/// Mean and 95% normal-approximation half-width.
struct Estimate {
  double mean = 0.0;
  double half_width = 0.0;
  std::size_t n = 0;

  double lower() const noexcept { return mean - half_width; }
  double upper() const noexcept { return mean + half_width; }
  bool covers_zero() const noexcept { return lower() <= 0.0 && upper() >= 0.0; }
};

inline Estimate estimate(const std::vector<double>& xs) {
  if (xs.size() < 2) throw DomainError("confidence interval needs at least 2 replications");
  Estimate e;
  e.n = xs.size();
  double sum = 0.0;
  for (double x : xs) sum += x;
  e.mean = sum / static_cast<double>(e.n);
  double ss = 0.0;
  for (double x : xs) ss += (x - e.mean) * (x - e.mean);
  const double sd = std::sqrt(ss / static_cast<double>(e.n - 1));
  e.half_width = kNormalQuantile95 * sd / std::sqrt(static_cast<double>(e.n));
  return e;
}

/// Per-replication window values of one metric, indexed by replication.
struct ReplicationSeries {
  std::vector<std::uint64_t> replications;
  std::vector<double> values;
};

/// Policy minus null. Paired uses per-replication differences and requires
/// identical replication ids; unpaired combines the two variances.
inline Estimate relative_to_null(const ReplicationSeries& policy, const ReplicationSeries& null, bool paired) {
  if (policy.values.size() != policy.replications.size() || null.values.size() != null.replications.size()) {
    throw AlignmentError("replication ids and values differ in length");
  }
  if (paired) {
    if (policy.replications != null.replications) {
      throw AlignmentError("paired comparison needs identical replication sets");
    }
    std::vector<double> diffs(policy.values.size());
    for (std::size_t k = 0; k < diffs.size(); ++k) diffs[k] = policy.values[k] - null.values[k];
    return estimate(diffs);
  }
  if (policy.values.size() != null.values.size()) throw AlignmentError("replication counts differ");
  const Estimate a = estimate(policy.values);
  const Estimate b = estimate(null.values);
  Estimate d;
  d.n = a.n;
  d.mean = a.mean - b.mean;
  d.half_width = std::hypot(a.half_width, b.half_width);
  return d;
}

/// Formats a delta as in a results table: "~0" when the interval covers zero.
inline std::string format_delta(const Estimate& e, int precision = 4) {
  if (e.covers_zero()) return "~0";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << e.mean;
  return os.str();
}

/// One sweep point: a stringency value with the long-term offense deltas of
/// the two risk-targeted policies.
struct CrossingPoint {
  double delta_inc = 0.0;
  double low_risk = 0.0;
  double high_risk = 0.0;
};

/// Smallest stringency at which high-risk is at least as good as low-risk,
/// interpolated linearly between the bracketing grid points.
inline std::optional<double> regime_crossing(const std::vector<CrossingPoint>& sweep) {
  if (sweep.size() < 3) throw DomainError("regime crossing needs at least 3 grid points");
  for (std::size_t k = 1; k < sweep.size(); ++k) {
    if (!(sweep[k].delta_inc > sweep[k - 1].delta_inc)) throw DomainError("regime crossing grid must be ascending");
  }
  const auto gap = [](const CrossingPoint& p) { return p.high_risk - p.low_risk; };
  if (gap(sweep.front()) <= 0.0) return sweep.front().delta_inc;
  for (std::size_t k = 1; k < sweep.size(); ++k) {
    const double g1 = gap(sweep[k]);
    if (g1 <= 0.0) {
      const double g0 = gap(sweep[k - 1]);
      const double x0 = sweep[k - 1].delta_inc;
      const double x1 = sweep[k].delta_inc;
      return x0 + (x1 - x0) * g0 / (g0 - g1);
    }
  }
  return std::nullopt;
}

/// Least-squares population slope over the trailing episodes, with a
/// two-sided z test against zero using the residual variance.
struct StationarityDiagnostic {
  double slope = 0.0;
  double standard_error = 0.0;
  std::size_t episodes = 0;
  bool trending = false;
};

inline StationarityDiagnostic stationarity(const std::vector<Snapshot>& snapshots, std::size_t trailing = 100) {
  StationarityDiagnostic d;
  const std::size_t n = std::min(trailing, snapshots.size());
  d.episodes = n;
  if (n < 3) return d;
  const std::size_t first = snapshots.size() - n;
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    mx += static_cast<double>(k);
    my += static_cast<double>(snapshots[first + k].population);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double dx = static_cast<double>(k) - mx;
    sxx += dx * dx;
    sxy += dx * (static_cast<double>(snapshots[first + k].population) - my);
  }
  d.slope = sxy / sxx;
  double rss = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double fit = my + d.slope * (static_cast<double>(k) - mx);
    const double r = static_cast<double>(snapshots[first + k].population) - fit;
    rss += r * r;
  }
  d.standard_error = std::sqrt(rss / static_cast<double>(n - 2) / sxx);
  d.trending = d.standard_error > 0.0 ? std::abs(d.slope) > kNormalQuantile95 * d.standard_error : d.slope != 0.0;
  return d;
}

inline constexpr std::string_view kEpisodeCsvHeader =
    "replication,policy,episode,population,offenses,incarcerations,completions,enrollment,mu,arrivals,returns";

inline void write_episode_rows(std::ostream& out, std::uint64_t replication, PolicyKind policy,
                               const std::vector<Snapshot>& snapshots) {
  for (const auto& s : snapshots) {
    out << replication << ',' << to_string(policy) << ',' << s.episode << ',' << s.population << ',' << s.offenses
        << ',' << s.incarcerations << ',' << s.completions << ',' << s.enrollment << ',' << csv::format(s.mu) << ','
        << s.arrivals << ',' << s.returns << '\n';
  }
}

/// Reads rows written by write_episode_rows (header included).
struct EpisodeRecord {
  std::uint64_t replication = 0;
  PolicyKind policy = PolicyKind::null;
  Snapshot snapshot;
};

inline std::vector<EpisodeRecord> read_episode_rows(std::istream& in) {
  auto rows = csv::read_rows(in);
  if (rows.empty()) throw IngestionError(0, "episode CSV: missing header");
  std::vector<EpisodeRecord> out;
  out.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r].fields;
    if (f.size() != 11) throw IngestionError(rows[r].line, "episode CSV: expected 11 columns");
    const auto policy = policy_from_string(f[1]);
    if (!policy) throw IngestionError(rows[r].line, "episode CSV: unknown policy '" + f[1] + "'");
    auto count = [&](std::size_t k) {
      const auto v = csv::parse_int(f[k]);
      if (!v || *v < 0) throw IngestionError(rows[r].line, "episode CSV: bad count in column " + std::to_string(k + 1));
      return static_cast<std::size_t>(*v);
    };
    EpisodeRecord rec;
    rec.replication = count(0);
    rec.policy = *policy;
    rec.snapshot.episode = count(2);
    rec.snapshot.population = count(3);
    rec.snapshot.offenses = count(4);
    rec.snapshot.incarcerations = count(5);
    rec.snapshot.completions = count(6);
    rec.snapshot.enrollment = count(7);
    const auto mu = csv::parse_double(f[8]);
    if (!mu) throw IngestionError(rows[r].line, "episode CSV: bad mu");
    rec.snapshot.mu = *mu;
    rec.snapshot.arrivals = count(9);
    rec.snapshot.returns = count(10);
    out.push_back(rec);
  }
  return out;
}

/// Trajectories grouped by (policy, replication), episodes in order.
using TrajectorySet = std::map<PolicyKind, std::map<std::uint64_t, std::vector<Snapshot>>>;

inline TrajectorySet group_trajectories(const std::vector<EpisodeRecord>& records) {
  TrajectorySet set;
  for (const auto& r : records) set[r.policy][r.replication].push_back(r.snapshot);
  for (auto& [policy, reps] : set) {
    for (auto& [rep, snaps] : reps) {
      std::sort(snaps.begin(), snaps.end(), [](const Snapshot& a, const Snapshot& b) { return a.episode < b.episode; });
    }
  }
  return set;
}

inline ReplicationSeries window_series(const std::map<std::uint64_t, std::vector<Snapshot>>& reps, Window w,
                                       Metric m) {
  ReplicationSeries s;
  for (const auto& [rep, snaps] : reps) {
    s.replications.push_back(rep);
    s.values.push_back(get(window_metrics(snaps, w), m));
  }
  return s;
}

/// Aggregate statistics for one policy and window at one parameter point.
struct AggregateRow {
  PolicyKind policy = PolicyKind::null;
  Window window = Window::short_term;
  std::array<Estimate, kAllMetrics.size()> levels{};
  std::array<Estimate, kAllMetrics.size()> deltas{};
};

/// Levels and paired deltas against null for every policy in the set.
inline std::vector<AggregateRow> aggregate(const TrajectorySet& set) {
  const auto null_it = set.find(PolicyKind::null);
  if (null_it == set.end()) throw AlignmentError("aggregate needs null-policy trajectories");
  std::vector<AggregateRow> rows;
  for (Window w : {Window::short_term, Window::long_term}) {
    for (const auto& [policy, reps] : set) {
      AggregateRow row;
      row.policy = policy;
      row.window = w;
      for (std::size_t k = 0; k < kAllMetrics.size(); ++k) {
        const auto series = window_series(reps, w, kAllMetrics[k]);
        row.levels[k] = estimate(series.values);
        row.deltas[k] = relative_to_null(series, window_series(null_it->second, w, kAllMetrics[k]), true);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace divsim
