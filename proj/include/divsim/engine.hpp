#pragma once

// Discrete-event loop: arrivals, offenses, term ends, exits and returns,
// with episode boundaries that refresh the community offense rate and run the
// treatment policy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "divsim/errors.hpp"
#include "divsim/hazard.hpp"
#include "divsim/policy.hpp"
#include "divsim/population.hpp"
#include "divsim/rng.hpp"

namespace divsim {

/// Queue entry. `token` must match the owning individual's current
/// generation counter for this kind of event, otherwise the event is stale.
struct Event {
  double time = 0.0;
  std::uint64_t sequence = 0;
  IndividualId individual = 0;
  EventKind kind = EventKind::arrival;
  std::uint32_t token = 0;
};

/// Min-heap on (time, sequence): same-time events pop in insertion order.
class EventQueue {
 public:
  void push(double time, IndividualId id, EventKind kind, std::uint32_t token) {
    heap_.push(Event{time, next_sequence_++, id, kind, token});
  }
  bool empty() const noexcept { return heap_.empty(); }
  std::size_t size() const noexcept { return heap_.size(); }
  const Event& top() const { return heap_.top(); }
  Event pop() {
    Event e = heap_.top();
    heap_.pop();
    return e;
  }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const noexcept {
      return a.time != b.time ? a.time > b.time : a.sequence > b.sequence;
    }
  };
  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  std::uint64_t next_sequence_ = 0;
};

struct SimulationConfig {
  double t_max = 30000.0;
  double episode_length = 100.0;
  long capacity = 80;
  double delta_inc = 0.048;
  /// Incarceration probability for off-probation offenses; defaults to delta_inc.
  std::optional<double> delta_inc_off_probation;
  int max_returns = 30;
  /// Offenses within one term after which the individual is incarcerated.
  /// Each surviving offense raises the hazard, so with delta_inc = 0 the
  /// chain would otherwise accumulate without bound in finite time.
  std::size_t offense_chain_limit = 10000;
  double arrival_mean = 5.0;
  ProbationTermSpec probation_term;
  double off_probation_mean = 1000.0;
  std::size_t initial_population = 500;
  /// Community offense rate before the first boundary; when unset, the
  /// expected one-episode offense fraction of the cohort under the baseline.
  std::optional<double> initial_mu;
  PolicyKind policy = PolicyKind::null;
  PolicyOptions policy_options;
  BetaSpec beta = BetaSpec::homogeneous(0.342);
  std::uint64_t seed = 1;
  std::uint64_t replication = 0;
  bool resample_on_treatment = true;
  bool reset_treatment_on_return = false;

  double off_probation_delta() const noexcept { return delta_inc_off_probation.value_or(delta_inc); }
  std::size_t episode_count() const noexcept {
    return t_max >= episode_length ? static_cast<std::size_t>(std::floor(t_max / episode_length)) : 0;
  }

  void validate() const {
    auto bad = [](const std::string& what) { throw ConfigError("simulation config: " + what); };
    if (!(t_max >= 0.0) || !std::isfinite(t_max)) bad("t_max must be >= 0");
    if (!(episode_length > 0.0) || !std::isfinite(episode_length)) bad("episode_length must be > 0");
    if (capacity < 0) bad("capacity must be >= 0");
    if (!(delta_inc >= 0.0 && delta_inc <= 1.0)) bad("delta_inc must be in [0,1]");
    if (delta_inc_off_probation && !(*delta_inc_off_probation >= 0.0 && *delta_inc_off_probation <= 1.0)) {
      bad("delta_inc_off_probation must be in [0,1]");
    }
    if (max_returns < 0) bad("max_returns must be >= 0");
    if (offense_chain_limit < 1) bad("offense_chain_limit must be >= 1");
    if (!(arrival_mean > 0.0) || !std::isfinite(arrival_mean)) bad("arrival_mean must be > 0");
    if (!(off_probation_mean >= 0.0) || !std::isfinite(off_probation_mean)) bad("off_probation_mean must be >= 0");
    if (initial_mu && !(*initial_mu >= 0.0)) bad("initial_mu must be >= 0");
    if (policy_options.age_bucket_days < 0.0) bad("age bucket must be >= 0");
    probation_term.validate();
    beta.validate();
  }
};

/// End-of-episode system state.
struct Snapshot {
  std::size_t episode = 0;
  std::size_t population = 0;
  std::size_t offenses = 0;
  std::size_t enrollment = 0;  // before this boundary's assignments
  double mu = 0.0;
  std::size_t incarcerations = 0;
  std::size_t completions = 0;
  std::size_t arrivals = 0;
  std::size_t returns = 0;
  std::size_t candidates = 0;
  std::size_t assigned = 0;

  bool operator==(const Snapshot&) const = default;
};

/// Whole-run counters for conservation checks.
struct RunTotals {
  std::size_t initial_population = 0;
  std::size_t arrivals = 0;
  std::size_t completions = 0;
  std::size_t incarcerations = 0;
  std::size_t active = 0;           // in the population, not awaiting a return
  std::size_t pending_returns = 0;  // in the population with a return event queued
  std::size_t offenses = 0;
  std::size_t returns = 0;
  int max_return_count = 0;
  std::size_t max_enrollment_after_assignment = 0;
  std::size_t capacity_overrun_episodes = 0;
  std::size_t truncated_chains = 0;  // incarcerations forced by offense_chain_limit
  std::size_t events_processed = 0;
  std::size_t stale_events = 0;

  bool conserved() const noexcept {
    return arrivals + initial_population == completions + incarcerations + active + pending_returns;
  }
};

struct RunResult {
  std::vector<Snapshot> snapshots;
  RunTotals totals;
  double initial_mu = 0.0;
  double reference_median_risk = 0.0;
  std::vector<std::string> warnings;
  std::size_t warning_count = 0;
};

/// Called after every processed (non-stale) event with the updated individual.
using EventObserver = std::function<void(const Event&, const Individual&, double clock)>;

/// Expected fraction of a fresh cohort offending within one episode.
inline double model_implied_mu(const CovariateDistribution& dist, const CoefficientTable& table,
                               const BaselineHazard& base, double episode_length) {
  const double cum = base.cumulative(episode_length);
  double mu = 0.0;
  for (std::size_t k = 0; k < dist.support.size(); ++k) {
    mu += dist.weights[k] * -std::expm1(-cum * std::exp(profile_risk(dist.support[k], 0.0, table)));
  }
  return mu;
}

class Engine {
 public:
  Engine(SimulationConfig config, const CovariateDistribution& dist, CoefficientTable table, BaselineHazard base)
      : config_(std::move(config)), dist_(dist), table_(std::move(table)), base_(std::move(base)) {
    config_.validate();
    dist_.validate();
    table_.beta = config_.beta;
    table_.validate();
    cdf_ = dist_.cumulative();
  }

  void set_observer(EventObserver observer) { observer_ = std::move(observer); }

  RunResult run() {
    RunResult result;
    reset_state();
    mu_ = config_.initial_mu.value_or(model_implied_mu(dist_, table_, base_, config_.episode_length));
    result.initial_mu = mu_;

    seed_initial_population();
    result.reference_median_risk = reference_median_;
    queue_.push(arrival_stream_->exponential(config_.arrival_mean), 0, EventKind::arrival, 0);

    const std::size_t episodes = config_.episode_count();
    std::size_t processed_boundaries = 0;
    for (;;) {
      const double next_boundary = static_cast<double>(processed_boundaries + 1) * config_.episode_length;
      const bool boundary_due =
          processed_boundaries < episodes && (queue_.empty() || queue_.top().time >= next_boundary);
      if (boundary_due) {
        advance_clock(next_boundary);
        result.snapshots.push_back(episode_boundary(processed_boundaries + 1, result));
        ++processed_boundaries;
        continue;
      }
      if (queue_.empty() || queue_.top().time >= config_.t_max) break;
      dispatch(queue_.pop());
    }

    totals_.active = 0;
    totals_.pending_returns = 0;
    for (IndividualId id : active_) {
      if (agents_[id].pending_return) {
        ++totals_.pending_returns;
      } else {
        ++totals_.active;
      }
    }
    result.totals = totals_;
    result.warnings = std::move(warnings_);
    result.warning_count = warning_count_;
    return result;
  }

  const SimulationConfig& config() const noexcept { return config_; }

 private:
  struct Agent {
    Individual ind;
    AgentStream offense_rng{0};
    AgentStream incarceration_rng{0};
    AgentStream term_rng{0};
    std::uint32_t offense_token = 0;
    std::uint32_t term_token = 0;
    bool active = false;
    bool pending_return = false;
    std::size_t term_offenses = 0;
    std::size_t slot = 0;  // position in active_
  };

  struct EpisodeCounters {
    std::size_t offenses = 0;
    std::size_t incarcerations = 0;
    std::size_t completions = 0;
    std::size_t arrivals = 0;
    std::size_t returns = 0;
  };

  void reset_state() {
    agents_.clear();
    active_.clear();
    queue_ = EventQueue{};
    counters_ = EpisodeCounters{};
    totals_ = RunTotals{};
    warnings_.clear();
    warning_count_ = 0;
    clock_ = 0.0;
    const auto seed = [&](std::string_view name) { return derive_seed(config_.seed, config_.replication, name); };
    arrival_stream_.emplace(seed("arrivals"));
    covariate_stream_.emplace(seed("covariates"));
    offense_seed_ = seed("offense-times");
    incarceration_seed_ = seed("incarceration");
    term_seed_ = seed("terms");
  }

  void warn(const std::string& msg) {
    ++warning_count_;
    if (warnings_.size() < 32) warnings_.push_back("t=" + csv::format(clock_) + ": " + msg);
  }

  void advance_clock(double t) {
    if (t < clock_) {
      throw OrderingError("clock moved backwards from " + csv::format(clock_) + " to " + csv::format(t));
    }
    clock_ = t;
  }

  double untreated_risk(const Individual& ind) const {
    return compute_risk(ind.profile, ind.age_days, ind.offense_count, mu_, false, ind.risk_group, table_).value;
  }

  Agent& new_agent(const CovariateProfile& profile) {
    const auto id = static_cast<IndividualId>(agents_.size());
    Agent& a = agents_.emplace_back();
    a.ind.id = id;
    a.ind.profile = profile;
    a.ind.age_days = profile.initial_age_years * kDaysPerYear;
    a.offense_rng = AgentStream(derive_agent_seed(offense_seed_, id));
    a.incarceration_rng = AgentStream(derive_agent_seed(incarceration_seed_, id));
    a.term_rng = AgentStream(derive_agent_seed(term_seed_, id));
    return a;
  }

  void activate(Agent& a, double t) {
    a.active = true;
    a.slot = active_.size();
    active_.push_back(a.ind.id);
    start_term(a, t, false);
  }

  void deactivate(Agent& a) {
    a.active = false;
    const IndividualId moved = active_.back();
    active_[a.slot] = moved;
    agents_[moved].slot = a.slot;
    active_.pop_back();
  }

  // The initial population arrives at t = 0. Risk groups are split at the
  // median of its untreated scores (or of the cohort when it is empty).
  void seed_initial_population() {
    std::vector<CovariateProfile> profiles;
    profiles.reserve(config_.initial_population);
    for (std::size_t k = 0; k < config_.initial_population; ++k) {
      profiles.push_back(sample_profile(dist_, cdf_, *covariate_stream_));
    }
    if (profiles.empty()) {
      reference_median_ = weighted_median_risk(dist_, table_, mu_);
    } else {
      std::vector<double> scores;
      scores.reserve(profiles.size());
      for (const auto& p : profiles) {
        scores.push_back(compute_risk(p, p.initial_age_years * kDaysPerYear, 0, mu_, false, RiskGroup::high, table_).value);
      }
      reference_median_ = median_of(scores);
    }
    totals_.initial_population = profiles.size();
    for (const auto& p : profiles) {
      Agent& a = new_agent(p);
      a.ind.risk_group = classify_by_median(reference_median_, untreated_risk(a.ind));
      activate(a, 0.0);
    }
  }

  void start_term(Agent& a, double t, bool is_return) {
    TermLengths terms;
    terms.probation = config_.probation_term.sample(a.ind.profile, a.term_rng);
    terms.off_probation = config_.off_probation_mean > 0.0 ? a.term_rng.exponential(config_.off_probation_mean) : 0.0;
    const TermSchedule s = init_individual(a.ind, t, is_return, terms);
    a.term_offenses = 0;
    queue_.push(s.end_probation, a.ind.id, EventKind::end_probation, a.term_token);
    queue_.push(s.exit, a.ind.id, EventKind::exit, a.term_token);
    generate_offense(a, t);
  }

  void generate_offense(Agent& a, double t) {
    const Individual& ind = a.ind;
    const double h =
        compute_risk(ind.profile, ind.age_days, ind.offense_count, mu_, ind.treated, ind.risk_group, table_).value;
    const double gap = sample_offense_time(h, base_, a.offense_rng);
    if (t + gap < ind.exit_time) queue_.push(t + gap, ind.id, EventKind::offense, a.offense_token);
  }

  bool is_current(const Agent& a, const Event& e) const noexcept {
    if (!a.active) return false;
    return e.kind == EventKind::offense ? e.token == a.offense_token : e.token == a.term_token;
  }

  void dispatch(const Event& e) {
    advance_clock(e.time);
    if (e.kind == EventKind::arrival) {
      handle_arrival(e.time);
      ++totals_.events_processed;
      if (observer_) observer_(e, agents_.back().ind, clock_);
      return;
    }
    Agent& a = agents_.at(e.individual);
    if (!is_current(a, e)) {
      ++totals_.stale_events;
      return;
    }
    update_dynamics(a.ind, e.time, e.kind);
    switch (e.kind) {
      case EventKind::offense: handle_offense(a, e.time); break;
      case EventKind::end_probation: a.ind.off_probation = true; break;
      case EventKind::exit:
        ++counters_.completions;
        ++totals_.completions;
        deactivate(a);
        break;
      case EventKind::ret: handle_return(a, e.time); break;
      case EventKind::arrival: break;
    }
    ++totals_.events_processed;
    if (observer_) observer_(e, a.ind, clock_);
  }

  void handle_arrival(double t) {
    const CovariateProfile profile = sample_profile(dist_, cdf_, *covariate_stream_);
    Agent& a = new_agent(profile);
    a.ind.risk_group = classify_by_median(reference_median_, untreated_risk(a.ind));
    ++counters_.arrivals;
    ++totals_.arrivals;
    activate(a, t);
    queue_.push(t + arrival_stream_->exponential(config_.arrival_mean), 0, EventKind::arrival, 0);
  }

  void handle_offense(Agent& a, double t) {
    ++counters_.offenses;
    ++totals_.offenses;
    Individual& ind = a.ind;
    const double delta = ind.off_probation ? config_.off_probation_delta() : config_.delta_inc;
    const bool incarcerated = a.incarceration_rng.bernoulli(delta);
    const bool truncated = ++a.term_offenses >= config_.offense_chain_limit;
    if (truncated && !incarcerated) ++totals_.truncated_chains;
    if (incarcerated || truncated || ind.return_count >= config_.max_returns) {
      ++counters_.incarcerations;
      ++totals_.incarcerations;
      deactivate(a);
    } else if (ind.off_probation) {
      ind.off_probation = false;
      ++ind.return_count;
      totals_.max_return_count = std::max(totals_.max_return_count, ind.return_count);
      ++a.term_token;  // cancels the pending exit
      a.pending_return = true;
      queue_.push(t, ind.id, EventKind::ret, a.term_token);
    } else {
      generate_offense(a, t);
    }
  }

  void handle_return(Agent& a, double t) {
    a.pending_return = false;
    ++counters_.returns;
    ++totals_.returns;
    if (config_.reset_treatment_on_return) {
      a.ind.treated = false;
      a.ind.not_decided = true;
    }
    start_term(a, t, true);
  }

  Snapshot episode_boundary(std::size_t episode, RunResult& /*result*/) {
    const double t = clock_;
    Snapshot snap;
    snap.episode = episode;
    snap.population = active_.size();
    std::size_t enrollment = 0;
    for (IndividualId id : active_) {
      const Individual& ind = agents_[id].ind;
      if (!ind.off_probation && ind.treated) ++enrollment;
    }
    snap.enrollment = enrollment;
    mu_ = snap.population > 0 ? static_cast<double>(counters_.offenses) / static_cast<double>(snap.population) : 0.0;
    snap.mu = mu_;
    snap.offenses = counters_.offenses;
    snap.incarcerations = counters_.incarcerations;
    snap.completions = counters_.completions;
    snap.arrivals = counters_.arrivals;
    snap.returns = counters_.returns;

    std::vector<Candidate> candidates;
    for (IndividualId id : active_) {
      Individual& ind = agents_[id].ind;
      if (!ind.not_decided) continue;
      update_age(ind, t);
      candidates.push_back(Candidate{id, untreated_risk(ind), ind.age_days, !ind.off_probation});
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const Candidate& x, const Candidate& y) { return x.id < y.id; });
    snap.candidates = candidates.size();

    const long remaining = config_.capacity - static_cast<long>(enrollment);
    if (remaining < 0) ++totals_.capacity_overrun_episodes;
    const WarningSink sink = [this](const std::string& m) { warn(m); };
    const auto decisions = decide(config_.policy, candidates, remaining, config_.policy_options, sink);
    apply_treatment_assignment(decisions, remaining, t);
    snap.assigned = decisions.size();
    totals_.max_enrollment_after_assignment =
        std::max(totals_.max_enrollment_after_assignment, enrollment + decisions.size());

    for (const auto& c : candidates) agents_[c.id].ind.not_decided = false;
    counters_ = EpisodeCounters{};
    return snap;
  }

  void apply_treatment_assignment(const std::vector<IndividualId>& decisions, long remaining, double t) {
    if (static_cast<long>(decisions.size()) > std::max(remaining, 0L)) {
      throw PolicyContractError("policy selected " + std::to_string(decisions.size()) + " individuals with " +
                                std::to_string(std::max(remaining, 0L)) + " slots free");
    }
    for (IndividualId id : decisions) {
      Agent& a = agents_.at(id);
      Individual& ind = a.ind;
      if (!a.active || !ind.not_decided || ind.off_probation || ind.treated) {
        throw PolicyContractError("policy selected ineligible individual " + std::to_string(id));
      }
      ind.treated = true;
      if (config_.resample_on_treatment) {
        ++a.offense_token;
        generate_offense(a, t);
      }
    }
  }

  SimulationConfig config_;
  CovariateDistribution dist_;
  CoefficientTable table_;
  BaselineHazard base_;
  std::vector<double> cdf_;
  EventObserver observer_;

  std::vector<Agent> agents_;
  std::vector<IndividualId> active_;
  EventQueue queue_;
  EpisodeCounters counters_;
  RunTotals totals_;
  std::vector<std::string> warnings_;
  std::size_t warning_count_ = 0;
  double clock_ = 0.0;
  double mu_ = 0.0;
  double reference_median_ = 0.0;
  std::optional<CommunityStream> arrival_stream_;
  std::optional<CommunityStream> covariate_stream_;
  std::uint64_t offense_seed_ = 0;
  std::uint64_t incarceration_seed_ = 0;
  std::uint64_t term_seed_ = 0;
};

/// Runs one replication and returns the per-episode trajectory.
inline RunResult run(const SimulationConfig& config, const CovariateDistribution& dist, const CoefficientTable& table,
                     const BaselineHazard& base) {
  Engine engine(config, dist, table, base);
  return engine.run();
}

}  // namespace divsim
