#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string_view>

namespace divsim {

namespace detail {

// splitmix64 finalizer (Steele, Lea & Flood); a bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Stable 64-bit content hash, used for manifests and config fingerprints.
constexpr std::uint64_t stable_hash(std::string_view bytes) noexcept {
  return detail::mix64(detail::fnv1a64(bytes));
}

/// Deterministic substream seed for (base seed, replication, stream name).
///
/// Seeds depend only on these three inputs, never on the policy, so every
/// policy evaluated at the same replication consumes the same arrival and
/// covariate draws (common random numbers).
constexpr std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t replication,
                                    std::string_view stream_name) noexcept {
  std::uint64_t h = detail::mix64(base_seed ^ 0x5851f42d4c957f2dULL);
  h = detail::mix64(h ^ detail::mix64(replication + 0x14057b7ef767814fULL));
  return detail::mix64(h ^ detail::fnv1a64(stream_name));
}

/// Per-agent substream of a named stream.
constexpr std::uint64_t derive_agent_seed(std::uint64_t stream_seed, std::uint64_t agent) noexcept {
  return detail::mix64(stream_seed ^ detail::mix64(agent ^ 0xd1b54a32d192ed03ULL));
}

/// SplitMix64 as a UniformRandomBitGenerator. Eight bytes of state, which
/// makes it cheap enough to give every simulated individual its own stream.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit constexpr SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// Random variates on top of a 64-bit engine.
///
/// `uniform()` is strictly inside (0,1): 53-bit draws can never reach 1 and a
/// drawn 0 is redrawn, so -log(U) is always finite and positive.
template <class Engine>
class RandomStream {
 public:
  static_assert(Engine::max() == std::numeric_limits<std::uint64_t>::max() && Engine::min() == 0,
                "RandomStream requires a full-range 64-bit engine");

  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  double uniform() {
    for (;;) {
      const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
      if (u > 0.0) return u;
    }
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Exponential with the given mean; mean 0 yields 0.
  double exponential(double mean) { return -mean * std::log(uniform()); }

  bool bernoulli(double p) { return uniform() < p; }

  double lognormal(double log_mean, double log_sd) {
    return std::exp(log_mean + log_sd * standard_normal());
  }

  /// Index drawn from a cumulative weight table (last entry is the total).
  std::size_t categorical(std::span<const double> cumulative) {
    const double target = uniform() * cumulative.back();
    std::size_t lo = 0;
    std::size_t hi = cumulative.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (cumulative[mid] > target) {
        hi = mid;
      } else {
        lo = mid + 1;
      }
    }
    return lo;
  }

  Engine& engine() noexcept { return engine_; }

 private:
  // Box-Muller; one variate per call keeps consumption easy to reason about.
  double standard_normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  Engine engine_;
};

using CommunityStream = RandomStream<std::mt19937_64>;
using AgentStream = RandomStream<SplitMix64>;

}  // namespace divsim
