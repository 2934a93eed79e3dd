#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace textbcs {

// Seeded random stream. Every stochastic component derives a named child
// stream from the run's root handle so streams do not interfere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  Rng derive(std::string_view stream) const;

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }

  std::uint64_t next_u64() { return engine_(); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  // Inclusive range.
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

  // Short hex digest of the current engine state.
  std::string state_digest() const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// Root handle for a run. Throws ConfigError for negative seeds.
Rng seed_all(std::int64_t seed);

}  // namespace textbcs
