#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace bisvp {

/// Run-owned deterministic generator. Conversions to floating point are
/// done here rather than through <random> distributions so that streams
/// are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);
  Rng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  int uniform_int(int lo, int hi_inclusive);
  double normal();

  // Independent child generator for a named sub-stream.
  Rng split(std::uint64_t stream);

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace bisvp
