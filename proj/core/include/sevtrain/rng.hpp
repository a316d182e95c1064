#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace sevtrain {

// Deterministic random stream. Wraps std::mt19937_64 (whose output sequence
// is fixed by the standard) but supplies its own distribution functions, since
// std::uniform_*_distribution results vary across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);

  // Uniform double in [0, 1) with 53 bits of randomness.
  double uniform01();

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller (cached spare).
  double normal();

  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Textual engine state for checkpointing; restore() round-trips exactly.
  std::string save_state() const;
  void restore_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 step, used to derive decorrelated sub-seeds.
std::uint64_t splitmix64(std::uint64_t x);

// Derives a named sub-seed from a base seed (e.g. per stage, per epoch).
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

}  // namespace sevtrain
