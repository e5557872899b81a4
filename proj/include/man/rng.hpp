#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>

namespace man {

// Seeded generator used for every random draw in the project.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. Distributions are implemented here rather than taken from
// <random>, because the standard leaves those implementation-defined:
//   uniform()  53 high bits of one draw, scaled to [0, 1)
//   normal()   Box-Muller on two uniform() draws (cosine branch only)
//   index(n)   rejection sampling on one or more draws
// so identical seeds give identical sequences across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  std::size_t index(std::size_t n);

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

  // Textual engine state; round-trips exactly through set_state().
  std::string state() const;
  void set_state(const std::string& state);

  // Independent seed for a named sub-stream (token embeddings, shards).
  static std::uint64_t derive(std::uint64_t seed, std::string_view key);

 private:
  std::mt19937_64 engine_;
};

}  // namespace man
