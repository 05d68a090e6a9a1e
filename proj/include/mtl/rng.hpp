#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mtl {

// Deterministic random source. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; every distribution below is hand-rolled
// on top of the raw 64-bit stream so that identical seeds give identical
// samples on every platform (std::uniform_int_distribution and friends make
// no such promise).
//
// Independent streams are derived, not advanced: derive_seed() hashes the
// parent seed together with a tag, so sibling streams never interact and a
// consumer can be added without shifting any existing sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be positive. Rejection sampling keeps
  // the distribution exact and the draw count deterministic per seed.
  std::int64_t uniform_int(std::int64_t n);

  // Standard normal via Box-Muller; one spare value is cached.
  double normal();
  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::int64_t j = uniform_int(i + 1);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

  // k distinct values drawn uniformly from [0, n), in draw order.
  std::vector<std::int64_t> choose_k(std::int64_t n, std::int64_t k);

  // Child stream that is statistically independent of this one and of any
  // sibling derived with a different tag.
  Rng split(const std::string& tag, std::uint64_t index = 0) const {
    return Rng(derive_seed(seed_, tag, index));
  }

  static std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag,
                                   std::uint64_t index = 0);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mtl
