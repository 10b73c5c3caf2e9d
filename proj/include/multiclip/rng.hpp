#pragma once

#include <cstdint>
#include <vector>

namespace multiclip {

// Seeded random source. Uses splitmix64-seeded xoshiro256** and hand-rolled
// transforms so that sequences are identical across standard libraries.
// Methods are virtual so tests can substitute an instrumented source.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  virtual ~Rng() = default;

  std::uint64_t next_u64();

  // Uniform in [lo, hi).
  virtual double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  virtual std::uint64_t index(std::uint64_t n);
  virtual double normal(double mean, double stddev);

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  // Derive an independent stream from this seed and a label.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace multiclip
