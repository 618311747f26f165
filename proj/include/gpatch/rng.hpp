#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace gpatch {

// A reproducible random stream. Child streams are derived from a parent seed
// by hashing a label and integer indices, so every consumer (placements,
// latents, noise, shuffles) can be reconstructed from one root seed without
// sharing mutable generator state between workers.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }

  RandomStream derive(std::string_view label,
                      std::initializer_list<std::uint64_t> indices = {}) const;

  // Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double uniform();
  double normal(double mean = 0.0, double stddev = 1.0);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t derive_seed(std::uint64_t parent, std::string_view label,
                          std::initializer_list<std::uint64_t> indices = {});

}  // namespace gpatch
