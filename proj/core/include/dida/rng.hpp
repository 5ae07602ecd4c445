#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dida {

// splitmix64 finalizer; good enough to decorrelate derived seeds.
uint64_t mix64(uint64_t x);

// Derives an independent seed from (master, tag, a, b). Used to give every
// concern (init, sampling, augmentation, mixstyle, ...) its own stream so
// consuming randomness in one place never shifts another.
uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t a = 0,
                     uint64_t b = 0);

// A named random stream. Forking derives from the construction seed, not the
// current engine state, so fork order does not matter.
class RngStream {
 public:
  explicit RngStream(uint64_t seed);

  RngStream fork(std::string_view tag, uint64_t a = 0, uint64_t b = 0) const;

  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  // Beta(a, b) via two gamma draws.
  double beta(double a, double b);
  // Inclusive on both ends.
  int64_t uniform_int(int64_t lo, int64_t hi);
  bool bernoulli(double p);

  template <typename It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

  uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace dida
